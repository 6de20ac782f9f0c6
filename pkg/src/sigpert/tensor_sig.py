"""Truncated tensor algebra and signatures of piecewise-linear paths.

Levels are stored densely and flattened in row-major word order, so the
level-k coefficient of the word (i_1, ..., i_k) (letters 1..m) sits at
``sum((i_l - 1) * m**(k - l))``.  Every object may carry leading batch
dimensions; Monte Carlo ensembles are simply signatures with batch shape (R,).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_DEPTH = 8

# Soft memory budget (bytes) for the time-vectorised signature kernel.
_CHUNK_BYTES = 96 * 2**20


def _check_depth(depth: int) -> None:
    if not 0 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in [0, {MAX_DEPTH}], got {depth}")


def word_index(word: Sequence[int], dim: int) -> int:
    """Flat position of ``word`` in the graded sequence (1, level 1, level 2, ...).

    Letters are 1-based. The empty word maps to 0.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    k = len(word)
    offset = sum(dim**j for j in range(k))
    pos = 0
    for letter in word:
        if not 1 <= letter <= dim:
            raise ValueError(f"letter {letter} out of range 1..{dim}")
        pos = pos * dim + (letter - 1)
    return offset + pos


def words(dim: int, level: int) -> list[tuple[int, ...]]:
    """All words of the given length in row-major order."""
    out: list[tuple[int, ...]] = [()]
    for _ in range(level):
        out = [w + (a,) for w in out for a in range(1, dim + 1)]
    return out


@dataclass(frozen=True, eq=False)
class MultiPath:
    """Discretely sampled path on [0, 1] with values of shape ``batch + (N+1, m)``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.size < 2:
            raise ValueError("path needs at least two sample times")
        if times[0] != 0.0 or times[-1] != 1.0:
            raise ValueError("times must start at 0 and end at 1")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if values.ndim < 2 or values.shape[-2] != times.size:
            raise ValueError(
                f"values shape {values.shape} inconsistent with {times.size} sample times"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.values.shape[:-2]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-2)

    def map(self, matrix) -> "MultiPath":
        """Apply a d x m matrix pointwise."""
        matrix = np.asarray(matrix, dtype=float)
        return MultiPath(self.times, self.values @ matrix.T)

    @classmethod
    def stack(cls, *paths: "MultiPath") -> "MultiPath":
        """Concatenate channels of paths sampled on a common grid."""
        times = paths[0].times
        for p in paths[1:]:
            if p.times.shape != times.shape or np.any(p.times != times):
                raise ValueError("paths are sampled on different grids")
        return cls(times, np.concatenate([p.values for p in paths], axis=-1))


class TruncatedSignature:
    """Element of the truncated tensor algebra T^M(R^m), possibly batched.

    ``levels[0]`` has shape ``batch`` (all ones); ``levels[k]`` has shape
    ``batch + (m**k,)`` for k >= 1.
    """

    __slots__ = ("dim", "depth", "levels")

    def __init__(self, dim: int, depth: int, levels: Sequence[np.ndarray]):
        _check_depth(depth)
        if len(levels) != depth + 1:
            raise ValueError(f"expected {depth + 1} levels, got {len(levels)}")
        levels = [np.asarray(lv, dtype=float) for lv in levels]
        batch = levels[0].shape
        for k, lv in enumerate(levels[1:], start=1):
            if lv.shape != batch + (dim**k,):
                raise ValueError(f"level {k} has shape {lv.shape}, expected {batch + (dim**k,)}")
        if not np.all(levels[0] == 1.0):
            raise ValueError("level-0 coefficient must equal 1")
        self.dim = dim
        self.depth = depth
        self.levels = levels

    @classmethod
    def identity(cls, dim: int, depth: int, batch_shape: tuple[int, ...] = ()) -> "TruncatedSignature":
        return cls(dim, depth, [np.ones(batch_shape)] + [np.zeros(batch_shape + (dim**k,)) for k in range(1, depth + 1)])

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.levels[0].shape

    def level(self, k: int) -> np.ndarray:
        """Level k as a rank-k tensor (after the batch axes)."""
        return self.levels[k].reshape(self.batch_shape + (self.dim,) * k)

    def coeff(self, word: Sequence[int]) -> np.ndarray | float:
        k = len(word)
        idx = word_index(word, self.dim) - sum(self.dim**j for j in range(k))
        out = self.levels[0] if k == 0 else self.levels[k][..., idx]
        return float(out) if out.ndim == 0 else out

    def flat(self) -> np.ndarray:
        """Graded coefficients concatenated along the last axis."""
        return np.concatenate([self.levels[0][..., None]] + self.levels[1:], axis=-1)

    def __getitem__(self, item) -> "TruncatedSignature":
        return TruncatedSignature(self.dim, self.depth, [lv[item] for lv in self.levels])

    def mean(self, axis=0) -> "TruncatedSignature":
        return TruncatedSignature(self.dim, self.depth, [lv.mean(axis=axis) for lv in self.levels])

    def to_json(self) -> dict:
        if self.batch_shape:
            raise ValueError("only unbatched signatures serialise to JSON")
        # level 0 is written as the one-element list [1.0]
        return {"dim": self.dim, "depth": self.depth, "levels": [np.atleast_1d(lv).tolist() for lv in self.levels]}

    @classmethod
    def from_json(cls, obj: dict | str) -> "TruncatedSignature":
        if isinstance(obj, str):
            obj = json.loads(obj)
        levels = [np.asarray(lv, dtype=float).reshape(-1) for lv in obj["levels"]]
        if levels and levels[0].shape != (1,):
            raise ValueError("level 0 must hold exactly one coefficient")
        return cls(int(obj["dim"]), int(obj["depth"]), [levels[0][0]] + levels[1:])

    def __repr__(self) -> str:
        return f"TruncatedSignature(dim={self.dim}, depth={self.depth}, batch_shape={self.batch_shape})"


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched tensor product of flattened levels."""
    out = a[..., :, None] * b[..., None, :]
    return out.reshape(out.shape[:-2] + (-1,))


def segment_exp(increment, depth: int) -> TruncatedSignature:
    """Signature of a straight segment: the truncated tensor exponential."""
    _check_depth(depth)
    v = np.asarray(increment, dtype=float)
    if v.ndim == 0:
        v = v[None]
    if not np.all(np.isfinite(v)):
        raise ValueError("increment must be finite")
    batch = v.shape[:-1]
    levels = [np.ones(batch)]
    cur = np.ones(batch + (1,))
    for k in range(1, depth + 1):
        cur = _outer(cur, v) / k
        levels.append(cur)
    return TruncatedSignature(v.shape[-1], depth, levels)


def chen_mul(a: TruncatedSignature, b: TruncatedSignature) -> TruncatedSignature:
    """Truncated tensor product, i.e. the signature of the concatenated path."""
    if a.dim != b.dim or a.depth != b.depth:
        raise ValueError(
            f"cannot multiply signatures with (dim, depth) {(a.dim, a.depth)} and {(b.dim, b.depth)}"
        )
    batch = np.broadcast_shapes(a.batch_shape, b.batch_shape)
    levels = [np.ones(batch)]
    for k in range(1, a.depth + 1):
        acc = a.levels[k] + b.levels[k]
        for j in range(1, k):
            acc = acc + _outer(a.levels[j], b.levels[k - j])
        levels.append(np.broadcast_to(acc, batch + (a.dim**k,)).copy())
    return TruncatedSignature(a.dim, a.depth, levels)


def inverse(sig: TruncatedSignature) -> TruncatedSignature:
    """Group inverse; for a path signature this is the signature of the reversed path."""
    inv = [np.ones(sig.batch_shape)]
    for k in range(1, sig.depth + 1):
        acc = -sig.levels[k]
        for j in range(1, k):
            acc = acc - _outer(sig.levels[j], inv[k - j])
        inv.append(acc)
    return TruncatedSignature(sig.dim, sig.depth, inv)


def _path_increments(path) -> np.ndarray:
    if isinstance(path, MultiPath):
        return path.increments
    values = np.asarray(path, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[-2] < 1:
        raise ValueError("empty path")
    return np.diff(values, axis=-2)


def signature(path, depth: int) -> TruncatedSignature:
    """Signature of the piecewise-linear interpolation of a sampled path.

    Args:
        path: a :class:`MultiPath` or an array of shape ``batch + (N+1, m)``.
        depth: truncation level M.

    Equivalent to the ordered Chen product of :func:`segment_exp` over the
    consecutive increments, but evaluated level by level with cumulative sums
    along the time axis.
    """
    _check_depth(depth)
    if not isinstance(path, MultiPath) and np.asarray(path).size == 0:
        raise ValueError("empty path")
    inc = _path_increments(path)
    if inc.shape[-2] == 0:
        raise ValueError("path has a single sample; signature needs at least one segment")
    return signature_from_increments(inc, depth)


def signature_from_increments(inc: np.ndarray, depth: int) -> TruncatedSignature:
    """Signature from an increment table of shape ``batch + (N, m)``."""
    _check_depth(depth)
    inc = np.asarray(inc, dtype=float)
    batch = inc.shape[:-2]
    n_steps, m = inc.shape[-2:]
    flat = inc.reshape((-1, n_steps, m))
    n_batch = flat.shape[0]
    per_path = 8 * n_steps * m**depth * 3 + 1
    chunk = max(1, min(n_batch, _CHUNK_BYTES // per_path))
    levels = [np.ones(n_batch)] + [np.empty((n_batch, m**k)) for k in range(1, depth + 1)]
    for start in range(0, n_batch, chunk):
        part = _signature_kernel(flat[start:start + chunk], depth)
        for k in range(1, depth + 1):
            levels[k][start:start + chunk] = part[k]
    levels = [levels[0].reshape(batch)] + [lv.reshape(batch + (m**k,)) for k, lv in enumerate(levels) if k]
    return TruncatedSignature(m, depth, levels)


def _signature_kernel(inc: np.ndarray, depth: int) -> list[np.ndarray]:
    # prefix[k][:, a] is level k over the first a segments. Segment a adds
    # sum_j prefix[k-j][:, a] (x) inc_a^{(x)j} / j!, evaluated in Horner form.
    b, n, m = inc.shape
    out = [np.ones(b)]
    prefix: list[np.ndarray | None] = [None]
    for k in range(1, depth + 1):
        step = inc / k
        for j in range(1, k):
            step = _outer(prefix[j] + step, inc) / (k - j)
        if k < depth:
            cum = np.cumsum(step, axis=1)
            prefix.append(np.concatenate([np.zeros((b, 1, m**k)), cum[:, :-1]], axis=1))
            out.append(cum[:, -1])
        else:
            out.append(step.sum(axis=1))
    return out


def apply_linear_map(sig: TruncatedSignature, matrix) -> TruncatedSignature:
    """Action of L^{(x) k} on each level; matches ``signature(L . path)``."""
    L = np.asarray(matrix, dtype=float)
    if L.ndim != 2 or L.shape[1] != sig.dim:
        raise ValueError(f"matrix shape {L.shape} incompatible with signature dim {sig.dim}")
    if not np.all(np.isfinite(L)):
        raise ValueError("matrix must be finite")
    d = L.shape[0]
    batch = sig.batch_shape
    levels = [sig.levels[0].copy()]
    for k in range(1, sig.depth + 1):
        t = sig.levels[k].reshape(batch + (sig.dim,) * k)
        # contract one tensor axis at a time: after each step the processed
        # axis moves to the end, so after k steps the order is restored
        nb = len(batch)
        for _ in range(k):
            t = np.tensordot(t, L, axes=([nb], [1]))
        levels.append(t.reshape(batch + (d**k,)))
    return TruncatedSignature(d, sig.depth, levels)


