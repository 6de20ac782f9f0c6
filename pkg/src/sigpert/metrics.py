"""Weighted signature norms, Hardy norms and convergence-rate experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gs_model, perturb
from .gs_model import BrownianDriver, GSParams
from .tensor_sig import TruncatedSignature

_WEIGHT_TERMS = 64  # terms of the weight normaliser; the series converges super-exponentially


# --- weighted signature norm -----------------------------------------------

def _raw_weight(m: int) -> float:
    return 2.0 ** (m * (1 - m) / 2)


WEIGHT_NORMALIZER = math.fsum(_raw_weight(m) for m in range(1, _WEIGHT_TERMS))


@dataclass(frozen=True)
class WeightSpec:
    """Level weights w_1..w_M and their normaliser."""

    weights: tuple[float, ...]
    normalizer: float = 1.0

    @classmethod
    def default(cls, max_level: int = 8) -> "WeightSpec":
        return cls(tuple(_raw_weight(m) / WEIGHT_NORMALIZER for m in range(1, max_level + 1)), WEIGHT_NORMALIZER)

    def __post_init__(self):
        if any(w < 0 or not math.isfinite(w) for w in self.weights):
            raise ValueError("weights must be finite and non-negative")

    def weight(self, m: int) -> float:
        return self.weights[m - 1]


def tail_weight(depth: int) -> float:
    """sum_{m > depth} w_m / m! for the default weights.

    Bounds the omitted levels when every coordinate there has unit L^p norm.
    """
    return math.fsum(_raw_weight(m) / WEIGHT_NORMALIZER / math.factorial(m) for m in range(depth + 1, _WEIGHT_TERMS))


@dataclass(frozen=True)
class SigSequenceSample:
    """R samples of a truncated signature sequence (Y_0, level 1, ..., level M)."""

    dim: int
    depth: int
    levels: tuple[np.ndarray, ...]  # levels[0]: (R,), levels[k]: (R, dim**k)

    def __post_init__(self):
        lv = tuple(np.asarray(a, dtype=float) for a in self.levels)
        if len(lv) != self.depth + 1:
            raise ValueError("need one array per level 0..depth")
        R = lv[0].shape[0] if lv[0].ndim else 0
        if R == 0:
            raise ValueError("sample is empty")
        if lv[0].shape != (R,):
            raise ValueError("level 0 must have shape (R,)")
        for k in range(1, self.depth + 1):
            if lv[k].shape != (R, self.dim**k):
                raise ValueError(f"level {k} has shape {lv[k].shape}, expected {(R, self.dim**k)}")
        if not all(np.all(np.isfinite(a)) for a in lv):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "levels", lv)

    @property
    def n_samples(self) -> int:
        return self.levels[0].shape[0]

    @classmethod
    def from_signature(cls, sig: TruncatedSignature) -> "SigSequenceSample":
        R = int(np.prod(sig.batch_shape)) if sig.batch_shape else 1
        levels = [np.reshape(sig.levels[0], (R,))]
        levels += [np.reshape(sig.levels[k], (R, -1)) for k in range(1, sig.depth + 1)]
        return cls(sig.dim, sig.depth, tuple(levels))

    @classmethod
    def difference(cls, a: TruncatedSignature, b: TruncatedSignature) -> "SigSequenceSample":
        sa, sb = cls.from_signature(a), cls.from_signature(b)
        if (sa.dim, sa.depth, sa.n_samples) != (sb.dim, sb.depth, sb.n_samples):
            raise ValueError("signature ensembles are not comparable")
        return cls(sa.dim, sa.depth, tuple(x - y for x, y in zip(sa.levels, sb.levels)))

    def scale(self, c: float) -> "SigSequenceSample":
        return SigSequenceSample(self.dim, self.depth, tuple(c * a for a in self.levels))


def level_factors(dim: int, depth: int, weights: WeightSpec | None = None) -> np.ndarray:
    """Per-level multipliers w_m / (m! d^m), index 0 for Y_0 (= 1)."""
    weights = weights or WeightSpec.default(max(depth, 1))
    if len(weights.weights) < depth:
        raise ValueError("weight spec shorter than signature depth")
    return np.array([1.0] + [weights.weight(m) / (math.factorial(m) * dim**m) for m in range(1, depth + 1)])


def weighted_norm_from_moments(moments: list[np.ndarray], dim: int, p: float, weights: WeightSpec | None = None) -> float:
    """Norm from per-coordinate p-th absolute moments, moments[k] shaped (dim**k,)."""
    f = level_factors(dim, len(moments) - 1, weights)
    total = float(np.mean(moments[0]) ** (1 / p))
    for k in range(1, len(moments)):
        total += f[k] * float(np.sum(np.asarray(moments[k]) ** (1 / p)))
    return total


def weighted_sig_norm(sample: SigSequenceSample, p: float = 2.0, weights: WeightSpec | None = None) -> float:
    """Empirical weighted signature L^p norm of a truncated ensemble.

    Levels above the sample depth are omitted; see ``tail_weight`` for their
    size under unit coordinates.
    """
    if not p >= 1:
        raise ValueError("p must be at least 1")
    moments = [np.mean(np.abs(a) ** p, axis=0) for a in sample.levels]
    moments[0] = np.atleast_1d(moments[0])
    return weighted_norm_from_moments(moments, sample.dim, p, weights)


# --- Hardy norm --------------------------------------------------------------

@dataclass(frozen=True)
class HardyDecomposition:
    """Y = y0 + M + A summarised by <M>_1 and the total variation of A.

    Both may be scalars (deterministic) or per-path arrays.
    """

    y0: float
    quadratic_variation: np.ndarray | float
    total_variation: np.ndarray | float

    def __post_init__(self):
        qv = np.asarray(self.quadratic_variation, dtype=float)
        tv = np.asarray(self.total_variation, dtype=float)
        if np.any(qv < 0) or np.any(tv < 0):
            raise ValueError("quadratic and total variation must be non-negative")

    @classmethod
    def from_paths(cls, martingale: np.ndarray, finite_variation: np.ndarray, y0: float = 0.0) -> "HardyDecomposition":
        """Discrete estimates from sampled parts, each (R, N+1) with zero start."""
        m = np.atleast_2d(martingale)
        a = np.atleast_2d(finite_variation)
        if np.any(m[:, 0] != 0) or np.any(a[:, 0] != 0):
            raise ValueError("martingale and finite-variation parts must start at 0")
        qv = np.sum(np.diff(m, axis=1) ** 2, axis=1)
        tv = np.sum(np.abs(np.diff(a, axis=1)), axis=1)
        return cls(y0, qv, tv)


def hardy_norm(decomp: HardyDecomposition, p: float = 2.0) -> float:
    """|y0| + E[<M>_1^{p/2}]^{1/p} + E[TV(A)^p]^{1/p}."""
    if not p >= 1:
        raise ValueError("p must be at least 1")
    qv = np.asarray(decomp.quadratic_variation, dtype=float)
    tv = np.asarray(decomp.total_variation, dtype=float)
    mart = float(np.mean(qv ** (p / 2)) ** (1 / p))
    fv = float(np.mean(tv**p) ** (1 / p))
    return abs(decomp.y0) + mart + fv


def exp_remainder(x, m: int):
    """e^{-x} - sum_{k<=m} (-x)^k / k!, stable for small x; m = -1 gives e^{-x}."""
    x = np.asarray(x, dtype=float)
    if m < 0:
        return np.exp(-x)
    direct = np.exp(-x) - sum((-x) ** k / math.factorial(k) for k in range(m + 1))
    # tail series where cancellation would hurt
    series = np.zeros_like(x)
    term = (-x) ** (m + 1) / math.factorial(m + 1)
    for k in range(m + 1, m + 60):
        series = series + term
        term = term * (-x) / (k + 1)
    return np.where(np.abs(x) < 4.0, series, direct)


def _gauss_nodes(panels: int, order: int = 16):
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + 0.5 * h[:, None] * (g[None, :] + 1)).ravel()
    weights = (0.5 * h[:, None] * w[None, :]).ravel()
    return nodes, weights


def _cy_kernel_orders(n: int) -> tuple[int, int]:
    """Highest Taylor orders kept in C^(n) for the noise and drift kernels."""
    return (n + 1) // 2 - 1, n // 2


def cy_error_decomposition(params: GSParams, n: int, panels: int = 8) -> HardyDecomposition:
    """Deterministic Hardy decomposition of Y = C^delta - C^(n).

    Y_1 = D(1) + int_0^1 g(1 - s) dW2_s with g the noise kernel e^{-a u}
    minus its Taylor polynomial.  M is the martingale u -> int_0^u g(1 - s) dW2_s,
    so <M>_1 = delta gamma^2 int g^2 = Var(Y_1); A is the mean path
    D(t) = (c - theta) (e^{-a t} minus its Taylor polynomial).
    """
    a = params.delta * params.kappa
    k_noise, k_drift = _cy_kernel_orders(n)
    s, w = _gauss_nodes(panels)
    g = exp_remainder(a * (1 - s), k_noise)
    qv = params.delta * params.gamma**2 * float(np.dot(w, g**2))
    # |d/dt D| = |c - theta| a |R_{k-1}(a t)|
    tv = abs(params.c - params.theta) * a * float(np.dot(w, np.abs(exp_remainder(a * s, k_drift - 1))))
    return HardyDecomposition(0.0, qv, tv)


def cy_error_moments(params: GSParams, n: int, t) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of C^delta_t - C^(n)_t (Gaussian) on an array of times."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a = params.delta * params.kappa
    k_noise, k_drift = _cy_kernel_orders(n)
    mean = (params.c - params.theta) * exp_remainder(a * t, k_drift)
    var = np.empty_like(t)
    s, w = _gauss_nodes(8)
    for i, ti in enumerate(t):
        u = ti * s
        var[i] = params.delta * params.gamma**2 * ti * float(np.dot(w, exp_remainder(a * u, k_noise) ** 2))
    return mean, var


def spot_error_bound(params: GSParams, n: int, p: float = 2.0, panels: int = 8, hermite: int = 40) -> float:
    """Upper bound on ||X^delta - X^(n)||_{H^p}.

    The error is -int (C^delta - C^(n)) ds, pure finite variation, so its TV is
    int |Y_s| ds and Minkowski gives E[TV^p]^{1/p} <= int ||Y_s||_p ds with Y_s
    Gaussian of known mean and variance.
    """
    s, w = _gauss_nodes(panels)
    mean, var = cy_error_moments(params, n, s)
    z, wz = np.polynomial.hermite_e.hermegauss(hermite)
    wz = wz / wz.sum()
    lp = (np.abs(mean[:, None] + np.sqrt(var)[:, None] * z[None, :]) ** p @ wz) ** (1 / p)
    return float(np.dot(w, lp))


# --- fits --------------------------------------------------------------------

@dataclass
class FitResult:
    slope: float
    intercept: float
    rmse: float
    dropped: list[float] = field(default_factory=list)
    slope_se: float | None = None

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "slope_se": self.slope_se, "rmse": self.rmse, "dropped_deltas": self.dropped}


def _ols(x, y):
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(coef[1]), resid


def loglog_slope(x, y) -> float:
    return _ols(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)))[0]


def fit_rate(deltas, values) -> FitResult:
    """OLS of log(value) on log(delta), dropping the largest delta once if it
    sits more than 2 RMSE off the line."""
    d = np.asarray(deltas, dtype=float)
    v = np.asarray(values, dtype=float)
    if d.size < 3 or np.any(d <= 0) or np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("degenerate fit: need >= 3 positive finite points")
    x, y = np.log(d), np.log(v)
    slope, icept, resid = _ols(x, y)
    rmse = float(np.sqrt(np.mean(resid**2)))
    i = int(np.argmax(d))
    if rmse > 0 and abs(resid[i]) > 2 * rmse and d.size > 3:
        keep = np.arange(d.size) != i
        slope, icept, resid = _ols(x[keep], y[keep])
        return FitResult(slope, icept, float(np.sqrt(np.mean(resid**2))), [float(d[i])])
    return FitResult(slope, icept, rmse)


# --- rate experiments ---------------------------------------------------------

@dataclass
class RateTable:
    """Rows (n, delta, norm, se) and one fit per n."""

    name: str
    rows: list[dict]
    fits: dict
    expected: dict
    extra: dict = field(default_factory=dict)

    def passed(self, tol: float) -> dict:
        return {k: abs(self.fits[k].slope - self.expected[k]) <= tol for k in self.fits}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "rows": self.rows,
            "fits": {str(k): f.to_json() for k, f in self.fits.items()},
            "expected_slopes": {str(k): v for k, v in self.expected.items()},
            **self.extra,
        }


def _check_grid(delta_list, min_points=5):
    d = np.asarray(delta_list, dtype=float)
    if d.size < min_points:
        raise ValueError(f"delta grid needs at least {min_points} points")
    if np.any(d <= 0) or np.any(d > 1):
        raise ValueError("deltas must lie in (0, 1]")
    r = d[1:] / d[:-1]
    if not np.allclose(r, r[0]):
        raise ValueError("delta grid must be geometric")


def rate_experiment_prop32(params: GSParams, n_list, delta_list, p: float = 2.0) -> RateTable:
    """Deterministic Hardy norms of the yield and spot errors against delta."""
    _check_grid(delta_list)
    rows, fits, expected, constants = [], {}, {}, {}
    domination = True
    for n in n_list:
        c_norms = []
        for delta in delta_list:
            q = params.replace(delta=float(delta))
            cn = hardy_norm(cy_error_decomposition(q, n), p)
            xb = spot_error_bound(q, n, p)
            domination &= xb <= cn
            c_norms.append(cn)
            rows.append({"n": n, "delta": float(delta), "norm": cn, "se": 0.0, "spot_bound": xb, "dominated": xb <= cn})
        fits[n] = fit_rate(delta_list, c_norms)
        expected[n] = (n + 1) / 2
        ratios = np.array(c_norms) / np.sqrt(np.asarray(delta_list, float)) ** (n + 1)
        constants[n] = {"K": float(ratios.max()), "spread": float(ratios.max() / ratios.min())}
    return RateTable("prop32", rows, fits, expected, {"domination": bool(domination), "p": p, "rate_constants": {str(k): v for k, v in constants.items()}})


def _bootstrap_counts(R: int, n_boot: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0xB007])
    idx = rng.integers(0, R, size=(n_boot, R))
    counts = np.zeros((n_boot, R))
    for b in range(n_boot):
        counts[b] = np.bincount(idx[b], minlength=R)
    return counts / R


def _flat_levels(sig: TruncatedSignature) -> np.ndarray:
    """Levels 1..M concatenated, shape (R, n_coords)."""
    return np.concatenate([sig.levels[k] for k in range(1, sig.depth + 1)], axis=1)


def _norms_from_abs_moments(moments: np.ndarray, dim: int, depth: int, p: float) -> np.ndarray:
    """Weighted norm (Y0 difference is zero) from (..., n_coords) moments."""
    f = level_factors(dim, depth)
    per = np.concatenate([np.full(dim**k, f[k]) for k in range(1, depth + 1)])
    return (moments ** (1 / p)) @ per


class _DiffAccumulator:
    """Collects per-path coordinate differences for each experiment cell."""

    def __init__(self):
        self.cells: dict = {}

    def add(self, key, diff: np.ndarray):
        self.cells.setdefault(key, []).append(diff)

    def get(self, key) -> np.ndarray:
        return np.concatenate(self.cells[key], axis=0)


def _cell_norms(diffs: np.ndarray, dim: int, depth: int, p: float, counts: np.ndarray):
    a = np.abs(diffs) ** p
    norm = float(_norms_from_abs_moments(a.mean(axis=0), dim, depth, p))
    boot = _norms_from_abs_moments(counts @ a, dim, depth, p)
    return norm, boot


def _fit_with_bootstrap(deltas, norms, boot) -> FitResult:
    fit = fit_rate(deltas, norms)
    keep = [i for i, d in enumerate(deltas) if float(d) not in fit.dropped]
    x = np.log(np.asarray(deltas, float)[keep])
    y = np.log(np.asarray(boot)[:, keep])
    xc = x - x.mean()
    slopes = (y - y.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
    fit.slope_se = float(np.std(slopes, ddof=1))
    return fit


def rate_experiment_thm33(
    params: GSParams,
    driver: BrownianDriver,
    n_list,
    delta_list,
    p: float = 2.0,
    depth: int = 3,
    chunk_size: int = 250,
    p_sweep=(),
    n_boot: int = 200,
) -> RateTable:
    """MC weighted norms of S(F^delta) - S(F^(n)) on one shared driver."""
    _check_grid(delta_list)
    if driver.n_paths < 1000:
        raise ValueError("ensemble too small: need R >= 1000")
    j_max = max(n_list)
    acc = _DiffAccumulator()
    for chunk in driver.chunks(chunk_size):
        hat = gs_model.simulate_hat_terms(params, chunk, j_max)
        for delta in delta_list:
            q = params.replace(delta=float(delta))
            exact = perturb.signature_model(q, chunk, depth)
            ref = _flat_levels(exact)
            for n in n_list:
                approx = perturb.signature_approx(q, chunk, n, depth, hat=hat)
                acc.add((n, float(delta)), ref - _flat_levels(approx))
    counts = _bootstrap_counts(driver.n_paths, n_boot, driver.seed)
    rows, fits, expected, sweep = [], {}, {}, []
    dim = params.d
    for n in n_list:
        norms, boots = [], []
        for delta in delta_list:
            diffs = acc.get((n, float(delta)))
            norm, boot = _cell_norms(diffs, dim, depth, p, counts)
            norms.append(norm)
            boots.append(boot)
            rows.append({"n": n, "delta": float(delta), "norm": norm, "se": float(np.std(boot, ddof=1))})
        fits[n] = _fit_with_bootstrap(delta_list, norms, np.stack(boots, axis=1))
        expected[n] = (n + 1) / 2
    if p_sweep:
        n0, d0 = n_list[0], float(delta_list[len(delta_list) // 2])
        diffs = acc.get((n0, d0))
        for pp in p_sweep:
            norm, boot = _cell_norms(diffs, dim, depth, pp, counts)
            sweep.append({"p": pp, "n": n0, "delta": d0, "norm": norm, "se": float(np.std(boot, ddof=1))})
    diagnostics = [f"slope s.e. {f.slope_se:.3f} > 0.1 for n={n}: ensemble under-resolved" for n, f in fits.items() if f.slope_se > 0.1]
    return RateTable("thm33", rows, fits, expected, {"p": p, "depth": depth, "R": driver.n_paths, "p_sweep": sweep, "diagnostics": diagnostics})


def rate_experiment_cor34(
    params: GSParams,
    driver: BrownianDriver,
    delta_list,
    p: float = 2.0,
    depth: int = 3,
    chunk_size: int = 250,
    n_boot: int = 200,
) -> RateTable:
    """MC weighted norm of S(F^delta) minus the expansion through order 3/2."""
    _check_grid(delta_list)
    degenerate = params.gamma == 0 and params.c == params.theta
    acc = _DiffAccumulator()
    for chunk in driver.chunks(chunk_size):
        basis = perturb.expansion_basis(params, chunk, depth)
        for delta in delta_list:
            q = params.replace(delta=float(delta))
            ref = _flat_levels(perturb.signature_model(q, chunk, depth))
            acc.add(float(delta), ref - _flat_levels(perturb.expansion_eval(basis, q, delta=float(delta))))
    counts = _bootstrap_counts(driver.n_paths, n_boot, driver.seed)
    rows, norms, boots = [], [], []
    for delta in delta_list:
        norm, boot = _cell_norms(acc.get(float(delta)), params.d, depth, p, counts)
        norms.append(norm)
        boots.append(boot)
        rows.append({"delta": float(delta), "norm": norm, "se": float(np.std(boot, ddof=1))})
    extra = {"p": p, "depth": depth, "R": driver.n_paths, "degenerate": degenerate}
    if degenerate:
        extra["skipped"] = "gamma = 0 and c = theta: expansion is exact up to discretisation noise; slope test skipped"
        return RateTable("cor34", rows, {}, {}, extra)
    fit = _fit_with_bootstrap(delta_list, norms, np.stack(boots, axis=1))
    return RateTable("cor34", rows, {"residual": fit}, {"residual": 2.0}, extra)
