"""Reference computations that share no code with the library."""

import itertools
import math

import numpy as np


def _kahan_cumsum(inc: np.ndarray) -> np.ndarray:
    """Compensated running sum along axis 0, starting at 0."""
    out = np.zeros((inc.shape[0] + 1,) + inc.shape[1:])
    s = np.zeros(inc.shape[1:])
    comp = np.zeros(inc.shape[1:])
    for i in range(inc.shape[0]):
        y = inc[i] - comp
        t = s + y
        comp = (t - s) - y
        s = t
        out[i + 1] = s
    return out


def nested_trapezoid_signature(x: np.ndarray, depth: int) -> dict:
    """Iterated integrals of a sampled path by nested trapezoid quadrature.

    x has shape (N+1, m). Returns {word (0-based tuple): value at t=1}.
    Every level is integrated against dx with the trapezoid rule on the
    running integrals of the previous level.
    """
    m = x.shape[1]
    dx = np.diff(x, axis=0)
    out = {(): 1.0}
    running = {(): np.ones(x.shape[0])}
    for k in range(1, depth + 1):
        prev = list(itertools.product(range(m), repeat=k - 1))
        new_words = [w + (i,) for w in prev for i in range(m)]
        # integrand (N+1, W) and integrator (N, W)
        f = np.stack([running[w[:-1]] for w in new_words], axis=1)
        g = np.stack([dx[:, w[-1]] for w in new_words], axis=1)
        inc = 0.5 * (f[1:] + f[:-1]) * g
        cum = _kahan_cumsum(inc)
        running = {w: cum[:, j] for j, w in enumerate(new_words)}
        out.update({w: float(cum[-1, j]) for j, w in enumerate(new_words)})
    return out


def segment_product_signature(increments, depth: int) -> dict:
    """Signature of a piecewise-linear path by brute-force multiplication of
    tensor exponentials stored as word dictionaries."""
    m = len(increments[0])
    words = [w for k in range(depth + 1) for w in itertools.product(range(m), repeat=k)]

    def exp(v):
        return {w: math.prod(v[i] for i in w) / math.factorial(len(w)) for w in words}

    total = {w: (1.0 if w == () else 0.0) for w in words}
    for v in increments:
        e = exp(v)
        total = {
            w: sum(total[w[:j]] * e[w[j:]] for j in range(len(w) + 1))
            for w in words
        }
    return total
