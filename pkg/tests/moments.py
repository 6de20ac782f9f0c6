"""Chunked Monte Carlo moments of the yield process over 10^5 paths."""

import functools

import numpy as np

from sigpert import gs_model as gm

N_PATHS = 100_000
N_STEPS = 1024


@functools.lru_cache(maxsize=None)
def _samples(params, times, which, seed):
    d = gm.BrownianDriver(seed, N_STEPS, N_PATHS, params.rho)
    idx = [int(round(t * N_STEPS)) for t in times]
    out = []
    for c in d.chunks(5000):
        if which == "c":
            x = gm.simulate_cy(params, c)
        elif which == "c_hat1":
            x = gm.c_hat_term(params, c, 1)
        elif which == "c1":
            x = gm.assemble_approx(params, gm.simulate_hat_terms(params, c, 1), 1)[1].values[..., 0]
        else:
            raise ValueError(which)
        out.append(x[:, idx])
    return np.concatenate(out)


def ou_terminal_moments(params, times, which="c", seed=12345):
    """Sample mean, its s.e., sample variance and its s.e. at each time."""
    x = _samples(params, tuple(times), which, seed)
    n = x.shape[0]
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1)
    m4 = np.mean((x - mean) ** 4, axis=0)
    return mean, np.sqrt(var / n), var, np.sqrt((m4 - var**2) / n)
