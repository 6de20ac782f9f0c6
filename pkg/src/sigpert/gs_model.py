"""Time-scaled Gibson-Schwartz model and its order-n approximants.

All processes are built from one correlated increment table so that the
slow model (X^delta, C^delta) and every approximant are coupled pathwise.
Stochastic convolutions with deterministic kernels use left-point sums on
that table; time integrals use the trapezoid rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import numpy as np

from .tensor_sig import MultiPath

# Paths per independently seeded block; fixes the random stream of every
# path regardless of how an ensemble is chunked.
BLOCK_SIZE = 256
MIN_STEPS = 2**8


@dataclass(frozen=True)
class GSParams:
    r: float = 0.03
    s: float = 0.01
    sigma: float = 0.3
    kappa: float = 0.5
    theta: float = 0.05
    gamma: float = 0.1
    rho: float = 0.3
    c: float = 0.15
    x0: float = 0.0
    delta: float = 1.0
    maturities: tuple[float, ...] = (0.25, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "maturities", tuple(float(t) for t in self.maturities))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        # delta = 0 is the frozen-yield limit
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")
        mats = np.asarray(self.maturities)
        if mats.size == 0 or np.any(mats <= 0) or np.any(np.diff(mats) <= 0):
            raise ValueError("maturities must be positive and strictly increasing")
        for name in ("r", "s", "sigma", "kappa", "theta", "gamma", "c", "x0", "delta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def replace(self, **changes) -> "GSParams":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return GSParams(**data)

    @property
    def d(self) -> int:
        return len(self.maturities)


@dataclass(frozen=True)
class BrownianDriver:
    """Seeded correlated increments (dW1, dW2) on a uniform grid of [0, 1].

    ``path_offset`` selects a window of the infinite seeded ensemble, so
    ``driver.chunk(a, b)`` reproduces rows a..b of the full driver exactly.
    """

    seed: int
    n_steps: int = 2**12
    n_paths: int = 10_000
    rho: float = 0.0
    path_offset: int = field(default=0)

    def __post_init__(self):
        if self.n_steps < 1 or self.n_paths < 1:
            raise ValueError("n_steps and n_paths must be positive")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_steps + 1)

    def _block(self, b: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, b])
        return rng.standard_normal((BLOCK_SIZE, 2, self.n_steps))

    @cached_property
    def _normals(self) -> np.ndarray:
        lo, hi = self.path_offset, self.path_offset + self.n_paths
        parts = []
        for b in range(lo // BLOCK_SIZE, (hi - 1) // BLOCK_SIZE + 1):
            z = self._block(b)
            a0 = max(lo - b * BLOCK_SIZE, 0)
            a1 = min(hi - b * BLOCK_SIZE, BLOCK_SIZE)
            parts.append(z[a0:a1])
        return np.concatenate(parts, axis=0)

    @cached_property
    def dW1(self) -> np.ndarray:
        return math.sqrt(self.dt) * self._normals[:, 0]

    @cached_property
    def dW2(self) -> np.ndarray:
        z = self._normals
        return math.sqrt(self.dt) * (self.rho * z[:, 0] + math.sqrt(1 - self.rho**2) * z[:, 1])

    @cached_property
    def W1(self) -> np.ndarray:
        return _cumulate(self.dW1)

    @cached_property
    def W2(self) -> np.ndarray:
        return _cumulate(self.dW2)

    def chunk(self, start: int, stop: int) -> "BrownianDriver":
        stop = min(stop, self.n_paths)
        if not 0 <= start < stop:
            raise ValueError("empty chunk")
        return BrownianDriver(self.seed, self.n_steps, stop - start, self.rho, self.path_offset + start)

    def chunks(self, size: int) -> Iterator["BrownianDriver"]:
        for start in range(0, self.n_paths, size):
            yield self.chunk(start, start + size)

    def spec(self) -> dict:
        return {"seed": self.seed, "n_steps": self.n_steps, "n_paths": self.n_paths, "rho": self.rho}


def _cumulate(dw: np.ndarray) -> np.ndarray:
    out = np.zeros(dw.shape[:-1] + (dw.shape[-1] + 1,))
    np.cumsum(dw, axis=-1, out=out[..., 1:])
    return out


def cumtrapz(y: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral along the last axis, starting at 0."""
    out = np.zeros_like(y, dtype=float)
    np.cumsum(0.5 * dt * (y[..., 1:] + y[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def conv_poly(dw: np.ndarray, times: np.ndarray, k: int) -> np.ndarray:
    """Left-point sums of int_0^t (t - s)^k dW_s at every grid time.

    Uses the binomial expansion so the whole grid is one set of cumulative sums.
    """
    left = times[:-1]
    out = np.zeros(dw.shape[:-1] + (times.size,))
    for l in range(k + 1):
        partial = _cumulate(dw * left**l)
        out += math.comb(k, l) * (-1) ** l * times ** (k - l) * partial
    return out


def conv_exp(dw: np.ndarray, times: np.ndarray, rate: float) -> np.ndarray:
    """Left-point sums of int_0^t exp(-rate (t - s)) dW_s."""
    if rate == 0:
        return _cumulate(dw)
    left = times[:-1]
    # shift the exponent to keep the summands O(1)
    return np.exp(-rate * (times - 1.0)) * _cumulate(dw * np.exp(rate * (left - 1.0)))


def _as_path(times: np.ndarray, values: np.ndarray) -> MultiPath:
    return MultiPath(times, values[..., None])


def simulate_cy(params: GSParams, driver: BrownianDriver) -> np.ndarray:
    """C^delta on the driver grid, shape (R, N+1), from the closed-form OU solution."""
    t = driver.times
    a = params.delta * params.kappa
    mean = params.theta + (params.c - params.theta) * np.exp(-a * t)
    if params.gamma == 0 or params.delta == 0:
        return np.broadcast_to(mean, (driver.n_paths, t.size)).copy()
    return mean + math.sqrt(params.delta) * params.gamma * conv_exp(driver.dW2, t, a)


def spot_from_cy(params: GSParams, driver: BrownianDriver, cy: np.ndarray) -> np.ndarray:
    """x0 + int_0^t (r - sigma^2/2 - C_s) ds + sigma W1_t."""
    t = driver.times
    return (
        params.x0
        + (params.r - 0.5 * params.sigma**2) * t
        - cumtrapz(cy, driver.dt)
        + params.sigma * driver.W1
    )


def simulate_gs(params: GSParams, driver: BrownianDriver) -> tuple[MultiPath, MultiPath]:
    """Slow-scale model (X^delta, C^delta) as two 1-dim batched paths."""
    if driver.n_steps < MIN_STEPS:
        raise ValueError(f"driver grid too coarse: need at least {MIN_STEPS} steps")
    cy = simulate_cy(params, driver)
    spot = spot_from_cy(params, driver, cy)
    return _as_path(driver.times, spot), _as_path(driver.times, cy)


@dataclass(frozen=True, eq=False)
class HatTerms:
    """Correction paths C_hat^(j), X_hat^(j), j = 0..j_max, each (R, N+1)."""

    times: np.ndarray
    c_hat: list[np.ndarray]
    x_hat: list[np.ndarray]

    @property
    def j_max(self) -> int:
        return len(self.c_hat) - 1


def c_hat_term(params: GSParams, driver: BrownianDriver, j: int) -> np.ndarray:
    t = driver.times
    shape = (driver.n_paths, t.size)
    if j == 0:
        return np.full(shape, params.c)
    k, odd = divmod(j - 1, 2)
    if odd == 0:
        coef = params.gamma * (-params.kappa) ** k / math.factorial(k)
        return coef * conv_poly(driver.dW2, t, k)
    # j = 2k + 2
    coef = (params.c - params.theta) * (-params.kappa) ** (k + 1) / math.factorial(k + 1)
    return np.broadcast_to(coef * t ** (k + 1), shape).copy()


def x_hat_zero(params: GSParams, driver: BrownianDriver) -> np.ndarray:
    t = driver.times
    return params.x0 - (params.c - params.r + 0.5 * params.sigma**2) * t + params.sigma * driver.W1


def simulate_hat_terms(params: GSParams, driver: BrownianDriver, j_max: int) -> HatTerms:
    """Correction terms on the shared driver; X_hat^(j) = -int C_hat^(j) for j >= 1."""
    if not 0 <= j_max <= 12:
        raise ValueError("j_max must lie in 0..12")
    c_hat = [c_hat_term(params, driver, j) for j in range(j_max + 1)]
    x_hat = [x_hat_zero(params, driver)]
    x_hat += [-cumtrapz(c_hat[j], driver.dt) for j in range(1, j_max + 1)]
    return HatTerms(driver.times, c_hat, x_hat)


def x_hat_closed_form(params: GSParams, driver: BrownianDriver, j: int) -> np.ndarray:
    """Closed form of X_hat^(j) = -int_0^t C_hat^(j) ds (integration by parts).

    Odd orders: -gamma (-kappa)^k/(k+1)! int (t-s)^{k+1} dW2.
    Even orders: -(c - theta) (-kappa)^{k+1}/(k+2)! t^{k+2}.
    """
    if j == 0:
        return x_hat_zero(params, driver)
    t = driver.times
    k, odd = divmod(j - 1, 2)
    if odd == 0:
        coef = -params.gamma * (-params.kappa) ** k / math.factorial(k + 1)
        return coef * conv_poly(driver.dW2, t, k + 1)
    coef = -(params.c - params.theta) * (-params.kappa) ** (k + 1) / math.factorial(k + 2)
    return np.broadcast_to(coef * t ** (k + 2), (driver.n_paths, t.size)).copy()


def assemble_approx(params: GSParams, hat: HatTerms, n: int) -> tuple[MultiPath, MultiPath]:
    """(X^(n), C^(n)) = sum_{j<=n} sqrt(delta)^j (X_hat^(j), C_hat^(j))."""
    if n > hat.j_max:
        raise ValueError(f"order {n} requested but hat terms only reach {hat.j_max}")
    if n < 0:
        raise ValueError("order must be non-negative")
    eps = math.sqrt(params.delta)
    cy = hat.c_hat[0].copy()
    spot = hat.x_hat[0].copy()
    for j in range(1, n + 1):
        w = eps**j
        cy += w * hat.c_hat[j]
        spot += w * hat.x_hat[j]
    return _as_path(hat.times, spot), _as_path(hat.times, cy)


def futures_returns(spot: MultiPath, cy: MultiPath, params: GSParams, b_values=None) -> MultiPath:
    """Log futures term structure F^k = X - B(T_k) C (constant dropped).

    ``b_values`` overrides the loadings B(T_k); by default B^delta is used.
    """
    if spot.times.shape != cy.times.shape or np.any(spot.times != cy.times):
        raise ValueError("spot and convenience-yield paths are on different grids")
    if b_values is None:
        from .perturb import B_delta

        b_values = [B_delta(params.kappa, params.delta, T) for T in params.maturities]
    return MultiPath.stack(spot, cy).map(term_structure_matrix(b_values))


def term_structure_matrix(b_values) -> np.ndarray:
    """d x 2 matrix with rows (1, -B(T_k))."""
    b = np.asarray(b_values, dtype=float)
    return np.stack([np.ones_like(b), -b], axis=1)
