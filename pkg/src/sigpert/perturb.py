"""Expansion of the term-structure signature in powers of sqrt(delta).

The futures path is a linear image of (X, C), so its signature is the
level-wise tensor power of the loading matrix applied to the signature of
(X, C).  For the expansion the same idea is pushed one step further: the
order-3 approximant F^(3) is a linear image, with loadings polynomial in
eps = sqrt(delta), of a 7-channel path whose channels do not involve
gamma, kappa or theta.  Multiplying out the loadings and collecting powers of
eps gives the expansion terms exactly; the channel signatures are the
Monte Carlo "E-term" samples.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import gs_model
from .gs_model import BrownianDriver, GSParams, cumtrapz, conv_poly
from .tensor_sig import MultiPath, TruncatedSignature, apply_linear_map, signature, words


def B_delta(kappa: float, delta: float, T: float) -> float:
    """(1 - exp(-delta kappa T)) / (delta kappa); equals T at delta = 0."""
    a = delta * kappa
    if a == 0:
        return float(T)
    return float(-math.expm1(-a * T) / a)


def B_trunc(kappa: float, delta: float, T: float, n: int) -> float:
    """Partial sum T * sum_{j<=n} (-kappa T)^j delta^j / (j+1)!."""
    if n < 0:
        raise ValueError("truncation order must be non-negative")
    return float(T * sum((-kappa * T * delta) ** j / math.factorial(j + 1) for j in range(n + 1)))


def vasicek_A(kappa: float, theta: float, gamma: float, T: float) -> float:
    """Affine bond-price factor; E[exp(-int_0^T C)] = A(T) exp(-B(T) c)."""
    B = B_delta(kappa, 1.0, T)
    return math.exp((theta - gamma**2 / (2 * kappa**2)) * (B - T) - gamma**2 / (4 * kappa) * B**2)


def loadings(params: GSParams, trunc: int | None = None) -> list[float]:
    if trunc is None:
        return [B_delta(params.kappa, params.delta, T) for T in params.maturities]
    return [B_trunc(params.kappa, params.delta, T, trunc) for T in params.maturities]


def lift_term_structure(sig_xc: TruncatedSignature, params: GSParams, use_trunc_B: int | None = None) -> TruncatedSignature:
    """Signature of F^k = X - B(T_k) C from the signature of (X, C).

    With ``use_trunc_B = n`` the loadings are B^(floor(n/2)), as in the
    order-n approximant.
    """
    if sig_xc.dim != 2:
        raise ValueError(f"expected a signature over (X, C), got dim {sig_xc.dim}")
    trunc = None if use_trunc_B is None else use_trunc_B // 2
    return apply_linear_map(sig_xc, gs_model.term_structure_matrix(loadings(params, trunc)))


def signature_model(params: GSParams, driver: BrownianDriver, depth: int) -> TruncatedSignature:
    """S(F^delta) over the driver ensemble."""
    spot, cy = gs_model.simulate_gs(params, driver)
    return lift_term_structure(signature(MultiPath.stack(spot, cy), depth), params)


def signature_approx(params: GSParams, driver: BrownianDriver, n: int, depth: int, hat=None) -> TruncatedSignature:
    """S(F^(n)) over the driver ensemble; ``hat`` may carry precomputed terms."""
    if not 0 <= n <= 12:
        raise ValueError("order must lie in 0..12")
    if hat is None:
        hat = gs_model.simulate_hat_terms(params, driver, n)
    spot, cy = gs_model.assemble_approx(params, hat, n)
    return lift_term_structure(signature(MultiPath.stack(spot, cy), depth), params, use_trunc_B=n)


# --- expansion -------------------------------------------------------------

BASIS_CHANNELS = (
    "spot",        # X_hat^(0): -(c - r + sigma^2/2) t + sigma W1
    "w2",          # W2 = C_hat^(1) / gamma
    "time",        # t = C_hat^(2) / (kappa (theta - c))
    "conv1",       # int (t-s) dW2 = -C_hat^(3) / (kappa gamma)
    "int_w2",      # int_0^t W2 = -X_hat^(1) / gamma
    "half_time_sq",  # t^2 / 2 = -X_hat^(2) / (kappa (theta - c))
    "int_conv1",   # int_0^t conv1 = X_hat^(3) / (kappa gamma)
)

# Monomials gamma^a kappa^b (theta - c)^e are stored as exponent tuples (a, b, e).
Monomial = tuple[int, int, int]
ONE: Monomial = (0, 0, 0)
GAMMA: Monomial = (1, 0, 0)
KAPPA_THETA: Monomial = (0, 1, 1)
KAPPA_GAMMA: Monomial = (1, 1, 0)

# Paper-style labels for the groups that appear through order 3/2.
LABELS: dict[tuple[int, Monomial], str] = {
    (0, ONE): "E0",
    (1, GAMMA): "E11",
    (2, (2, 0, 0)): "E21",
    (2, KAPPA_THETA): "E22",
    (3, (3, 0, 0)): "E31",
    (3, KAPPA_GAMMA): "E33",
    (3, (1, 1, 1)): "E34",
}


def monomial_str(mono: Monomial) -> str:
    parts = []
    for name, e in zip(("gamma", "kappa", "(theta-c)"), mono):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return "*".join(parts) or "1"


def monomial_value(mono: Monomial, params: GSParams) -> float:
    a, b, e = mono
    return params.gamma**a * params.kappa**b * (params.theta - params.c) ** e


def loading_terms(maturities) -> dict[tuple[int, Monomial], np.ndarray]:
    """Loadings of F^(3) on the basis channels, split by (eps order, monomial).

    F_k = spot - eps gamma int_w2 - eps^2 kappa(theta-c) half_time_sq
          + eps^3 kappa gamma int_conv1
          - (T_k - eps^2 kappa T_k^2 / 2) (eps gamma w2 + eps^2 kappa(theta-c) time
                                           - eps^3 kappa gamma conv1)
    Each value is a d x 7 matrix of parameter-free factors.
    """
    T = np.asarray(maturities, dtype=float)
    d = T.size
    ch = {name: i for i, name in enumerate(BASIS_CHANNELS)}
    out: dict[tuple[int, Monomial], np.ndarray] = defaultdict(lambda: np.zeros((d, len(BASIS_CHANNELS))))

    def put(order, mono, channel, factor):
        out[(order, mono)][:, ch[channel]] += factor

    put(0, ONE, "spot", 1.0)
    put(1, GAMMA, "int_w2", -1.0)
    put(2, KAPPA_THETA, "half_time_sq", -1.0)
    put(3, KAPPA_GAMMA, "int_conv1", 1.0)
    put(1, GAMMA, "w2", -T)
    put(3, KAPPA_GAMMA, "w2", 0.5 * T**2)
    put(2, KAPPA_THETA, "time", -T)
    put(4, (0, 2, 1), "time", 0.5 * T**2)
    put(3, KAPPA_GAMMA, "conv1", T)
    put(5, (1, 2, 0), "conv1", -0.5 * T**2)
    return dict(out)


def basis_paths(params: GSParams, driver: BrownianDriver) -> MultiPath:
    """The 7-channel basis path; depends on c, r, sigma and the driver only."""
    t = driver.times
    dt = driver.dt
    R = driver.n_paths
    w2 = driver.W2
    conv1 = conv_poly(driver.dW2, t, 1)
    time = np.broadcast_to(t, (R, t.size))
    half_tsq = np.broadcast_to(cumtrapz(t, dt), (R, t.size))
    channels = [
        gs_model.x_hat_zero(params, driver) - params.x0,
        w2,
        time,
        conv1,
        cumtrapz(w2, dt),
        half_tsq,
        cumtrapz(conv1, dt),
    ]
    return MultiPath(t, np.stack(channels, axis=-1))


def _coefficient_maps(maturities, depth: int, max_order: int | None):
    """Per level k, {(order, monomial): (d^k x 7^k) matrix} for F-words vs channel words."""
    terms = loading_terms(maturities)
    d = len(maturities)
    maps = [{(0, ONE): np.ones((1, 1))}]
    for _ in range(depth):
        new: dict = defaultdict(lambda: 0.0)
        for (o1, m1), G in maps[-1].items():
            for (o2, m2), E in terms.items():
                o = o1 + o2
                if max_order is not None and o > max_order:
                    continue
                mono = tuple(a + b for a, b in zip(m1, m2))
                new[(o, mono)] = new[(o, mono)] + np.kron(G, E)
        maps.append(dict(new))
    del d
    return maps


@dataclass
class ExpansionTerm:
    """One (order, monomial) group of the expansion.

    ``sample[k]`` holds the basis coordinates of level k, shape (R, d^k);
    ``order`` is the power of sqrt(delta).
    """

    order: int
    monomial: Monomial
    sample: list[np.ndarray]
    label: str = ""

    @property
    def delta_power(self) -> float:
        return self.order / 2

    @property
    def coefficient(self) -> str:
        return monomial_str(self.monomial)


@dataclass
class ExpansionBasis:
    maturities: tuple[float, ...]
    depth: int
    terms: list[ExpansionTerm]
    spot_params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.maturities)

    @property
    def n_paths(self) -> int:
        return self.terms[0].sample[1].shape[0]

    def term(self, order: int, monomial: Monomial) -> ExpansionTerm | None:
        for t in self.terms:
            if t.order == order and t.monomial == monomial:
                return t
        return None


def expansion_basis(params_base: GSParams, driver: BrownianDriver, depth: int, max_order: int | None = 3) -> ExpansionBasis:
    """Monte Carlo samples of every expansion term through eps^max_order.

    ``max_order=None`` keeps every power, in which case the terms sum back to
    S(F^(3)) exactly.
    """
    if depth > 4:
        raise ValueError("expansion basis is limited to depth <= 4")
    if driver.n_steps < gs_model.MIN_STEPS:
        raise ValueError(f"driver grid too coarse: need at least {gs_model.MIN_STEPS} steps")
    sig_z = signature(basis_paths(params_base, driver), depth)
    maps = _coefficient_maps(params_base.maturities, depth, max_order)
    R = driver.n_paths
    keys = sorted({key for lvl in maps for key in lvl})
    terms = []
    for key in keys:
        sample = [np.full(R, 1.0 if key == (0, ONE) else 0.0)]
        for k in range(1, depth + 1):
            G = maps[k].get(key)
            if G is None:
                sample.append(np.zeros((R, params_base.d**k)))
            else:
                sample.append(sig_z.levels[k] @ G.T)
        terms.append(ExpansionTerm(key[0], key[1], sample, LABELS.get(key, f"E[{key[0]},{monomial_str(key[1])}]")))
    spot = {"c": params_base.c, "r": params_base.r, "sigma": params_base.sigma}
    return ExpansionBasis(tuple(params_base.maturities), depth, terms, spot)


def concat_bases(parts: list[ExpansionBasis]) -> ExpansionBasis:
    """Join bases computed on consecutive chunks of one driver."""
    first = parts[0]
    terms = []
    for i, term in enumerate(first.terms):
        sample = [np.concatenate([p.terms[i].sample[k] for p in parts], axis=0) for k in range(first.depth + 1)]
        terms.append(ExpansionTerm(term.order, term.monomial, sample, term.label))
    return ExpansionBasis(first.maturities, first.depth, terms, dict(first.spot_params))


def expansion_basis_chunked(params_base: GSParams, driver: BrownianDriver, depth: int, chunk_size: int = 250, max_order: int | None = 3) -> ExpansionBasis:
    return concat_bases([expansion_basis(params_base, c, depth, max_order) for c in driver.chunks(chunk_size)])


def expansion_eval(basis: ExpansionBasis, params: GSParams, delta: float | None = None, depth: int | None = None, max_order: int | None = 3) -> TruncatedSignature:
    """Assemble sum_terms eps^order * monomial(params) * basis sample."""
    if tuple(params.maturities) != basis.maturities:
        raise ValueError("basis was computed for different maturities")
    for key in ("c", "r", "sigma"):
        if basis.spot_params.get(key, getattr(params, key)) != getattr(params, key):
            raise ValueError(f"basis was computed for a different {key}")
    delta = params.delta if delta is None else delta
    depth = basis.depth if depth is None else depth
    if depth > basis.depth:
        raise ValueError("requested depth exceeds basis depth")
    eps = math.sqrt(delta)
    R = basis.n_paths
    levels = [np.ones(R)] + [np.zeros((R, basis.dim**k)) for k in range(1, depth + 1)]
    for term in basis.terms:
        if max_order is not None and term.order > max_order:
            continue
        w = eps**term.order * monomial_value(term.monomial, params)
        if w == 0:
            continue
        for k in range(1, depth + 1):
            levels[k] += w * term.sample[k]
    return TruncatedSignature(basis.dim, depth, levels)


def order_coordinates(basis: ExpansionBasis, params: GSParams, order: int) -> list[np.ndarray]:
    """Coefficient of eps^order (all monomials evaluated), per level, shape (R, d^k)."""
    out = [np.zeros((basis.n_paths, basis.dim**k)) for k in range(basis.depth + 1)]
    for term in basis.terms:
        if term.order == order:
            w = monomial_value(term.monomial, params)
            for k in range(basis.depth + 1):
                out[k] = out[k] + w * term.sample[k]
    return out


# Groups that the term list names but that carry no mass through order 3/2,
# and the recurring pure-spot element at every positive order.
ABSENT_TERMS = (
    {"label": "E0", "order": "1/2", "reason": "pure-spot signature has no eps dependence; vanishes identically"},
    {"label": "E0", "order": "1", "reason": "pure-spot signature has no eps dependence; vanishes identically"},
    {"label": "E0", "order": "3/2", "reason": "pure-spot signature has no eps dependence; vanishes identically"},
    {"label": "E32", "order": "3/2", "reason": "no word combination produces this monomial at order 3/2"},
    {"label": "E35", "order": "3/2", "reason": "merged with E34: both carry gamma*kappa*(theta-c)"},
)


def _order_str(order: int) -> str:
    return str(order // 2) if order % 2 == 0 else f"{order}/2"


def _word_label(word) -> list[int]:
    return [int(i) for i in word]


def expansion_report(basis: ExpansionBasis, gamma_grid=(), p: float = 2.0) -> dict:
    """JSON-ready summary: per order, per term, per word, the basis mean and s.e."""
    from .metrics import SigSequenceSample, weighted_sig_norm

    R = basis.n_paths
    orders = []
    for order in sorted({t.order for t in basis.terms}):
        entries = []
        for term in (t for t in basis.terms if t.order == order):
            word_rows = []
            for k in range(1, basis.depth + 1):
                s = term.sample[k]
                mean = s.mean(axis=0)
                se = s.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros_like(mean)
                for w, m, e in zip(words(basis.dim, k), mean, se):
                    word_rows.append({"word": _word_label(w), "mean": float(m), "se": float(e)})
            a, b, e = term.monomial
            entries.append({
                "label": term.label,
                "coefficient": term.coefficient,
                "monomial": {"gamma": a, "kappa": b, "theta_minus_c": e},
                "words": word_rows,
            })
        orders.append({"order": _order_str(order), "delta_power": order / 2, "terms": entries})
    sens = []
    e11 = basis.term(1, GAMMA)
    if e11 is not None and gamma_grid:
        norms = []
        for g in gamma_grid:
            levels = [np.zeros(R)] + [g * e11.sample[k] for k in range(1, basis.depth + 1)]
            norms.append(weighted_sig_norm(SigSequenceSample(basis.dim, basis.depth, tuple(levels)), p))
        for i, g in enumerate(gamma_grid):
            j = i + 1 if i + 1 < len(gamma_grid) else i - 1
            slope = (norms[j] - norms[i]) / (gamma_grid[j] - gamma_grid[i])
            sens.append({"gamma": float(g), "order_half_norm": norms[i], "d_norm_d_gamma": float(slope)})
    return {
        "maturities": list(basis.maturities),
        "depth": basis.depth,
        "n_paths": R,
        "channels": list(BASIS_CHANNELS),
        "word_order": "row-major, letters 1..d, levels 1..depth",
        "orders": orders,
        "absent_terms": list(ABSENT_TERMS),
        "sign_variants": {
            "E33": {
                "grouped_coefficient": "gamma*kappa",
                "yield_channel_coefficient": "-kappa*gamma",
                "note": "the order-3/2 yield correction enters as -kappa*gamma times conv1; "
                        "the grouped term absorbs that sign into its basis sample",
            }
        },
        "gamma_sensitivity": sens,
    }


__all__ = [
    "B_delta",
    "B_trunc",
    "vasicek_A",
    "lift_term_structure",
    "signature_model",
    "signature_approx",
    "expansion_basis",
    "expansion_eval",
    "expansion_report",
    "ExpansionBasis",
    "ExpansionTerm",
    "BASIS_CHANNELS",
    "words",
]
