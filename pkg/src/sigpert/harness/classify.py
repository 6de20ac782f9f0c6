"""Synthetic market classification from term-structure signature features."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .. import gs_model
from ..gs_model import BrownianDriver, GSParams
from ..tensor_sig import signature_from_increments, words


@dataclass
class ClassResult:
    accuracy: float
    n_per_class: int
    discriminability: list[dict]
    confusion: list[list[int]]
    warning: str | None = None

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_per_class": self.n_per_class,
            "confusion": self.confusion,
            "discriminability": self.discriminability,
            "warning": self.warning,
        }


def class_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def market_features(params: GSParams, driver: BrownianDriver, n_windows: int, depth: int) -> np.ndarray:
    """Per market, the window-averaged signature (levels 1..depth) of F.

    The simulated unit interval is cut into ``n_windows`` equal windows; the
    signature is reparametrisation invariant, so no re-timing is needed.
    """
    spot, cy = gs_model.simulate_gs(params, driver)
    f = gs_model.futures_returns(spot, cy, params).values  # (R, N+1, d)
    R, N1, d = f.shape
    steps = (N1 - 1) // n_windows
    if steps * n_windows != N1 - 1:
        raise ValueError("grid steps must be divisible by the number of windows")
    inc = np.diff(f, axis=1).reshape(R * n_windows, steps, d)
    sig = signature_from_increments(inc, depth)
    flat = np.concatenate([sig.levels[k] for k in range(1, depth + 1)], axis=1)
    return flat.reshape(R, n_windows, -1).mean(axis=1)


def feature_labels(d: int, depth: int) -> list[str]:
    return ["".join(str(i) for i in w) for k in range(1, depth + 1) for w in words(d, k)]


def nearest_centroid_cv(X: np.ndarray, y: np.ndarray, folds: int, seed: int) -> tuple[float, np.ndarray]:
    """K-fold accuracy of a nearest-centroid rule.

    Coordinates are scaled by the pooled within-class standard deviation of
    the training fold, so a coordinate that separates the classes is not
    shrunk by its own between-class spread.
    """
    classes = np.unique(y)
    rng = np.random.default_rng([seed, 0xC1A55])
    order = rng.permutation(y.size)
    pred = np.empty_like(y)
    for fold in np.array_split(order, folds):
        train = np.setdiff1d(order, fold)
        cents = np.stack([X[train][y[train] == c].mean(axis=0) for c in classes])
        resid = X[train] - cents[np.searchsorted(classes, y[train])]
        sd = resid.std(axis=0)
        sd[sd == 0] = 1.0
        Z = X / sd
        cents = cents / sd
        dist = ((Z[fold][:, None, :] - cents[None]) ** 2).sum(axis=-1)
        pred[fold] = classes[np.argmin(dist, axis=1)]
    conf = np.array([[int(np.sum((y == a) & (pred == b))) for b in classes] for a in classes])
    return float(np.mean(pred == y)), conf


def fisher_scores(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Between-class over mean within-class variance, per coordinate."""
    classes = np.unique(y)
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    within = np.stack([X[y == c].var(axis=0) for c in classes]).mean(axis=0)
    between = means.var(axis=0)
    return np.divide(between, within, out=np.zeros_like(between), where=within > 0)


def run_classification(class_params: list[GSParams], seed: int, n_markets: int, n_windows: int,
                       window_steps: int, depth: int, folds: int = 5, names: list[str] | None = None) -> ClassResult:
    d = class_params[0].d
    if any(p.d != d for p in class_params):
        raise ValueError("all classes must share the number of maturities")
    warning = None
    if len(set(class_params)) < len(class_params):
        warning = "classes with identical parameters: expect chance accuracy"
        warnings.warn(warning, stacklevel=2)
    feats, labels = [], []
    for i, p in enumerate(class_params):
        drv = BrownianDriver(class_seed(seed, i), n_windows * window_steps, n_markets, p.rho)
        feats.append(market_features(p, drv, n_windows, depth))
        labels.append(np.full(n_markets, i))
    X, y = np.concatenate(feats), np.concatenate(labels)
    acc, conf = nearest_centroid_cv(X, y, folds, seed)
    scores = fisher_scores(X, y)
    disc = [{"word": w, "fisher": float(s)} for w, s in zip(feature_labels(d, depth), scores)]
    disc.sort(key=lambda r: -r["fisher"])
    return ClassResult(acc, n_markets, disc, conf.tolist(), warning)
