"""Futures-curve CSV ingestion into rolling-window return paths.

Schema: ``date,contract_1,...,contract_d`` with ISO dates strictly
increasing.  Files written by ``emit_futures_csv`` carry a header line that
marks the columns as log-prices, which makes the round trip lossless.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..tensor_sig import MultiPath
from .io import CSV_HEADER_PREFIX


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class FuturesCurveRecord:
    dates: tuple[dt.date, ...]
    contracts: tuple[str, ...]
    log_prices: np.ndarray  # (n_dates, d)

    @property
    def d(self) -> int:
        return len(self.contracts)


def read_futures_csv(path: str | Path) -> FuturesCurveRecord:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise IngestError(f"{path}: cannot read ({e.strerror})") from None
    scale = "price"
    if lines and lines[0].startswith(CSV_HEADER_PREFIX):
        meta = json.loads(lines[0][len(CSV_HEADER_PREFIX):])
        scale = meta.get("scale", "price")
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows:
        raise IngestError(f"{path}: empty file")
    cols = [c.strip() for c in rows[0]]
    if not cols or cols[0] != "date":
        raise IngestError(f"{path}: missing column 'date'")
    d = len(cols) - 1
    if d < 1:
        raise IngestError(f"{path}: missing column 'contract_1'")
    for k in range(1, d + 1):
        if cols[k] != f"contract_{k}":
            raise IngestError(f"{path}: missing column 'contract_{k}' (found '{cols[k]}')")
    dates, values = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != d + 1:
            raise IngestError(f"{path}, line {i}: expected {d + 1} fields, got {len(row)}")
        try:
            day = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise IngestError(f"{path}, line {i}: bad date '{row[0]}'") from None
        if dates and day <= dates[-1]:
            raise IngestError(f"{path}, line {i}: dates not strictly increasing ({day} after {dates[-1]})")
        try:
            v = [float(x) for x in row[1:]]
        except ValueError:
            raise IngestError(f"{path}, line {i}: non-numeric price") from None
        if not all(np.isfinite(v)):
            raise IngestError(f"{path}, line {i}: non-finite price")
        if scale == "price" and min(v) <= 0:
            raise IngestError(f"{path}, line {i}: nonpositive price")
        dates.append(day)
        values.append(v)
    arr = np.array(values, dtype=float).reshape(len(values), d)
    logp = arr if scale == "log" else np.log(arr)
    return FuturesCurveRecord(tuple(dates), tuple(cols[1:]), logp)


def window_paths(record: FuturesCurveRecord, window: int, step: int | None = None, mode: str = "demeaned") -> list[MultiPath]:
    """Rolling windows of ``window`` observations on the time grid [0, 1]."""
    if window < 2:
        raise IngestError("window must span at least two observations")
    if mode not in ("raw", "demeaned"):
        raise IngestError(f"unknown mode '{mode}'")
    step = window if step is None else step
    n = record.log_prices.shape[0]
    if n < window:
        raise IngestError(f"series has {n} observations, fewer than the window {window}")
    times = np.linspace(0.0, 1.0, window)
    out = []
    for start in range(0, n - window + 1, step):
        v = record.log_prices[start:start + window]
        if mode == "demeaned":
            v = v - v.mean(axis=0)
        out.append(MultiPath(times, v.copy()))
    return out


def ingest_futures_csv(path: str | Path, window: int, step: int | None = None, mode: str = "demeaned") -> list[MultiPath]:
    return window_paths(read_futures_csv(path), window, step, mode)


def emit_futures_csv(path: str | Path, log_prices: np.ndarray, start: dt.date = dt.date(2000, 1, 3), header: dict | None = None) -> Path:
    """Write an (n, d) log-price array as a futures CSV that ingests losslessly."""
    lp = np.asarray(log_prices, dtype=float)
    if lp.ndim != 2:
        raise ValueError("log_prices must be (n_dates, d)")
    meta = dict(header or {})
    meta["scale"] = "log"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER_PREFIX + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + [f"contract_{k}" for k in range(1, lp.shape[1] + 1)])
        for i, row in enumerate(lp):
            w.writerow([(start + dt.timedelta(days=i)).isoformat()] + [repr(float(x)) for x in row])
    return path


def return_polyline(paths: list[MultiPath]) -> list[dict]:
    """Front-vs-next cumulative return points per window."""
    out = []
    for w, p in enumerate(paths):
        if p.dim < 2:
            raise IngestError("return polyline needs at least two contracts")
        rel = p.values[:, :2] - p.values[0, :2]
        for t, (a, b) in zip(p.times, rel):
            out.append({"window": w, "t": float(t), "front": float(a), "next": float(b)})
    return out
