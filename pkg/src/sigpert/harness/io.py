"""Result files: every CSV and JSON output carries the config that produced it."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .. import __version__

CSV_HEADER_PREFIX = "# sigpert-header: "


def make_header(command: str, config: dict, driver: dict | None = None) -> dict:
    return {"command": command, "config": config, "driver": driver, "version": __version__}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)


def write_json(path: Path, header: dict, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps({"header": header, **payload}) + "\n")
    return path


def write_csv(path: Path, header: dict, columns: list[str], rows) -> Path:
    """CSV whose first line is the JSON header; floats are written with repr."""
    buf = io.StringIO()
    buf.write(CSV_HEADER_PREFIX + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def vega_line_spec(title: str, values: list[dict], x: str, y: str, *, detail: str | None = None,
                   order: str | None = None, log_scale: bool = False, header: dict | None = None) -> dict:
    """Self-contained vega-lite line chart with inline data."""
    scale = {"type": "log"} if log_scale else {"zero": False}
    enc = {
        "x": {"field": x, "type": "quantitative", "scale": scale},
        "y": {"field": y, "type": "quantitative", "scale": scale},
    }
    if detail:
        enc["color"] = {"field": detail, "type": "nominal"}
    if order:
        enc["order"] = {"field": order, "type": "quantitative"}
    spec = {
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "title": title,
        "data": {"values": values},
        "mark": {"type": "line", "point": log_scale},
        "encoding": enc,
    }
    if header is not None:
        spec["usermeta"] = {"header": header}
    return spec


def write_vega(path: Path, spec: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps(spec) + "\n")
    return path
