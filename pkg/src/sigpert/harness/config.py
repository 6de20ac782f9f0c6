"""Experiment configuration: one JSON file, validated before any work starts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..gs_model import BrownianDriver, GSParams


class ConfigError(Exception):
    """Raised for unreadable or invalid configuration; maps to exit code 2."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
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
    maturities: list[float] = Field(default_factory=lambda: [0.25, 1.0])

    @model_validator(mode="after")
    def _check(self):
        try:
            self.params()
        except ValueError as e:
            raise ValueError(str(e)) from None
        return self

    def params(self, **overrides) -> GSParams:
        data = self.model_dump()
        data.update(overrides)
        data["maturities"] = tuple(data["maturities"])
        return GSParams(**data)


class DriverBlock(_Block):
    seed: int
    n_steps: int = Field(2**12, ge=2**8)
    n_paths: int = Field(2000, ge=1)

    def driver(self, rho: float) -> BrownianDriver:
        return BrownianDriver(self.seed, self.n_steps, self.n_paths, rho)


class DeltaGrid(_Block):
    """Geometric grid base**-k for k = first..last."""

    base: float = 2.0
    first: int
    last: int

    def values(self) -> list[float]:
        return [self.base ** (-k) for k in range(self.first, self.last + 1)]


def _grid(v):
    return v.values() if isinstance(v, DeltaGrid) else list(v)


class SimulateBlock(_Block):
    n_export: int = Field(4, ge=1)


class SignatureBlock(_Block):
    depth: int = Field(3, ge=1, le=8)
    order: Optional[int] = Field(None, ge=0, le=12)


class ConvergeBlock(_Block):
    experiment: Literal["prop32", "thm33", "cor34"]
    deltas: list[float] | DeltaGrid
    n_list: list[int] = Field(default_factory=lambda: [0, 1, 2, 3])
    p: float = Field(2.0, ge=1)
    depth: int = Field(3, ge=1, le=6)
    tolerance: float = Field(0.1, gt=0)
    p_sweep: list[float] = Field(default_factory=list)
    chunk_size: int = Field(250, ge=1)

    @field_validator("n_list")
    @classmethod
    def _orders(cls, v):
        if not v or any(not 0 <= n <= 12 for n in v):
            raise ValueError("orders must lie in 0..12")
        return v

    def delta_values(self) -> list[float]:
        return _grid(self.deltas)


class ExpandBlock(_Block):
    depth: int = Field(3, ge=1, le=4)
    deltas: list[float] | DeltaGrid
    gamma_grid: list[float] = Field(default_factory=lambda: [0.1, 0.2, 0.4])
    p: float = Field(2.0, ge=1)
    tolerance: float = Field(0.2, gt=0)
    chunk_size: int = Field(250, ge=1)

    def delta_values(self) -> list[float]:
        return _grid(self.deltas)


class ClassSpec(_Block):
    name: str
    model: dict = Field(default_factory=dict)

    @field_validator("model")
    @classmethod
    def _known(cls, v):
        unknown = sorted(set(v) - set(ModelBlock.model_fields))
        if unknown:
            raise ValueError(f"unknown model field(s) {unknown}")
        return v


class ClassifyBlock(_Block):
    classes: list[ClassSpec]
    ablation: Optional[list[ClassSpec]] = None
    n_markets: int = Field(200, ge=10)
    n_windows: int = Field(256, ge=1)
    window_steps: int = Field(16, ge=2)
    depth: int = Field(3, ge=1, le=6)
    folds: int = Field(5, ge=2)
    min_accuracy: float = 0.95
    ablation_tolerance: float = 0.10

    @field_validator("classes")
    @classmethod
    def _two(cls, v):
        if len(v) < 2:
            raise ValueError("need at least two classes")
        return v


class IngestBlock(_Block):
    csv: str
    window: int = Field(..., ge=2)
    step: Optional[int] = Field(None, ge=1)
    mode: Literal["raw", "demeaned"] = "demeaned"
    depth: int = Field(3, ge=1, le=8)


class ExperimentConfig(_Block):
    model: ModelBlock = Field(default_factory=ModelBlock)
    driver: Optional[DriverBlock] = None
    simulate: Optional[SimulateBlock] = None
    signature: Optional[SignatureBlock] = None
    converge: Optional[ConvergeBlock] = None
    expand: Optional[ExpandBlock] = None
    classify: Optional[ClassifyBlock] = None
    ingest: Optional[IngestBlock] = None
    output_dir: str = "results"

    def require(self, *names: str):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"config error: missing field '{name}'")

    def reproducible_dict(self) -> dict:
        """Config content that determines the results (output location excluded)."""
        return self.model_dump(mode="json", exclude={"output_dir"}, exclude_none=True)


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"])
        lines.append(f"'{loc}': {e['msg']}")
    return "config error: " + "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config dict; a result file's header is accepted in its place."""
    if not isinstance(data, dict):
        raise ConfigError("config error: top level must be an object")
    if "header" in data and isinstance(data["header"], dict) and "config" in data["header"]:
        data = data["header"]["config"]
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_error(e)) from None


def read_header_line(path: Path) -> dict | None:
    with open(path) as fh:
        first = fh.readline()
    from .io import CSV_HEADER_PREFIX

    if first.startswith(CSV_HEADER_PREFIX):
        return json.loads(first[len(CSV_HEADER_PREFIX):])
    return None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"config error: cannot read {path}: {e.strerror}") from None
    header = read_header_line(path) if path.suffix == ".csv" else None
    if header is not None:
        return parse_config({"header": header})
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config error: {path} is not valid JSON ({e.msg} at line {e.lineno})") from None
    return parse_config(data)
