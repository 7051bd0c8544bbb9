"""Pipeline configuration: one JSON file plus ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .ingest import CalendarConfig
from .parafac import FitConfig
from .synth import SyntheticSpec

__all__ = ["OUTPUT_ENV", "FitSection", "PipelineConfig", "load_config", "apply_overrides"]

OUTPUT_ENV = "NTF_PATTERNS_OUTPUT_DIR"
CLUSTER_METHODS = ("kmedoids", "kmeans")


def _default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "ntf_output")


@dataclass
class FitSection:
    """Fit settings shared by ``fit`` and ``cc-scan``; seeds come from the
    top-level ``seed``. ``rank = None`` means: use the rank selected by the
    last ``cc-scan``."""

    rank: int | None = 3
    max_iterations: int = 500
    tol: float = 1e-8
    init: str = "uniform"

    def fit_config(self, seed: int, rank: int | None = None) -> FitConfig:
        r = rank if rank is not None else self.rank
        if r is None:
            raise ValueError("no rank given")
        return FitConfig(r, self.max_iterations, self.tol, self.init, seed)


@dataclass
class PipelineConfig:
    receipts: str | None = None
    demographics: str | None = None
    synthetic: SyntheticSpec | None = None
    calendar: CalendarConfig = field(default_factory=CalendarConfig)
    fit: FitSection = field(default_factory=FitSection)
    n_runs: int = 20
    cc_ranks: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    cc_threshold: float = 85.0
    cluster_method: str = "kmedoids"
    k: int = 5
    k_range: list[int] = field(default_factory=lambda: list(range(1, 11)))
    representative_fraction: float = 0.10
    output_dir: str = field(default_factory=_default_output_dir)
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.cluster_method not in CLUSTER_METHODS:
            raise ValueError(f"cluster_method must be one of {CLUSTER_METHODS}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.representative_fraction < 1.0:
            raise ValueError("representative_fraction must lie in (0, 1)")
        if not self.cc_ranks:
            raise ValueError("cc_ranks must be non-empty")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["calendar"] = {
            "start": self.calendar.start.isoformat() if self.calendar.start else None,
            "end": self.calendar.end.isoformat() if self.calendar.end else None,
            "week_start": self.calendar.week_start,
            "policy": self.calendar.policy,
        }
        d["synthetic"] = self.synthetic.as_dict() if self.synthetic is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = copy.deepcopy(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        if data.get("calendar") is not None:
            data["calendar"] = _build(CalendarConfig, data["calendar"], "calendar")
        if data.get("fit") is not None:
            data["fit"] = _build(FitSection, data["fit"], "fit")
        if data.get("synthetic") is not None:
            data["synthetic"] = _build(SyntheticSpec, data["synthetic"], "synthetic")
        return cls(**data)


def _build(kind, values, section: str):
    if not isinstance(values, dict):
        raise ValueError(f"section {section!r} must be an object")
    known = {f.name for f in fields(kind)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return kind(**values)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        return PipelineConfig.from_dict(json.load(fh))


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: PipelineConfig, overrides: list[str]) -> PipelineConfig:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when
    possible and kept as strings otherwise."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if node.get(p) is None:
                if p == "synthetic":
                    node[p] = SyntheticSpec().as_dict()
                else:
                    raise ValueError(f"unknown configuration key {key!r}")
            node = node[p]
            if not isinstance(node, dict):
                raise ValueError(f"{key!r}: {p!r} is not a section")
        node[parts[-1]] = _parse_value(raw)
    return PipelineConfig.from_dict(data)
