"""Run configuration: one JSON file driving every CLI subcommand.

Relative paths are resolved against the directory holding the config file.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .ddpm import TrainConfig
from .synth import SynthConfig


@dataclass
class Paths:
    dataset: str = "data/dataset.jsonl"
    pca: str = "models/pca.json"
    checkpoint: str = "models/ddpm.json"
    samples: str = "out/samples.jsonl"
    report: str = "out/evaluation.csv"
    summary: str = "out/summary.csv"


@dataclass
class SurfaceSettings:
    m_pol: int = 10
    n_tor: int = 10


@dataclass
class ScheduleSettings:
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    variance: str = "beta"


@dataclass
class NetworkSettings:
    hidden_width: int = 2048
    hidden_layers: int = 4
    x_embed_dim: int = 64
    t_embed_dim: int = 128
    y_embed_dim: int = 128
    x_sin_dim: int = 16
    t_sin_dim: int = 32
    y_sin_dim: int = 16


@dataclass
class EvaluationSettings:
    n_phi: int | None = None
    n_theta: int | None = None
    # "none", "synthetic", or a command list for an external evaluator
    field_source: str | list = "none"
    c_threshold: float = 0.05
    j_qs_threshold: float = 0.01


@dataclass
class RunConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    surface: SurfaceSettings = field(default_factory=SurfaceSettings)
    synth: SynthConfig = field(default_factory=SynthConfig)
    n_r: int = 50
    normalizer_floor: float = 1e-8
    validation_fraction: float = 0.0
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    network: NetworkSettings = field(default_factory=NetworkSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_samples: int = 64
    conditions: str = "table1-out"
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    base_dir: str = "."

    def __post_init__(self):
        ev = self.evaluation
        if ev.c_threshold <= 0 or ev.j_qs_threshold <= 0:
            raise ValueError("metric thresholds must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")

    def path(self, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def _build(cls, data: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in known and _has_default(cls) else None
        if hasattr(default, "__dataclass_fields__") and isinstance(value, dict):
            value = _build(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def _has_default(cls) -> bool:
    try:
        cls()
    except TypeError:
        return False
    return True


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = _build(RunConfig, json.loads(path.read_text()))
    cfg.base_dir = str(path.parent)
    return cfg


def threads() -> int:
    """Parallelism cap from ``STELLAGEN_THREADS`` (default: CPU count)."""
    raw = os.environ.get("STELLAGEN_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"STELLAGEN_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1
