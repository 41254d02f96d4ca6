from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from .services.datasets import CsvSchema
from .services.gdan import TrainConfig
from .services.synthetic import SyntheticSpec

ModelKind = Literal["gdan", "cgdan"]
SourceKind = Literal["synthetic", "csv"]
PredictorKind = Literal["auto", "logistic", "knn", "least-squares"]


@dataclass(frozen=True)
class DataSource:
    kind: SourceKind
    synthetic: SyntheticSpec | None = None
    csv_path: Path | None = None
    schema: CsvSchema | None = None
    # None: the single unlabeled domain in the file
    target_domain: str | None = None


@dataclass(frozen=True)
class DiscoverySettings:
    alpha: float = 0.05
    root: str | None = None
    with_domain_index: bool = True


@dataclass(frozen=True)
class EvaluationSettings:
    predictor: PredictorKind = "auto"
    k: int = 5
    radius: float = 1.0
    n_generated: int | None = None
    scatter: bool = True


@dataclass(frozen=True)
class RunConfig:
    name: str
    seed: int
    model: ModelKind
    data: DataSource
    train: TrainConfig
    discovery: DiscoverySettings = field(default_factory=DiscoverySettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    output_dir: Path = Path("runs")
    workers: int = 1

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.name


@dataclass
class ExperimentReport:
    """Everything one training run produced, minus the model parameters."""

    name: str
    model: ModelKind
    config: dict
    config_hash: str
    tool_version: str
    losses: dict[str, list[float]]
    theta: dict[str, dict]
    metrics: dict
    graph: dict | None = None
    checkpoint_sha256: str | None = None
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "model": self.model, "config": self.config,
                "config_hash": self.config_hash, "tool_version": self.tool_version,
                "losses": self.losses, "theta": self.theta, "metrics": self.metrics,
                "graph": self.graph, "checkpoint_sha256": self.checkpoint_sha256,
                "wall_clock_s": self.wall_clock_s}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentReport":
        return cls(data["name"], data["model"], data["config"], data["config_hash"],
                   data["tool_version"], data.get("losses", {}), data.get("theta", {}),
                   data.get("metrics", {}), data.get("graph"), data.get("checkpoint_sha256"),
                   float(data.get("wall_clock_s", 0.0)))
