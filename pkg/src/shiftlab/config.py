from __future__ import annotations

import copy
import hashlib
from pathlib import Path
from typing import Any

import yaml

from .errors import ContractError, ShiftLabError
from .services.causal import check_alpha
from .services.checkpoint import canonical_json
from .services.datasets import CsvSchema
from .services.gdan import TrainConfig
from .services.synthetic import DEFAULT_PARAMS, SpecError, SyntheticSpec
from .types_run_types import DataSource, DiscoverySettings, EvaluationSettings, RunConfig

_TRAIN_DEFAULTS = {k: v for k, v in TrainConfig().to_dict().items() if k != "seed"}

DEFAULTS = {
    "name": "experiment",
    "seed": None,
    "model": "gdan",
    "data": {
        "source": "synthetic",
        "synthetic": {
            "family": "gaussian-classes-1d",
            "params": {},
            "n_per_domain": 2000,
            "identifiable": False,
        },
        "csv": {
            "path": None,
            "feature_columns": [],
            "label_column": None,
            "domain_column": "domain",
            "label_kind": "categorical",
            "target_domain": None,
        },
    },
    "train": _TRAIN_DEFAULTS,
    "discovery": {"alpha": 0.05, "root": None, "with_domain_index": True},
    "evaluation": {"predictor": "auto", "k": 5, "radius": 1.0, "n_generated": None, "scatter": True},
    "output_dir": "runs",
    "workers": 4,
}

MODEL_KINDS = ("gdan", "cgdan")
PREDICTORS = ("auto", "logistic", "knn", "least-squares")


class ConfigError(ShiftLabError):
    """Every problem found in a run configuration."""

    def __init__(self, errors: list[str]) -> None:
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


def merge(base: dict, extra: dict) -> dict:
    """Deep merge; nested dicts are merged, everything else is replaced."""
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "params":
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


class Settings:
    def __init__(self, data: dict | None = None, base_dir: Path | None = None):
        self._data = merge(DEFAULTS, data or {})
        self._base_dir = base_dir

    @classmethod
    def from_file(cls, path: Path) -> "Settings":
        """YAML or JSON (JSON is valid YAML); a missing file gives the defaults."""
        path = Path(path)
        if not path.exists():
            return cls()
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigError([f"{path.name}: top level must be a mapping"])
        return cls(data, base_dir=path.parent)

    def get(self, key: str, default=None):
        """Dotted lookup, e.g. ``get("train.iterations")``."""
        node: Any = self._data
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def override(self, key: str, value) -> "Settings":
        data = copy.deepcopy(self._data)
        node = data
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([f"{key}: {part!r} is not a section"])
        node[leaf] = value
        return Settings(data, self._base_dir)

    def as_dict(self) -> dict:
        return copy.deepcopy(self._data)

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self._data).encode("utf-8")).hexdigest()

    def csv_path(self) -> Path | None:
        raw = self.get("data.csv.path")
        if not raw:
            return None
        path = Path(raw)
        if not path.is_absolute() and self._base_dir is not None:
            path = self._base_dir / path
        return path

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def validate(self) -> list[str]:
        """Every problem with the configuration, in a stable order; empty when valid."""
        errors: list[str] = []
        d = self._data

        seed = d.get("seed")
        if seed is None:
            errors.append("seed: required")
        elif isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            errors.append(f"seed: must be a non-negative integer, got {seed!r}")
        if not str(d.get("name") or "").strip():
            errors.append("name: must not be empty")
        if d.get("model") not in MODEL_KINDS:
            errors.append(f"model: expected one of {list(MODEL_KINDS)}, got {d.get('model')!r}")

        errors.extend(self._validate_data())
        errors.extend(self._validate_train())

        alpha = self.get("discovery.alpha")
        try:
            check_alpha(float(alpha))
        except (TypeError, ValueError, ContractError):
            errors.append(f"discovery.alpha: must lie in (0, 1), got {alpha!r}")

        if self.get("evaluation.predictor") not in PREDICTORS:
            errors.append(f"evaluation.predictor: expected one of {list(PREDICTORS)}, "
                          f"got {self.get('evaluation.predictor')!r}")
        k = self.get("evaluation.k")
        if not isinstance(k, int) or k < 1:
            errors.append(f"evaluation.k: must be a positive integer, got {k!r}")
        n_gen = self.get("evaluation.n_generated")
        if n_gen is not None and (not isinstance(n_gen, int) or n_gen < 2):
            errors.append(f"evaluation.n_generated: must be an integer >= 2, got {n_gen!r}")

        workers = d.get("workers")
        if not isinstance(workers, int) or workers < 1:
            errors.append(f"workers: must be a positive integer, got {workers!r}")
        return errors

    def _validate_data(self) -> list[str]:
        errors = []
        source = self.get("data.source")
        if source == "synthetic":
            family = self.get("data.synthetic.family")
            if family not in DEFAULT_PARAMS:
                errors.append(f"data.synthetic.family: expected one of {sorted(DEFAULT_PARAMS)}, "
                              f"got {family!r}")
            else:
                try:
                    self._synthetic_spec(0).resolved_params()
                except SpecError as exc:
                    errors.append(f"data.synthetic.params: {exc}")
        elif source == "csv":
            path = self.csv_path()
            if path is None:
                errors.append("data.csv.path: required for a csv data source")
            elif not path.exists():
                errors.append(f"data.csv.path: file not found: {path}")
            if not self.get("data.csv.feature_columns"):
                errors.append("data.csv.feature_columns: at least one column is required")
            if not self.get("data.csv.label_column"):
                errors.append("data.csv.label_column: required for training")
            if self.get("data.csv.label_kind") not in ("categorical", "continuous"):
                errors.append("data.csv.label_kind: expected 'categorical' or 'continuous'")
        else:
            errors.append(f"data.source: expected 'synthetic' or 'csv', got {source!r}")
        return errors

    def _validate_train(self) -> list[str]:
        train = dict(self.get("train") or {})
        unknown = sorted(set(train) - set(_TRAIN_DEFAULTS))
        if unknown:
            return [f"train: unknown key(s) {unknown}"]
        errors = []
        checks = [("batch_size", lambda v: isinstance(v, int) and v >= 2, "an integer >= 2"),
                  ("iterations", lambda v: isinstance(v, int) and v >= 1, "an integer >= 1"),
                  ("alpha", lambda v: isinstance(v, (int, float)) and v >= 0, "a number >= 0"),
                  ("lr", lambda v: isinstance(v, (int, float)) and v > 0, "a number > 0")]
        for key, ok, what in checks:
            if not ok(train.get(key)):
                errors.append(f"train.{key}: must be {what}, got {train.get(key)!r}")
        if not errors:
            try:
                TrainConfig.from_dict({**train, "seed": 0})
            except (ContractError, TypeError) as exc:
                errors.append(f"train: {exc}")
        return errors

    # ------------------------------------------------------------------
    # materialization
    # ------------------------------------------------------------------

    def _synthetic_spec(self, seed: int) -> SyntheticSpec:
        syn = self.get("data.synthetic")
        return SyntheticSpec(syn["family"], dict(syn.get("params") or {}),
                             syn.get("n_per_domain", 2000), seed, bool(syn.get("identifiable")))

    def as_run(self) -> RunConfig:
        errors = self.validate()
        if errors:
            raise ConfigError(errors)
        d = self._data
        seed = int(d["seed"])
        if self.get("data.source") == "synthetic":
            data = DataSource("synthetic", synthetic=self._synthetic_spec(seed))
        else:
            csv = self.get("data.csv")
            data = DataSource("csv", csv_path=self.csv_path(),
                              schema=CsvSchema.from_dict(csv), target_domain=csv.get("target_domain"))
        disc = self.get("discovery")
        ev = self.get("evaluation")
        return RunConfig(
            name=str(d["name"]),
            seed=seed,
            model=d["model"],
            data=data,
            train=TrainConfig.from_dict({**d["train"], "seed": seed}),
            discovery=DiscoverySettings(float(disc["alpha"]), disc.get("root"),
                                        bool(disc.get("with_domain_index", True))),
            evaluation=EvaluationSettings(ev["predictor"], int(ev["k"]), float(ev["radius"]),
                                          ev.get("n_generated"), bool(ev.get("scatter", True))),
            output_dir=Path(d["output_dir"]),
            workers=int(d["workers"]),
        )
