from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd

from ..errors import ContractError, ShiftLabError
from .rng import Rng

LabelKind = Literal["categorical", "continuous"]


class SchemaError(ShiftLabError):
    """Declared columns are missing from the data."""


class DataError(ShiftLabError):
    """The data itself is unusable (empty domain, unparseable numbers...)."""


@dataclass(frozen=True)
class DomainDataset:
    """One domain's sample: features, optional labels and the domain name."""

    domain: str
    X: np.ndarray
    y: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    label_name: str = "Y"
    label_kind: LabelKind = "categorical"

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        object.__setattr__(self, "X", X)
        if not self.feature_names:
            object.__setattr__(self, "feature_names",
                               tuple(f"X{i + 1}" for i in range(X.shape[1])))
        if len(self.feature_names) != X.shape[1]:
            raise ContractError(f"{self.domain}: {len(self.feature_names)} feature names for "
                                f"{X.shape[1]} columns")
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.float64).reshape(-1)
            if y.shape[0] != X.shape[0]:
                raise ContractError(f"{self.domain}: {y.shape[0]} labels for {X.shape[0]} rows")
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def labeled(self) -> bool:
        return self.y is not None

    def columns(self, names: Sequence[str]) -> np.ndarray:
        """Feature columns by name; the label name selects Y."""
        out = []
        for name in names:
            if name == self.label_name:
                if self.y is None:
                    raise SchemaError(f"{self.domain}: label column {name!r} is absent")
                out.append(self.y.reshape(-1, 1))
            elif name in self.feature_names:
                out.append(self.X[:, [self.feature_names.index(name)]])
            else:
                raise SchemaError(f"{self.domain}: no column named {name!r}")
        if not out:
            return np.zeros((self.n, 0))
        return np.hstack(out)

    def without_labels(self) -> "DomainDataset":
        return DomainDataset(self.domain, self.X, None, self.feature_names,
                             self.label_name, self.label_kind)

    def take(self, idx: np.ndarray) -> "DomainDataset":
        return DomainDataset(self.domain, self.X[idx], None if self.y is None else self.y[idx],
                             self.feature_names, self.label_name, self.label_kind)


@dataclass(frozen=True)
class CsvSchema:
    feature_columns: tuple[str, ...]
    domain_column: str = "domain"
    label_column: str | None = None
    label_kind: LabelKind = "categorical"

    @classmethod
    def from_dict(cls, data: dict) -> "CsvSchema":
        return cls(tuple(data["feature_columns"]), data.get("domain_column", "domain"),
                   data.get("label_column"), data.get("label_kind", "categorical"))


def check_feature_dims(datasets: Sequence[DomainDataset]) -> None:
    names = {d.feature_names for d in datasets}
    if len(names) > 1:
        raise ContractError(f"domains disagree on feature columns: {sorted(names)}")


def load_csv(path: Path, schema: CsvSchema) -> list[DomainDataset]:
    """Read one DomainDataset per distinct domain value, in order of first appearance."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")

    wanted = list(schema.feature_columns) + [schema.domain_column]
    if schema.label_column:
        wanted.append(schema.label_column)
    missing = [c for c in wanted if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path.name}: missing column(s) {missing}; header is {list(frame.columns)}")

    feats = frame[list(schema.feature_columns)].apply(pd.to_numeric, errors="coerce")
    bad_rows = feats.isna().any(axis=1)
    if schema.label_column:
        raw = frame[schema.label_column].str.strip()
        labels = pd.to_numeric(raw.where(raw != ""), errors="coerce")
        bad_rows |= labels.isna() & (raw != "")
    if bad_rows.any():
        # header is line 1
        lines = [int(i) + 2 for i in np.flatnonzero(bad_rows.to_numpy())]
        raise DataError(f"{path.name}: unparseable numeric value on line(s) {lines}")

    out: list[DomainDataset] = []
    domains = frame[schema.domain_column]
    for name in pd.unique(domains):
        mask = (domains == name).to_numpy()
        if not mask.any():
            raise DataError(f"{path.name}: domain {name!r} has no rows")
        y = None
        if schema.label_column:
            ys = labels[mask]
            if ys.notna().all():
                y = ys.to_numpy(dtype=np.float64)
            elif ys.notna().any():
                raise DataError(f"{path.name}: domain {name!r} mixes labeled and unlabeled rows")
        out.append(DomainDataset(str(name), feats[mask].to_numpy(dtype=np.float64), y,
                                 tuple(schema.feature_columns),
                                 schema.label_column or "Y", schema.label_kind))
    if not out:
        raise DataError(f"{path.name}: no data rows")
    return out


def save_csv(path: Path, datasets: Sequence[DomainDataset], domain_column: str = "domain") -> Path:
    """Write datasets so that ``load_csv`` reproduces them exactly (17 significant digits)."""
    if not datasets:
        raise ContractError("save_csv needs at least one dataset")
    check_feature_dims(datasets)
    first = datasets[0]
    frames = []
    for ds in datasets:
        block = pd.DataFrame(ds.X, columns=list(first.feature_names))
        block[first.label_name] = ds.y if ds.y is not None else np.nan
        block[domain_column] = ds.domain
        frames.append(block)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g",
                                                na_rep="", encoding="utf-8")
    return path


def schema_for(datasets: Sequence[DomainDataset], domain_column: str = "domain") -> CsvSchema:
    first = datasets[0]
    return CsvSchema(first.feature_names, domain_column, first.label_name, first.label_kind)


def split(dataset: DomainDataset, fraction: float, seed: int) -> tuple[DomainDataset, DomainDataset]:
    """Seeded train/held-out split; stratified on categorical labels."""
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"split fraction must lie in (0, 1), got {fraction}")
    rng = Rng(seed).split("split")
    if dataset.labeled and dataset.label_kind == "categorical":
        train_idx = []
        for c in np.unique(dataset.y):
            members = np.flatnonzero(dataset.y == c)
            members = members[rng.permutation(members.size)]
            train_idx.extend(members[: int(round(members.size * fraction))])
        train_idx = np.sort(np.asarray(train_idx, dtype=int))
    else:
        train_idx = np.sort(rng.permutation(dataset.n)[: int(round(dataset.n * fraction))])
    held = np.setdiff1d(np.arange(dataset.n), train_idx)
    if train_idx.size == 0 or held.size == 0:
        raise ContractError(f"split of {dataset.n} rows at fraction {fraction} leaves an empty side")
    return dataset.take(train_idx), dataset.take(held)
