"""Synthetic multi-domain families with known generating mechanisms.

Every family produces labeled source domains ``s1..sm`` followed by one
unlabeled domain ``target``; the hidden target labels, the true latent
parameters and (where analytic) the Bayes accuracy go into ``GroundTruth``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from ..errors import ShiftLabError
from .datasets import DomainDataset
from .rng import Rng

Family = Literal["linear-mean", "rotation-2d", "gaussian-classes-1d", "fcm-chain", "fcm-wifi-like"]
TARGET = "target"


class SpecError(ShiftLabError):
    """Invalid synthetic family parameters."""


DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "linear-mean": {
        "A": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]],
        "h": [[0.0, 0.0, 0.0, 2.0], [2.0, 0.0, 0.0, 0.0]],
        # columns: sources then target
        "thetas": [[0.0, 1.0, 0.0, 1.0, 0.5], [0.0, 0.0, 1.0, 1.0, 0.5]],
        "noise": 0.5,
        "priors": None,
    },
    "rotation-2d": {
        "base_means": [[2.0, 0.0], [0.0, 2.0]],
        "noise_scales": [0.5, 0.2],
        "source_angles": [0.0],
        "target_angle": 45.0,
        "priors": None,
    },
    "gaussian-classes-1d": {
        "means": [0.0, 4.0],
        "sigma": 1.0,
        "source_shifts": [0.0],
        "target_shift": 2.0,
        "priors": None,
    },
    "fcm-chain": {
        "priors": [0.5, 0.5],
        "theta1": [1.0, 2.0, 3.0, 2.5],
        "offset1": [0.0, 0.0, 0.0, 0.0],
        "coef2": [0.5, 0.5, 0.5, 0.5],
        "offset2": [0.0, 0.0, 0.0, 0.0],
        "noise1": 0.5,
        "noise2": 0.5,
    },
    "fcm-wifi-like": {
        "y_range": [0.0, 10.0],
        "offset1": [0.0, 0.8, 1.6, 1.2],
        "offset4": [0.0, -0.8, -1.6, -1.2],
        "offset6": [0.0, 0.8, 1.6, 1.2],
        "noise": 0.5,
    },
}

WIFI_EDGES = [("Y", "X1"), ("Y", "X2"), ("Y", "X3"), ("X1", "X3"), ("X2", "X3"),
              ("Y", "X4"), ("X4", "X5"), ("X3", "X6")]


@dataclass(frozen=True)
class SyntheticSpec:
    family: Family
    params: dict[str, Any] = field(default_factory=dict)
    n_per_domain: int | list[int] = 2000
    seed: int = 0
    identifiable: bool = False

    def resolved_params(self) -> dict[str, Any]:
        if self.family not in DEFAULT_PARAMS:
            raise SpecError(f"family: unknown family {self.family!r}; "
                            f"expected one of {sorted(DEFAULT_PARAMS)}")
        merged = copy.deepcopy(DEFAULT_PARAMS[self.family])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise SpecError(f"{self.family}: unknown parameter(s) {sorted(unknown)}")
        merged.update(copy.deepcopy(self.params))
        return merged

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        return cls(data["family"], dict(data.get("params") or {}),
                   data.get("n_per_domain", 2000), int(data.get("seed", 0)),
                   bool(data.get("identifiable", False)))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params, "n_per_domain": self.n_per_domain,
                "seed": self.seed, "identifiable": self.identifiable}


@dataclass(frozen=True)
class LinearMeanFamily:
    """E[X | Y=c; theta] = A theta + h(c); true latent columns ``thetas`` (d x domains)."""

    A: np.ndarray
    h: np.ndarray
    thetas: np.ndarray
    noise: float

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def mean(self, c: int, theta: np.ndarray) -> np.ndarray:
        return self.A @ np.asarray(theta, dtype=np.float64) + self.h[c]

    def augmented_rank(self) -> int:
        return min(int(np.linalg.matrix_rank(np.column_stack([self.A, self.h[c]])))
                   for c in range(self.h.shape[0]))


@dataclass
class GroundTruth:
    family: str
    domains: list[str]
    params: dict[str, Any]
    target_labels: np.ndarray
    classes: list[float] | None = None
    thetas: np.ndarray | None = None
    dag_edges: list[tuple[str, str]] = field(default_factory=list)
    changing: list[str] = field(default_factory=list)
    bayes_accuracy: float | None = None
    class_means: dict[str, list] = field(default_factory=dict)
    linear_family: LinearMeanFamily | None = None

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "domains": self.domains,
            "params": self.params,
            "classes": self.classes,
            "thetas": None if self.thetas is None else self.thetas.tolist(),
            "dag_edges": [list(e) for e in self.dag_edges],
            "changing": self.changing,
            "bayes_accuracy": self.bayes_accuracy,
            "class_means": self.class_means,
        }


@dataclass
class SyntheticResult:
    datasets: list[DomainDataset]
    truth: GroundTruth

    @property
    def sources(self) -> list[DomainDataset]:
        return [d for d in self.datasets if d.domain != TARGET]

    @property
    def target(self) -> DomainDataset:
        return next(d for d in self.datasets if d.domain == TARGET)

    def labeled_target(self) -> DomainDataset:
        t = self.target
        return DomainDataset(t.domain, t.X, self.truth.target_labels, t.feature_names,
                             t.label_name, t.label_kind)


def _sizes(spec: SyntheticSpec, count: int) -> list[int]:
    sizes = spec.n_per_domain
    if isinstance(sizes, int):
        sizes = [sizes] * count
    sizes = [int(s) for s in sizes]
    if len(sizes) != count or any(s < 2 for s in sizes):
        raise SpecError(f"n_per_domain: need {count} sizes of at least 2, got {spec.n_per_domain}")
    return sizes


def _priors(params: dict, n_classes: int) -> np.ndarray:
    priors = params.get("priors")
    if priors is None:
        return np.full(n_classes, 1.0 / n_classes)
    p = np.asarray(priors, dtype=np.float64)
    if p.shape != (n_classes,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise SpecError(f"priors: need {n_classes} non-negative probabilities summing to 1")
    return p


def _domain_names(m: int) -> list[str]:
    return [f"s{i + 1}" for i in range(m)] + [TARGET]


def _per_domain(params: dict, key: str, count: int) -> np.ndarray:
    values = np.asarray(params[key], dtype=np.float64).reshape(-1)
    if values.size == 1:
        values = np.repeat(values, count)
    if values.size != count:
        raise SpecError(f"{key}: need {count} per-domain values, got {values.size}")
    return values


def bayes_accuracy_1d(means, sigma: float, priors) -> float:
    """Accuracy of the Bayes classifier for equal-variance 1-D Gaussian classes."""
    means = np.asarray(means, dtype=np.float64)
    priors = np.asarray(priors, dtype=np.float64)
    lo, hi = means.min() - 10 * sigma, means.max() + 10 * sigma
    grid = np.linspace(lo, hi, 40001)
    dens = priors[:, None] * norm.pdf(grid[None, :], loc=means[:, None], scale=sigma)
    return float(trapezoid(dens.max(axis=0), grid))


def _bundle(names, Xs, ys, feature_names, label_kind="categorical") -> list[DomainDataset]:
    out = []
    for name, X, y in zip(names, Xs, ys):
        out.append(DomainDataset(name, X, None if name == TARGET else y, tuple(feature_names),
                                 "Y", label_kind))
    return out


def _linear_mean(spec, p, rng):
    A = np.asarray(p["A"], dtype=np.float64)
    h = np.asarray(p["h"], dtype=np.float64)
    thetas = np.asarray(p["thetas"], dtype=np.float64)
    if thetas.ndim == 1:
        thetas = thetas.reshape(1, -1)
    if A.ndim != 2 or h.ndim != 2 or h.shape[1] != A.shape[0]:
        raise SpecError("h: need one D-vector per class with D = rows of A")
    if thetas.shape[0] != A.shape[1]:
        raise SpecError(f"thetas: need {A.shape[1]} rows (latent dim), got {thetas.shape[0]}")
    noise = float(p["noise"])
    if noise < 0:
        raise SpecError("noise: must be non-negative")
    family = LinearMeanFamily(A, h, thetas, noise)
    d, count = A.shape[1], thetas.shape[1]
    if spec.identifiable:
        aug = np.vstack([thetas[:, :-1], np.ones(count - 1)])
        if np.linalg.matrix_rank(aug) < d + 1:
            raise SpecError(f"thetas: source columns augmented with ones have rank "
                            f"{np.linalg.matrix_rank(aug)} < {d + 1}")
        if family.augmented_rank() < d + 1:
            raise SpecError(f"A: [A, h(y)] has rank {family.augmented_rank()} < {d + 1}")
    n_classes = h.shape[0]
    priors = _priors(p, n_classes)
    names = _domain_names(count - 1)
    Xs, ys, means = [], [], {}
    for k, (name, n) in enumerate(zip(names, _sizes(spec, count))):
        r = rng.split(k)
        y = r.choice(np.arange(n_classes), n, p=priors)
        mu = (A @ thetas[:, k])[None, :] + h[y]
        X = mu + (noise * r.gaussian(n, A.shape[0]) if noise > 0 else 0.0)
        Xs.append(X)
        ys.append(y.astype(np.float64))
        means[name] = [family.mean(c, thetas[:, k]).tolist() for c in range(n_classes)]
    truth = GroundTruth(spec.family, names, p, ys[-1], list(map(float, range(n_classes))),
                        thetas, class_means=means, linear_family=family)
    return _bundle(names, Xs, ys, [f"X{i + 1}" for i in range(A.shape[0])]), truth


def rotation_matrix(degrees: float) -> np.ndarray:
    g = np.deg2rad(degrees)
    return np.array([[np.cos(g), -np.sin(g)], [np.sin(g), np.cos(g)]])


def _rotation(spec, p, rng):
    base = np.asarray(p["base_means"], dtype=np.float64)
    if base.ndim != 2 or base.shape[1] != 2:
        raise SpecError("base_means: need one 2-D mean per class")
    scales = np.asarray(p["noise_scales"], dtype=np.float64)
    if scales.shape != (2,) or np.any(scales < 0):
        raise SpecError("noise_scales: need two non-negative scales")
    angles = [float(a) for a in p["source_angles"]] + [float(p["target_angle"])]
    n_classes = base.shape[0]
    priors = _priors(p, n_classes)
    names = _domain_names(len(angles) - 1)
    Xs, ys, means = [], [], {}
    for k, (name, angle, n) in enumerate(zip(names, angles, _sizes(spec, len(angles)))):
        r = rng.split(k)
        R = rotation_matrix(angle)
        y = r.choice(np.arange(n_classes), n, p=priors)
        local = base[y] + r.gaussian(n, 2) * scales[None, :]
        Xs.append(local @ R.T)
        ys.append(y.astype(np.float64))
        means[name] = (base @ R.T).tolist()
    truth = GroundTruth(spec.family, names, p, ys[-1], list(map(float, range(n_classes))),
                        np.asarray(angles).reshape(1, -1), class_means=means)
    return _bundle(names, Xs, ys, ["X1", "X2"]), truth


def _gaussian_classes(spec, p, rng):
    means = np.asarray(p["means"], dtype=np.float64)
    sigma = float(p["sigma"])
    if sigma <= 0:
        raise SpecError("sigma: must be positive")
    if spec.identifiable and len(np.unique(means)) < means.size:
        raise SpecError("means: class means must be distinct for an identifiable family")
    shifts = [float(s) for s in p["source_shifts"]] + [float(p["target_shift"])]
    priors = _priors(p, means.size)
    names = _domain_names(len(shifts) - 1)
    Xs, ys, cm = [], [], {}
    for k, (name, shift, n) in enumerate(zip(names, shifts, _sizes(spec, len(shifts)))):
        r = rng.split(k)
        y = r.choice(np.arange(means.size), n, p=priors)
        Xs.append((means[y] + shift + sigma * r.gaussian(n, 1)[:, 0]).reshape(-1, 1))
        ys.append(y.astype(np.float64))
        cm[name] = (means + shift).reshape(-1, 1).tolist()
    truth = GroundTruth(spec.family, names, p, ys[-1], list(map(float, range(means.size))),
                        np.asarray(shifts).reshape(1, -1), class_means=cm,
                        bayes_accuracy=bayes_accuracy_1d(means, sigma, priors))
    return _bundle(names, Xs, ys, ["X1"]), truth


def _changing(flags: dict[str, np.ndarray]) -> list[str]:
    # a module changes when its mechanism differs among the labeled sources
    return sorted(name for name, values in flags.items()
                  if np.ptp(np.atleast_2d(values)[:, :-1], axis=1).max() > 0)


def _fcm_chain(spec, p, rng):
    priors = np.asarray(p["priors"], dtype=np.float64)
    count = len(p["theta1"])
    if count < 2:
        raise SpecError("theta1: need at least one source and the target")
    t1 = _per_domain(p, "theta1", count)
    o1 = _per_domain(p, "offset1", count)
    c2 = _per_domain(p, "coef2", count)
    o2 = _per_domain(p, "offset2", count)
    s1, s2 = float(p["noise1"]), float(p["noise2"])
    if s1 <= 0 or s2 <= 0:
        raise SpecError("noise1/noise2: must be positive")
    classes = np.arange(priors.size)
    names = _domain_names(count - 1)
    Xs, ys = [], []
    for k, (name, n) in enumerate(zip(names, _sizes(spec, count))):
        r = rng.split(k)
        y = r.choice(classes, n, p=priors).astype(np.float64)
        x1 = t1[k] * y + o1[k] + s1 * r.gaussian(n, 1)[:, 0]
        x2 = c2[k] * x1 + o2[k] + s2 * r.gaussian(n, 1)[:, 0]
        Xs.append(np.column_stack([x1, x2]))
        ys.append(y)
    changing = _changing({"X1": np.vstack([t1, o1]), "X2": np.vstack([c2, o2])})
    truth = GroundTruth(spec.family, names, p, ys[-1], list(map(float, classes)),
                        np.vstack([t1, o1, c2, o2]), [("Y", "X1"), ("X1", "X2")], changing)
    return _bundle(names, Xs, ys, ["X1", "X2"]), truth


def _fcm_wifi(spec, p, rng):
    lo, hi = (float(v) for v in p["y_range"])
    if not hi > lo:
        raise SpecError("y_range: need low < high")
    count = len(p["offset1"])
    o1 = _per_domain(p, "offset1", count)
    o4 = _per_domain(p, "offset4", count)
    o6 = _per_domain(p, "offset6", count)
    s = float(p["noise"])
    if s <= 0:
        raise SpecError("noise: must be positive")
    names = _domain_names(count - 1)
    Xs, ys = [], []
    for k, (name, n) in enumerate(zip(names, _sizes(spec, count))):
        r = rng.split(k)
        e = s * r.gaussian(n, 7)
        y = lo + (hi - lo) * r.uniform(n)
        x1 = 0.8 * y + o1[k] + e[:, 0]
        x2 = -0.6 * y + e[:, 1]
        x3 = 0.7 * x1 + 0.5 * x2 + 0.3 * y + e[:, 2]
        x4 = 0.5 * y + o4[k] + e[:, 3]
        x5 = 0.9 * x4 + e[:, 4]
        x6 = 0.6 * x3 + o6[k] + e[:, 5]
        x7 = e[:, 6]
        Xs.append(np.column_stack([x1, x2, x3, x4, x5, x6, x7]))
        ys.append(y)
    changing = _changing({"X1": o1, "X4": o4, "X6": o6})
    truth = GroundTruth(spec.family, names, p, ys[-1], None,
                        np.vstack([o1, o4, o6]), list(WIFI_EDGES), changing)
    return _bundle(names, Xs, ys, [f"X{i}" for i in range(1, 8)], "continuous"), truth


_BUILDERS = {
    "linear-mean": _linear_mean,
    "rotation-2d": _rotation,
    "gaussian-classes-1d": _gaussian_classes,
    "fcm-chain": _fcm_chain,
    "fcm-wifi-like": _fcm_wifi,
}


def make_synthetic(spec: SyntheticSpec) -> SyntheticResult:
    params = spec.resolved_params()
    datasets, truth = _BUILDERS[spec.family](spec, params, Rng(spec.seed).split(spec.family))
    return SyntheticResult(datasets, truth)
