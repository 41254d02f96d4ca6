"""RBF kernel mixtures and V-statistic MMD estimators.

All estimators return 1x1 ``Tensor2`` values so they can sit inside a taped
loss; generated samples passed as ``Tensor2`` receive gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from ..errors import ContractError, ShapeError, ShiftLabError
from .numerics import Tensor2, as_tensor, exp, mul, scale, sqdist, total

MEDIAN_MULTIPLIERS: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
FIXED_BANDWIDTHS: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0)
MEDIAN_MAX_ROWS = 2000

KernelMode = Literal["fixed", "median"]


class DegenerateBandwidthError(ShiftLabError):
    """Every pairwise distance is zero, so no bandwidth can be chosen."""


@dataclass(frozen=True)
class KernelConfig:
    bandwidths: tuple[float, ...]
    mode: KernelMode = "median"

    def __post_init__(self) -> None:
        if not self.bandwidths:
            raise ContractError("kernel needs at least one bandwidth")
        if any(not (s > 0 and np.isfinite(s)) for s in self.bandwidths):
            raise DegenerateBandwidthError(f"bandwidths must be positive, got {self.bandwidths}")

    @property
    def size(self) -> int:
        return len(self.bandwidths)

    def to_dict(self) -> dict:
        return {"bandwidths": list(self.bandwidths), "mode": self.mode}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelConfig":
        return cls(tuple(float(s) for s in data["bandwidths"]), data.get("mode", "median"))


@dataclass(frozen=True)
class LabelKernel:
    """Kernel l(y, y') on labels: delta on class codes, or RBF on real labels."""

    kind: Literal["delta", "rbf"] = "delta"
    classes: tuple[float, ...] | None = None
    bandwidth: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "rbf" and not (self.bandwidth and self.bandwidth > 0):
            raise DegenerateBandwidthError("rbf label kernel needs a positive bandwidth")

    def gram(self, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        y1 = np.asarray(y1, dtype=np.float64).reshape(-1)
        y2 = np.asarray(y2, dtype=np.float64).reshape(-1)
        if self.kind == "delta":
            if self.classes is not None:
                known = np.asarray(self.classes)
                for y in (y1, y2):
                    bad = ~np.isin(y, known)
                    if bad.any():
                        raise ContractError(f"unknown label value {y[bad][0]!r}; "
                                            f"declared labels are {list(self.classes)}")
            return (y1[:, None] == y2[None, :]).astype(np.float64)
        d2 = (y1[:, None] - y2[None, :]) ** 2
        return np.exp(-d2 / (2.0 * self.bandwidth ** 2))

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "classes": None if self.classes is None else list(self.classes),
                "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, data: dict) -> "LabelKernel":
        classes = data.get("classes")
        return cls(data["kind"], None if classes is None else tuple(classes), data.get("bandwidth"))


def as_sample(x) -> Tensor2:
    """Rows are points; a 1-D array is a sample of scalars."""
    if isinstance(x, Tensor2):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return as_tensor(arr)


def rbf_mixture(x, x2, cfg: KernelConfig) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1)
    if x.shape != x2.shape:
        raise ShapeError(f"rbf_mixture: dimensions differ {x.shape} vs {x2.shape}")
    d2 = float(np.sum((x - x2) ** 2))
    return float(sum(np.exp(-d2 / (2.0 * s * s)) for s in cfg.bandwidths))


def median_heuristic(data, multipliers: Sequence[float] = MEDIAN_MULTIPLIERS) -> KernelConfig:
    """Bandwidths = multiplier x median pairwise Euclidean distance."""
    arr = as_sample(data).data
    if arr.shape[0] < 2:
        raise ContractError("median heuristic needs at least two rows")
    med = float(np.median(pdist(arr)))
    if not med > 0:
        raise DegenerateBandwidthError("median pairwise distance is zero (all points identical)")
    return KernelConfig(tuple(float(m) * med for m in multipliers), "median")


def fixed_kernel(bandwidths: Sequence[float] = FIXED_BANDWIDTHS) -> KernelConfig:
    return KernelConfig(tuple(float(s) for s in bandwidths), "fixed")


def gram(a, b, cfg: KernelConfig) -> Tensor2:
    """Kernel matrix k(a_i, b_j), differentiable w.r.t. both inputs."""
    d2 = sqdist(a, b)
    out = None
    for s in cfg.bandwidths:
        term = exp(scale(d2, -1.0 / (2.0 * s * s)))
        out = term if out is None else out + term
    return out


def gram_array(a: np.ndarray, b: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Tape-free kernel matrix for constant (observed) blocks."""
    d2 = cdist(as_sample(a).data, as_sample(b).data, "sqeuclidean")
    return sum(np.exp(-d2 / (2.0 * s * s)) for s in cfg.bandwidths)


def _check_pair(p: Tensor2, q: Tensor2) -> None:
    if p.rows == 0 or q.rows == 0:
        raise ContractError("MMD needs two non-empty samples")
    if p.cols != q.cols:
        raise ShapeError(f"MMD samples differ in feature dimension: {p.shape} vs {q.shape}")


def mmd2_weighted(sample_p, sample_q, cfg: KernelConfig,
                  w_pp: np.ndarray | None = None, w_pq: np.ndarray | None = None,
                  w_qq: np.ndarray | None = None) -> Tensor2:
    """V-statistic MMD^2 with the feature kernel multiplied by constant
    context grams (label or parent kernels); ``None`` means all ones."""
    p, q = as_sample(sample_p), as_sample(sample_q)
    _check_pair(p, q)
    n, m = p.rows, q.rows

    def block(a, b, w):
        k = gram(a, b, cfg)
        return total(k if w is None else mul(k, w))

    pp = block(p, p, w_pp)
    pq = block(p, q, w_pq)
    qq = block(q, q, w_qq)
    return scale(pp, 1.0 / (n * n)) + scale(pq, -2.0 / (n * m)) + scale(qq, 1.0 / (m * m))


def mmd2_marginal(sample_p, sample_q, cfg: KernelConfig) -> Tensor2:
    return mmd2_weighted(sample_p, sample_q, cfg)


def mmd2_joint(sample_p: tuple, sample_q: tuple, cfg: KernelConfig, lk: LabelKernel) -> Tensor2:
    """MMD^2 of paired (X, Y) samples under the product kernel k(x,x')l(y,y')."""
    xp, yp = sample_p
    xq, yq = sample_q
    yp = np.asarray(yp, dtype=np.float64).reshape(-1)
    yq = np.asarray(yq, dtype=np.float64).reshape(-1)
    return mmd2_weighted(xp, xq, cfg, lk.gram(yp, yp), lk.gram(yp, yq), lk.gram(yq, yq))


def label_kernel_for(labels: np.ndarray, categorical: bool,
                     classes: Sequence[float] | None = None) -> LabelKernel:
    if categorical:
        return LabelKernel("delta", tuple(float(c) for c in (classes if classes is not None
                                                             else np.unique(labels))))
    med = median_heuristic(np.asarray(labels, dtype=np.float64).reshape(-1, 1), (1.0,))
    return LabelKernel("rbf", None, med.bandwidths[0])


def subsample_for_median(data: np.ndarray, rng, max_rows: int = MEDIAN_MAX_ROWS) -> np.ndarray:
    if data.shape[0] <= max_rows:
        return data
    idx = np.sort(rng.permutation(data.shape[0])[:max_rows])
    return data[idx]
