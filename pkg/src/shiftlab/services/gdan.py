"""G-DAN: one generator X = g(Y, E; theta) shared by every domain.

Each domain owns a column of the latent matrix ``Theta``; a sample from
domain ``s`` sees ``theta = Theta @ onehot(s)``. Training matches the joint
(X, Y) distribution of every labeled source and, weighted by ``alpha``, the
feature marginal of the unlabeled target.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericalError, ShiftLabError
from .datasets import DomainDataset, check_feature_dims
from .kernels import (FIXED_BANDWIDTHS, KernelConfig, LabelKernel, fixed_kernel,
                      label_kernel_for, median_heuristic, mmd2_joint, mmd2_marginal,
                      subsample_for_median)
from .numerics import ACTIVATIONS, Tape, Tensor2, as_tensor, concat_cols, matmul, transpose
from .rmsprop import RmsProp
from .rng import Rng

log = logging.getLogger(__name__)

THETA_KEY = "Theta"


class TrainingDivergedError(ShiftLabError):
    def __init__(self, iteration: int, message: str, module: str | None = None) -> None:
        where = f"module {module}, " if module else ""
        super().__init__(f"training diverged ({where}iteration {iteration}): {message}")
        self.iteration = iteration
        self.module = module


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    batch_size: int = 128
    iterations: int = 2000
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    hidden: tuple[int, ...] = (128,)
    activation: str = "tanh"
    noise_dim: int = 20
    theta_dim: int = 1
    kernel_mode: str = "median"
    bandwidths: tuple[float, ...] = FIXED_BANDWIDTHS
    module_hidden: tuple[int, ...] = (64,)
    module_noise_dim: int = 1
    module_theta_dim: int = 1
    seed: int = 0
    log_every: int = 100

    def __post_init__(self) -> None:
        if not self.alpha >= 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")
        if self.batch_size < 2:
            raise ContractError(f"batch size must be >= 2, got {self.batch_size}")
        if self.iterations < 1:
            raise ContractError(f"iterations must be >= 1, got {self.iterations}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.kernel_mode not in ("median", "fixed"):
            raise ContractError(f"kernel mode must be 'median' or 'fixed', got {self.kernel_mode!r}")
        if self.noise_dim < 1 or self.module_noise_dim < 1:
            raise ContractError("noise dimension must be >= 1")
        if self.theta_dim < 0 or self.module_theta_dim < 0:
            raise ContractError("theta dimension must be >= 0")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        for key in ("hidden", "bandwidths", "module_hidden"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


# --------------------------------------------------------------------------
# label prior
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelPrior:
    """Class probabilities for categorical Y, or an empirical pool for real Y."""

    classes: tuple[float, ...] | None = None
    probs: tuple[float, ...] | None = None
    pool: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.classes is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if p.shape != (len(self.classes),) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ContractError(f"class probabilities must be non-negative and sum to 1, got {self.probs}")
        elif not self.pool:
            raise ContractError("label prior needs classes or a non-empty label pool")

    @classmethod
    def from_labels(cls, labels: np.ndarray, categorical: bool = True) -> "LabelPrior":
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        if labels.size == 0:
            raise ContractError("label prior needs at least one label")
        if not categorical:
            return cls(pool=tuple(float(v) for v in labels))
        classes, counts = np.unique(labels, return_counts=True)
        probs = counts / counts.sum()
        probs[-1] = 1.0 - probs[:-1].sum()
        return cls(tuple(float(c) for c in classes), tuple(float(p) for p in probs))

    @property
    def categorical(self) -> bool:
        return self.classes is not None

    @property
    def context_dim(self) -> int:
        return len(self.classes) if self.categorical else 1

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        if self.categorical:
            return rng.choice(np.asarray(self.classes), n, p=np.asarray(self.probs)).astype(np.float64)
        return rng.choice(np.asarray(self.pool), n).astype(np.float64)

    def encode(self, labels) -> np.ndarray:
        """One-hot rows for class labels, a single real column otherwise."""
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        if not self.categorical:
            return labels.reshape(-1, 1)
        classes = np.asarray(self.classes)
        hits = labels[:, None] == classes[None, :]
        unknown = ~hits.any(axis=1)
        if unknown.any():
            raise ContractError(f"unknown label value {labels[unknown][0]!r}; "
                                f"declared labels are {list(self.classes)}")
        return hits.astype(np.float64)

    def label_kernel(self) -> LabelKernel:
        if self.categorical:
            return label_kernel_for(np.asarray(self.classes), True, self.classes)
        pool = np.asarray(self.pool).reshape(-1, 1)
        return label_kernel_for(subsample_for_median(pool, Rng(0).split("label-kernel")), False)

    def to_dict(self) -> dict:
        return {"classes": None if self.classes is None else list(self.classes),
                "probs": None if self.probs is None else list(self.probs),
                "pool": None if self.pool is None else list(self.pool)}

    @classmethod
    def from_dict(cls, data: dict) -> "LabelPrior":
        def tup(v):
            return None if v is None else tuple(float(x) for x in v)
        return cls(tup(data.get("classes")), tup(data.get("probs")), tup(data.get("pool")))


# --------------------------------------------------------------------------
# generator and latent matrix
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorNet:
    """Feed-forward net over the input ``[context | E | theta]``.

    ``context`` is the encoded label for G-DAN and the parent columns for a
    causal module. With ``hidden=()`` the net is a single affine map.
    """

    context_dim: int
    noise_dim: int
    theta_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    activation: str = "tanh"
    params: dict[str, np.ndarray] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        for key, (fan_in, fan_out) in zip(self.weight_keys(), self._layer_shapes()):
            w = self.params.get(f"W{key}")
            b = self.params.get(f"b{key}")
            if w is None or b is None:
                continue
            if np.shape(w) != (fan_in, fan_out) or np.shape(b) != (1, fan_out):
                raise ContractError(f"layer {key}: expected W {(fan_in, fan_out)} and b {(1, fan_out)}, "
                                    f"got {np.shape(w)} and {np.shape(b)}")

    @property
    def input_dim(self) -> int:
        return self.context_dim + self.noise_dim + self.theta_dim

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def weight_keys(self) -> range:
        return range(self.n_layers)

    def _layer_shapes(self) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden, self.out_dim]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self._layer_shapes())

    @classmethod
    def init(cls, context_dim: int, noise_dim: int, theta_dim: int, hidden: Sequence[int],
             out_dim: int, activation: str, rng: Rng) -> "GeneratorNet":
        """Fan-in scaled uniform initialisation U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        shell = cls(context_dim, noise_dim, theta_dim, tuple(hidden), out_dim, activation)
        params = {}
        for k, (fan_in, fan_out) in enumerate(shell._layer_shapes()):
            bound = 1.0 / np.sqrt(max(fan_in, 1))
            params[f"W{k}"] = bound * (2.0 * rng.split(f"W{k}").uniform((fan_in, fan_out)) - 1.0)
            params[f"b{k}"] = bound * (2.0 * rng.split(f"b{k}").uniform((1, fan_out)) - 1.0)
        return replace(shell, params=params)

    def with_params(self, params: dict[str, np.ndarray]) -> "GeneratorNet":
        return replace(self, params={k: np.asarray(v, dtype=np.float64) for k, v in params.items()
                                     if k != THETA_KEY})

    def forward_tensor(self, weights: dict[str, Tensor2], inputs: Tensor2) -> Tensor2:
        act = ACTIVATIONS[self.activation]
        h = inputs
        for k in self.weight_keys():
            h = h @ weights[f"W{k}"] + weights[f"b{k}"]
            if k < self.n_layers - 1:
                h = act(h)
        return h

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.input_dim:
            raise ContractError(f"generator expects {self.input_dim} input columns, got {inputs.shape}")
        h = inputs
        for k in self.weight_keys():
            h = h @ self.params[f"W{k}"] + self.params[f"b{k}"]
            if k < self.n_layers - 1:
                h = np.tanh(h) if self.activation == "tanh" else (
                    np.maximum(h, 0.0) if self.activation == "relu" else h)
        if not np.all(np.isfinite(h)):
            raise NumericalError("generator produced non-finite values")
        return h

    def apply(self, context: np.ndarray, theta, rng: Rng | None = None,
              noise: np.ndarray | None = None) -> np.ndarray:
        """Generate one row per context row for a fixed theta vector."""
        context = np.asarray(context, dtype=np.float64)
        if context.ndim == 1:
            context = context.reshape(-1, 1) if self.context_dim == 1 else context.reshape(1, -1)
        n = context.shape[0]
        if context.shape[1] != self.context_dim:
            raise ContractError(f"context has {context.shape[1]} columns, generator expects {self.context_dim}")
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.theta_dim:
            raise ContractError(f"theta has length {theta.size}, generator expects {self.theta_dim}")
        if noise is None:
            if rng is None:
                raise ContractError("generator needs either an rng or explicit noise")
            noise = rng.gaussian(n, self.noise_dim)
        noise = np.asarray(noise, dtype=np.float64).reshape(n, self.noise_dim)
        return self.forward(np.hstack([context, noise, np.tile(theta, (n, 1))]))

    def to_dict(self) -> dict:
        return {"context_dim": self.context_dim, "noise_dim": self.noise_dim,
                "theta_dim": self.theta_dim, "hidden": list(self.hidden),
                "out_dim": self.out_dim, "activation": self.activation,
                "params": {k: v.tolist() for k, v in sorted(self.params.items())}}

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorNet":
        params = {k: np.asarray(v, dtype=np.float64).reshape(len(v), -1)
                  for k, v in data["params"].items()}
        return cls(int(data["context_dim"]), int(data["noise_dim"]), int(data["theta_dim"]),
                   tuple(int(h) for h in data["hidden"]), int(data["out_dim"]),
                   data["activation"], params)


@dataclass(frozen=True)
class ThetaMatrix:
    """d x (m+1) latent columns: m sources then the target."""

    values: np.ndarray
    domains: tuple[str, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if values.shape[1] != len(self.domains):
            raise ContractError(f"Theta has {values.shape[1]} columns for {len(self.domains)} domains")
        if len(set(self.domains)) != len(self.domains):
            raise ContractError(f"duplicate domain names {self.domains}")
        object.__setattr__(self, "values", values)

    @classmethod
    def init(cls, dim: int, domains: Sequence[str], rng: Rng, scale: float = 0.1) -> "ThetaMatrix":
        if dim == 0:
            return cls(np.zeros((0, len(domains))), tuple(domains))
        return cls(scale * rng.gaussian(dim, len(domains)), tuple(domains))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def index(self, domain: str) -> int:
        try:
            return self.domains.index(domain)
        except ValueError:
            raise ContractError(f"unknown domain {domain!r}; known domains are {list(self.domains)}") from None

    def onehot(self, domain: str, n: int = 1) -> np.ndarray:
        row = np.zeros((n, len(self.domains)))
        row[:, self.index(domain)] = 1.0
        return row

    def column(self, domain: str) -> np.ndarray:
        return (self.values @ self.onehot(domain).T).reshape(-1)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "domains": list(self.domains)}

    @classmethod
    def from_dict(cls, data: dict) -> "ThetaMatrix":
        domains = tuple(data["domains"])
        return cls(np.asarray(data["values"], dtype=np.float64).reshape(-1, len(domains)), domains)


def generate(gen: GeneratorNet, theta, labels, rng: Rng, prior: LabelPrior,
             noise: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One generated X row per label; labels are returned unchanged alongside."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    return gen.apply(prior.encode(labels), theta, rng, noise), labels


def interpolate_domains(theta_a, theta_b, count: int) -> list[np.ndarray]:
    a = np.asarray(theta_a, dtype=np.float64).reshape(-1)
    b = np.asarray(theta_b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ContractError(f"theta lengths differ: {a.size} vs {b.size}")
    if count < 2:
        raise ContractError(f"interpolation needs count >= 2, got {count}")
    return [(1.0 - t) * a + t * b for t in np.linspace(0.0, 1.0, count)]


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainBatch:
    """One minibatch term: real rows plus everything needed to generate a match."""

    real_x: np.ndarray
    real_y: np.ndarray | None
    gen_y: np.ndarray
    context: np.ndarray
    noise: np.ndarray
    onehot: np.ndarray


@dataclass(frozen=True)
class GdanBatch:
    sources: tuple[DomainBatch, ...]
    target: DomainBatch | None


def generated_tensor(gen: GeneratorNet, weights: dict[str, Tensor2], context: np.ndarray,
                     noise: np.ndarray, onehot: np.ndarray) -> Tensor2:
    """Taped generator output; per-row theta is ``onehot @ Theta.T``."""
    parts = [context, noise]
    if gen.theta_dim:
        parts.append(matmul(onehot, transpose(weights[THETA_KEY])))
    return gen.forward_tensor(weights, concat_cols(parts))


def _generated(gen: GeneratorNet, weights: dict[str, Tensor2], b: DomainBatch) -> Tensor2:
    return generated_tensor(gen, weights, b.context, b.noise, b.onehot)


def _objective(gen: GeneratorNet, weights: dict[str, Tensor2], batch: GdanBatch, alpha: float,
               kernel: KernelConfig, lk: LabelKernel) -> Tensor2:
    loss = None
    for b in batch.sources:
        term = mmd2_joint((b.real_x, b.real_y), (_generated(gen, weights, b), b.gen_y), kernel, lk)
        loss = term if loss is None else loss + term
    if alpha > 0 and batch.target is not None:
        loss = loss + alpha * mmd2_marginal(batch.target.real_x, _generated(gen, weights, batch.target),
                                            kernel)
    return loss


def gdan_loss(gen: GeneratorNet, params: dict[str, np.ndarray], batch: GdanBatch, alpha: float,
              kernel: KernelConfig, lk: LabelKernel) -> float:
    weights = {k: as_tensor(v) for k, v in params.items()}
    return _objective(gen, weights, batch, alpha, kernel, lk).item()


def gdan_loss_and_grads(gen: GeneratorNet, params: dict[str, np.ndarray], batch: GdanBatch,
                        alpha: float, kernel: KernelConfig, lk: LabelKernel
                        ) -> tuple[float, dict[str, np.ndarray]]:
    """Loss of Sum_s J_s + alpha*M and its gradient for every entry of ``params``."""
    keys = sorted(params)
    with Tape() as tape:
        weights = {k: as_tensor(params[k]) for k in keys}
        loss = _objective(gen, weights, batch, alpha, kernel, lk)
    grads = tape.gradient(loss, [weights[k] for k in keys])
    return loss.item(), dict(zip(keys, grads))


def _rows(rng: Rng, n: int, size: int) -> np.ndarray:
    return rng.integers(n, size)


def draw_batch(sources: Sequence[DomainDataset], target_x: np.ndarray | None,
               gen: GeneratorNet, theta: ThetaMatrix, prior: LabelPrior, batch_size: int,
               rng: Rng, target_domain: str | None = None) -> GdanBatch:
    """Minibatches drawn with replacement, with fresh noise and generated labels."""
    terms = []
    for k, ds in enumerate(sources):
        r = rng.split(k)
        idx = _rows(r.split("rows"), ds.n, batch_size)
        gen_y = prior.sample(batch_size, r.split("labels"))
        terms.append(DomainBatch(ds.X[idx], ds.y[idx], gen_y, prior.encode(gen_y),
                                 r.split("noise").gaussian(batch_size, gen.noise_dim),
                                 theta.onehot(ds.domain, batch_size)))
    target = None
    if target_x is not None and target_domain is not None:
        r = rng.split("target")
        idx = _rows(r.split("rows"), target_x.shape[0], batch_size)
        gen_y = prior.sample(batch_size, r.split("labels"))
        target = DomainBatch(target_x[idx], None, gen_y, prior.encode(gen_y),
                             r.split("noise").gaussian(batch_size, gen.noise_dim),
                             theta.onehot(target_domain, batch_size))
    return GdanBatch(tuple(terms), target)


def source_kernel(sources: Sequence[DomainDataset], cfg: TrainConfig, rng: Rng) -> KernelConfig:
    if cfg.kernel_mode == "fixed":
        return fixed_kernel(cfg.bandwidths)
    pooled = np.vstack([ds.X for ds in sources])
    return median_heuristic(subsample_for_median(pooled, rng))


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GdanModel:
    gen: GeneratorNet
    theta: ThetaMatrix
    prior: LabelPrior
    kernel: KernelConfig
    label_kernel: LabelKernel
    feature_names: tuple[str, ...]
    label_name: str = "Y"
    label_kind: str = "categorical"
    trace: tuple[float, ...] = ()
    seed: int = 0

    kind = "gdan"

    @property
    def domains(self) -> tuple[str, ...]:
        return self.theta.domains

    @property
    def target_domain(self) -> str:
        return self.theta.domains[-1]

    def sample_at(self, theta, n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        labels = self.prior.sample(n, rng.split("labels"))
        return generate(self.gen, theta, labels, rng.split("noise"), self.prior)

    def sample(self, domain: str, n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        return self.sample_at(self.theta.column(domain), n, rng)

    def to_dict(self) -> dict:
        return {"gen": self.gen.to_dict(), "theta": self.theta.to_dict(),
                "prior": self.prior.to_dict(), "kernel": self.kernel.to_dict(),
                "label_kernel": self.label_kernel.to_dict(),
                "feature_names": list(self.feature_names), "label_name": self.label_name,
                "label_kind": self.label_kind, "trace": list(self.trace), "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "GdanModel":
        return cls(GeneratorNet.from_dict(data["gen"]), ThetaMatrix.from_dict(data["theta"]),
                   LabelPrior.from_dict(data["prior"]), KernelConfig.from_dict(data["kernel"]),
                   LabelKernel.from_dict(data["label_kernel"]), tuple(data["feature_names"]),
                   data.get("label_name", "Y"), data.get("label_kind", "categorical"),
                   tuple(float(v) for v in data.get("trace", ())), int(data.get("seed", 0)))


def _check_inputs(sources: Sequence[DomainDataset], target: DomainDataset) -> None:
    if not sources:
        raise ContractError("training needs at least one labeled source domain")
    unlabeled = [ds.domain for ds in sources if not ds.labeled]
    if unlabeled:
        raise ContractError(f"source domain(s) without labels: {unlabeled}")
    if target.n == 0:
        raise ContractError("target features are empty")
    check_feature_dims([*sources, target])


def train_gdan(sources: Sequence[DomainDataset], target: DomainDataset, cfg: TrainConfig,
               progress_cb: Callable[[int, int], None] | None = None) -> GdanModel:
    """Fit the shared generator and every Theta column jointly with RMSProp."""
    _check_inputs(sources, target)
    rng = Rng(cfg.seed).split("gdan")
    categorical = sources[0].label_kind == "categorical"
    prior = LabelPrior.from_labels(np.concatenate([ds.y for ds in sources]), categorical)
    domains = tuple(ds.domain for ds in sources) + (target.domain,)
    gen = GeneratorNet.init(prior.context_dim, cfg.noise_dim, cfg.theta_dim, cfg.hidden,
                            target.dim, cfg.activation, rng.split("init"))
    theta = ThetaMatrix.init(cfg.theta_dim, domains, rng.split("theta"))
    kernel = source_kernel(sources, cfg, rng.split("median"))
    lk = prior.label_kernel()
    log.info("G-DAN: %d source domain(s), %d generator parameters, bandwidths %s",
             len(sources), gen.param_count, [round(s, 4) for s in kernel.bandwidths])

    params = {**gen.params, THETA_KEY: theta.values}
    opt = RmsProp(params, lr=cfg.lr, rho=cfg.rho, eps=cfg.eps)
    stream = rng.split("batch")
    target_x = target.X if cfg.alpha > 0 else None
    trace: list[float] = []
    for it in range(cfg.iterations):
        batch = draw_batch(sources, target_x, gen, theta, prior, cfg.batch_size,
                           stream.split(it), target.domain)
        try:
            loss, grads = gdan_loss_and_grads(gen, params, batch, cfg.alpha, kernel, lk)
            params = opt.step(params, grads)
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise NumericalError("parameter update produced non-finite values")
        except NumericalError as exc:
            raise TrainingDivergedError(it, str(exc)) from exc
        trace.append(loss)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("G-DAN iteration %d/%d loss %.6f", it + 1, cfg.iterations, loss)
        if progress_cb:
            progress_cb(it + 1, cfg.iterations)

    return GdanModel(gen.with_params(params), ThetaMatrix(params[THETA_KEY], domains), prior,
                     kernel, lk, sources[0].feature_names, sources[0].label_name,
                     sources[0].label_kind, tuple(trace), cfg.seed)
