"""CG-DAN: one generator per causal module of the label's Markov blanket.

Module ``i`` produces its target variable(s) from ``[parents | E_i | theta_i]``.
Only modules whose mechanism changes across domains get a latent column per
domain; the others are shared. Each module is fitted on its own with parents
fed from observed data, so modules can be trained side by side.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import networkx as nx
import numpy as np

from ..errors import ContractError, NumericalError
from ..thread_worker.train_worker import TrainJob, TrainWorker
from .causal import DOMAIN_NODE, GroupDag, MixedGraph, collapse_groups, markov_blanket, restrict
from .datasets import DomainDataset, check_feature_dims
from .gdan import (THETA_KEY, GeneratorNet, LabelPrior, ThetaMatrix, TrainConfig,
                   TrainingDivergedError, generated_tensor)
from .kernels import (KernelConfig, LabelKernel, gram_array, median_heuristic, mmd2_weighted,
                      subsample_for_median)
from .numerics import Tape, Tensor2, as_tensor
from .rmsprop import RmsProp
from .rng import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FcmModule:
    targets: tuple[str, ...]
    parents: tuple[str, ...]
    theta_dim: int
    noise_dim: int = 1
    hidden: tuple[int, ...] = (64,)
    net: GeneratorNet | None = None
    theta: ThetaMatrix | None = None
    kernel: KernelConfig | None = None
    trace: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.targets:
            raise ContractError("a module needs at least one target variable")
        if self.noise_dim < 1:
            raise ContractError(f"module {self.name}: noise dimension must be >= 1")
        if set(self.targets) & set(self.parents):
            raise ContractError(f"module {self.name}: a variable cannot be its own parent")

    @property
    def name(self) -> str:
        return "+".join(self.targets)

    @property
    def fitted(self) -> bool:
        return self.net is not None and self.theta is not None

    @property
    def changing(self) -> bool:
        return self.theta_dim > 0

    def to_dict(self) -> dict:
        return {"targets": list(self.targets), "parents": list(self.parents),
                "theta_dim": self.theta_dim, "noise_dim": self.noise_dim,
                "hidden": list(self.hidden),
                "net": None if self.net is None else self.net.to_dict(),
                "theta": None if self.theta is None else self.theta.to_dict(),
                "kernel": None if self.kernel is None else self.kernel.to_dict(),
                "trace": list(self.trace)}

    @classmethod
    def from_dict(cls, data: dict) -> "FcmModule":
        return cls(tuple(data["targets"]), tuple(data["parents"]), int(data["theta_dim"]),
                   int(data.get("noise_dim", 1)), tuple(data.get("hidden", (64,))),
                   None if data.get("net") is None else GeneratorNet.from_dict(data["net"]),
                   None if data.get("theta") is None else ThetaMatrix.from_dict(data["theta"]),
                   None if data.get("kernel") is None else KernelConfig.from_dict(data["kernel"]),
                   tuple(float(v) for v in data.get("trace", ())))


def _topological(modules: Sequence[FcmModule], label: str) -> list[FcmModule]:
    owner = {t: m.name for m in modules for t in m.targets}
    g = nx.DiGraph()
    g.add_nodes_from(m.name for m in modules)
    for m in modules:
        for p in m.parents:
            if p != label:
                if p not in owner:
                    raise ContractError(f"module {m.name}: parent {p!r} is produced by no module")
                g.add_edge(owner[p], m.name)
    if not nx.is_directed_acyclic_graph(g):
        raise ContractError("module parent structure is cyclic")
    by_name = {m.name: m for m in modules}
    return [by_name[n] for n in nx.lexicographical_topological_sort(g)]


@dataclass(frozen=True)
class CgdanModel:
    modules: tuple[FcmModule, ...]
    prior: LabelPrior | None
    domains: tuple[str, ...]
    label_name: str = "Y"
    feature_names: tuple[str, ...] = ()
    label_kind: str = "categorical"
    graph: MixedGraph | None = None
    group_dag: GroupDag | None = None
    seed: int = 0

    kind = "cgdan"

    def __post_init__(self) -> None:
        ordered = tuple(_topological(self.modules, self.label_name))
        object.__setattr__(self, "modules", ordered)
        covered = [t for m in ordered for t in m.targets]
        if len(covered) != len(set(covered)):
            raise ContractError(f"a variable is produced by more than one module: {covered}")
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(covered))

    @property
    def target_domain(self) -> str:
        return self.domains[-1]

    @property
    def trace(self) -> tuple[float, ...]:
        traces = [m.trace for m in self.modules if m.trace]
        if not traces:
            return ()
        length = min(len(t) for t in traces)
        return tuple(float(sum(t[k] for t in traces)) for k in range(length))

    def module(self, name: str) -> FcmModule:
        for m in self.modules:
            if m.name == name or name in m.targets:
                return m
        raise ContractError(f"unknown module {name!r}; modules are {[m.name for m in self.modules]}")

    def with_module(self, fitted: FcmModule) -> "CgdanModel":
        return replace(self, modules=tuple(fitted if m.name == fitted.name else m for m in self.modules))

    def sample(self, domain: str, n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        cols = ancestral_generate(self, domain, n=n, rng=rng)
        return _stack(cols, self.feature_names), cols[self.label_name]

    def to_dict(self) -> dict:
        return {"modules": [m.to_dict() for m in self.modules],
                "prior": None if self.prior is None else self.prior.to_dict(),
                "domains": list(self.domains), "label_name": self.label_name,
                "feature_names": list(self.feature_names), "label_kind": self.label_kind,
                "graph": None if self.graph is None else self.graph.to_dict(),
                "group_dag": None if self.group_dag is None else self.group_dag.to_dict(),
                "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "CgdanModel":
        return cls(tuple(FcmModule.from_dict(m) for m in data["modules"]),
                   None if data.get("prior") is None else LabelPrior.from_dict(data["prior"]),
                   tuple(data["domains"]), data.get("label_name", "Y"),
                   tuple(data.get("feature_names", ())), data.get("label_kind", "categorical"),
                   None if data.get("graph") is None else MixedGraph.from_dict(data["graph"]),
                   None if data.get("group_dag") is None else GroupDag.from_dict(data["group_dag"]),
                   int(data.get("seed", 0)))


def _stack(cols: Mapping[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    return np.column_stack([cols[n] for n in names])


def build_cgdan(gdag: GroupDag, changing: Sequence[str], cfg: TrainConfig,
                label_name: str = "Y", prior: LabelPrior | None = None,
                domains: Sequence[str] = (), feature_names: Sequence[str] = ()) -> CgdanModel:
    """One module per non-label group; only changing groups get a theta input."""
    if label_name not in {n for g in gdag.groups for n in g}:
        raise ContractError(f"label {label_name!r} is not in the group graph")
    y_group = gdag.group_of(label_name)
    if gdag.parents(y_group):
        raise ContractError(f"label {label_name!r} must be a root of the causal graph")
    if len(gdag.groups[y_group]) > 1:
        raise ContractError(f"label {label_name!r} shares an undirected group with "
                            f"{[n for n in gdag.groups[y_group] if n != label_name]}")
    changing = set(changing)
    modules = []
    for k in gdag.topological_order():
        if k == y_group:
            continue
        targets = gdag.groups[k]
        parents = tuple(n for p in gdag.parents(k) for n in gdag.groups[p])
        theta_dim = cfg.module_theta_dim if changing & set(targets) else 0
        modules.append(FcmModule(tuple(targets), parents, theta_dim, cfg.module_noise_dim,
                                 tuple(cfg.module_hidden)))
    if not feature_names:
        feature_names = [t for m in modules for t in m.targets]
    return CgdanModel(tuple(modules), prior, tuple(domains), label_name, tuple(feature_names),
                      "categorical" if prior is None or prior.categorical else "continuous",
                      group_dag=gdag, seed=cfg.seed)


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

def _context(module: FcmModule, label: str, prior: LabelPrior, cols: Mapping[str, np.ndarray],
             n: int) -> np.ndarray:
    parts = [prior.encode(cols[p]) if p == label else np.asarray(cols[p]).reshape(-1, 1)
             for p in module.parents]
    return np.hstack(parts) if parts else np.zeros((n, 0))


def _context_dim(module: FcmModule, label: str, prior: LabelPrior) -> int:
    return sum(prior.context_dim if p == label else 1 for p in module.parents)


def _resolve_assignment(model: CgdanModel, selector: str | Mapping[str, str]) -> dict[str, str]:
    if isinstance(selector, str):
        if selector not in model.domains:
            raise ContractError(f"unknown domain {selector!r}; known domains are {list(model.domains)}")
        return {m.name: selector for m in model.modules}
    assignment = {}
    for key, domain in selector.items():
        module = model.module(key)
        if domain not in model.domains:
            raise ContractError(f"module {module.name}: unknown domain {domain!r}; "
                                f"known domains are {list(model.domains)}")
        assignment[module.name] = domain
    missing = [m.name for m in model.modules if m.name not in assignment]
    if missing:
        raise ContractError(f"assignment names no domain for module(s) {missing}")
    return assignment


def ancestral_generate(model: CgdanModel, selector: str | Mapping[str, str], labels=None,
                       n: int | None = None, rng: Rng | None = None,
                       noise: Mapping[str, np.ndarray] | None = None,
                       upto: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Sample Y then every module in topological order, feeding generated parents forward.

    ``selector`` is one domain for all modules or a per-module domain choice.
    ``upto`` limits generation to the named modules (their ancestors must be included).
    """
    if model.prior is None:
        raise ContractError("model has no label prior; train it first")
    assignment = _resolve_assignment(model, selector)
    rng = rng or Rng(model.seed)
    if labels is None:
        if n is None:
            raise ContractError("ancestral_generate needs labels or a sample size")
        labels = model.prior.sample(n, rng.split("labels"))
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = labels.size
    cols: dict[str, np.ndarray] = {model.label_name: labels}
    wanted = None if upto is None else set(upto)
    for m in model.modules:
        if wanted is not None and m.name not in wanted:
            continue
        if not m.fitted:
            raise ContractError(f"module {m.name} is not fitted")
        missing = [p for p in m.parents if p not in cols]
        if missing:
            raise ContractError(f"module {m.name}: parents {missing} were not generated")
        fixed = None if noise is None else noise.get(m.name)
        out = m.net.apply(_context(m, model.label_name, model.prior, cols, n),
                          m.theta.column(assignment[m.name]), rng.split(m.name), fixed)
        for k, t in enumerate(m.targets):
            cols[t] = out[:, k]
    return cols


def recombine(model: CgdanModel, assignment: Mapping[str, str], n: int, rng: Rng
              ) -> tuple[np.ndarray, np.ndarray]:
    """Sample a virtual domain where each module uses the theta of its assigned domain."""
    cols = ancestral_generate(model, dict(assignment), n=n, rng=rng)
    return _stack(cols, model.feature_names), cols[model.label_name]


# --------------------------------------------------------------------------
# per-module training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModuleTerm:
    """One MMD term of a module loss: real targets against generated ones.

    The w_* grams weight the target kernel by a constant kernel on the parent
    values paired with each row (``None`` means no parents).
    """

    real: np.ndarray
    context: np.ndarray
    noise: np.ndarray
    onehot: np.ndarray
    w_pp: np.ndarray | None = None
    w_pq: np.ndarray | None = None
    w_qq: np.ndarray | None = None
    weight: float = 1.0


@dataclass(frozen=True)
class ParentKernel:
    """Product of a label kernel (for Y) and an RBF mixture on the X parents."""

    label: str
    parents: tuple[str, ...]
    x_kernel: KernelConfig | None
    prior: LabelPrior
    y_kernel: LabelKernel | None = None

    def gram(self, a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray],
             include_label: bool = True) -> np.ndarray | None:
        out = None
        xs = [p for p in self.parents if p != self.label]
        if xs and self.x_kernel is not None:
            out = gram_array(_stack(a, xs), _stack(b, xs), self.x_kernel)
        if include_label and self.label in self.parents:
            ly = self.y_kernel.gram(a[self.label], b[self.label])
            out = ly if out is None else out * ly
        return out


def module_loss_and_grads(net: GeneratorNet, params: dict[str, np.ndarray],
                          terms: Sequence[ModuleTerm], kernel: KernelConfig
                          ) -> tuple[float, dict[str, np.ndarray]]:
    keys = sorted(params)
    with Tape() as tape:
        weights = {k: as_tensor(params[k]) for k in keys}
        loss: Tensor2 | None = None
        for t in terms:
            generated = generated_tensor(net, weights, t.context, t.noise, t.onehot)
            term = mmd2_weighted(t.real, generated, kernel, t.w_pp, t.w_pq, t.w_qq)
            if t.weight != 1.0:
                term = t.weight * term
            loss = term if loss is None else loss + term
    grads = tape.gradient(loss, [weights[k] for k in keys])
    return loss.item(), dict(zip(keys, grads))


def _columns(ds: DomainDataset, names: Sequence[str]) -> dict[str, np.ndarray]:
    block = ds.columns(list(names))
    return {n: block[:, k] for k, n in enumerate(names)}


def _median_kernel(blocks: Sequence[np.ndarray], rng: Rng) -> KernelConfig:
    return median_heuristic(subsample_for_median(np.vstack(blocks), rng))


def train_module(module: FcmModule, sources: Sequence[DomainDataset], target: DomainDataset | None,
                 cfg: TrainConfig, prior: LabelPrior, domains: Sequence[str],
                 upstream: CgdanModel | None = None, label: str = "Y") -> FcmModule:
    """Fit one module's conditional P(targets | parents) across domains.

    Source terms feed observed parents. The target term feeds observed parents
    too, unless the label is a parent: then the label is drawn from the prior
    and the other parents come from the already fitted ``upstream`` modules.
    """
    domains = tuple(domains)
    rng = Rng(cfg.seed).split("cgdan").split(module.name)
    x_parents = [p for p in module.parents if p != label]
    src_t = [ds.columns(list(module.targets)) for ds in sources]
    src_p = [_columns(ds, module.parents) for ds in sources]
    kernel = _median_kernel(src_t, rng.split("median"))
    x_kernel = (_median_kernel([np.column_stack([c[p] for p in x_parents]) for c in src_p],
                               rng.split("median-parents")) if x_parents else None)
    pk = ParentKernel(label, module.parents, x_kernel, prior,
                      prior.label_kernel() if label in module.parents else None)

    net = GeneratorNet.init(_context_dim(module, label, prior), module.noise_dim, module.theta_dim,
                            module.hidden, len(module.targets), cfg.activation, rng.split("init"))
    theta = ThetaMatrix.init(module.theta_dim, domains, rng.split("theta"))
    params = {**net.params, THETA_KEY: theta.values}

    use_target = target is not None and cfg.alpha > 0
    tgt_t = tgt_p = None
    if use_target:
        tgt_t = target.columns(list(module.targets))
        tgt_p = _columns(target, x_parents)
        if label in module.parents and x_parents:
            if upstream is None:
                raise ContractError(f"module {module.name}: target term needs fitted upstream modules")
            producers = {upstream.module(p).name for p in x_parents}
            needed = set(producers)
            for m in reversed(upstream.modules):
                if m.name in needed:
                    needed.update(upstream.module(p).name for p in m.parents if p != label)
        else:
            needed = set()

    opt = RmsProp(params, lr=cfg.lr, rho=cfg.rho, eps=cfg.eps)
    stream = rng.split("batch")
    b = cfg.batch_size
    trace: list[float] = []
    for it in range(cfg.iterations):
        r = stream.split(it)
        terms = []
        for k, ds in enumerate(sources):
            rk = r.split(k)
            idx = rk.split("rows").integers(ds.n, b)
            par = {p: v[idx] for p, v in src_p[k].items()}
            w = pk.gram(par, par)
            terms.append(ModuleTerm(src_t[k][idx], _context(module, label, prior, par, b),
                                    rk.split("noise").gaussian(b, module.noise_dim),
                                    theta.onehot(ds.domain, b), w, w, w))
        if use_target:
            rt = r.split("target")
            idx = rt.split("rows").integers(target.n, b)
            real_par = {p: v[idx] for p, v in tgt_p.items()}
            if label in module.parents:
                y = prior.sample(b, rt.split("labels"))
                gen_par = ({label: y} if not needed else
                           ancestral_generate(upstream, target.domain, y, rng=rt.split("ancestral"),
                                              upto=sorted(needed)))
                gen_par = {**gen_par, label: y}
            else:
                gen_par = real_par
            terms.append(ModuleTerm(tgt_t[idx], _context(module, label, prior, gen_par, b),
                                    rt.split("noise").gaussian(b, module.noise_dim),
                                    theta.onehot(target.domain, b),
                                    pk.gram(real_par, real_par, False),
                                    pk.gram(real_par, gen_par, False),
                                    pk.gram(gen_par, gen_par, False), cfg.alpha))
        try:
            loss, grads = module_loss_and_grads(net, params, terms, kernel)
            params = opt.step(params, grads)
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise NumericalError("parameter update produced non-finite values")
        except NumericalError as exc:
            raise TrainingDivergedError(it, str(exc), module.name) from exc
        trace.append(loss)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("CG-DAN module %s iteration %d/%d loss %.6f",
                     module.name, it + 1, cfg.iterations, loss)

    return replace(module, net=net.with_params(params), theta=ThetaMatrix(params[THETA_KEY], domains),
                   kernel=kernel, trace=tuple(trace))


def _stages(model: CgdanModel) -> list[list[FcmModule]]:
    """Modules grouped by depth below the label; a stage only needs earlier stages."""
    owner = {t: m for m in model.modules for t in m.targets}
    depth: dict[str, int] = {}
    for m in model.modules:
        depth[m.name] = 1 + max((depth[owner[p].name] for p in m.parents if p != model.label_name),
                                default=-1)
    stages: dict[int, list[FcmModule]] = {}
    for m in model.modules:
        stages.setdefault(depth[m.name], []).append(m)
    return [stages[k] for k in sorted(stages)]


def fit_cgdan(model: CgdanModel, sources: Sequence[DomainDataset], target: DomainDataset | None,
              cfg: TrainConfig, workers: int = 1,
              status_cb: Callable[[str], None] | None = None,
              progress_cb: Callable[[int, int], None] | None = None) -> CgdanModel:
    """Train every module, stage by stage, modules of a stage in parallel."""
    if model.prior is None:
        raise ContractError("model needs a label prior before training")
    done = 0
    total = len(model.modules)
    for stage in _stages(model):
        upstream = model
        jobs = [TrainJob(m.name, (lambda m=m: train_module(
            m, sources, target, cfg, model.prior, model.domains, upstream, model.label_name)))
            for m in stage]
        results = TrainWorker(workers, status_cb=status_cb).run(jobs)
        for m in stage:
            model = model.with_module(results[m.name])
            done += 1
            if progress_cb:
                progress_cb(done, total)
    return model


def train_cgdan(sources: Sequence[DomainDataset], target: DomainDataset, graph: MixedGraph,
                cfg: TrainConfig, workers: int = 1,
                status_cb: Callable[[str], None] | None = None,
                progress_cb: Callable[[int, int], None] | None = None) -> CgdanModel:
    """Markov blanket -> group graph -> modules -> per-module training."""
    if not sources:
        raise ContractError("training needs at least one labeled source domain")
    check_feature_dims([*sources, target])
    label = sources[0].label_name
    # the domain index only marks changing modules; it is never generated
    mb = [n for n in markov_blanket(graph, label) if n != DOMAIN_NODE]
    if not mb:
        raise ContractError(f"label {label!r} has an empty Markov blanket; nothing to model")
    sub = restrict(graph, [label, *mb])
    changing = [n for n in graph.changing_modules if n in mb]
    gdag = collapse_groups(sub)
    prior = LabelPrior.from_labels(np.concatenate([ds.y for ds in sources]),
                                   sources[0].label_kind == "categorical")
    domains = tuple(ds.domain for ds in sources) + (target.domain,)
    features = [f for f in sources[0].feature_names if f in mb]
    model = build_cgdan(gdag, changing, cfg, label, prior, domains, features)
    model = replace(model, graph=graph)
    log.info("CG-DAN: %d module(s) over %s; changing: %s", len(model.modules), features,
             changing or "none")
    return fit_cgdan(model, sources, target, cfg, workers, status_cb, progress_cb)
