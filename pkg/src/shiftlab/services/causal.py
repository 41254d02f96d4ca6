"""Constraint-based structure learning over continuous tabular variables.

PC-stable with Fisher-z partial-correlation tests, orientation with declared
root variables (the label Y, and the domain index S when present), Meek
propagation, Markov blankets and collapsing of undirected components.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Sequence

import networkx as nx
import numpy as np
from scipy.stats import norm

from ..errors import ContractError, ShiftLabError
from ..thread_worker.train_worker import TrainJob, TrainWorker
from .datasets import DomainDataset, check_feature_dims

log = logging.getLogger(__name__)

DOMAIN_NODE = "S"
DEFAULT_ALPHA = 0.05
_BARE_ID = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_DOT_KEYWORDS = {"node", "edge", "graph", "digraph", "subgraph", "strict"}


class NumericalDegeneracyError(ShiftLabError):
    """A CI test hit a singular correlation matrix."""


class OrientationConflictError(ShiftLabError):
    """Two orientation rules demand opposite directions for one edge."""


class GraphInconsistencyError(ShiftLabError):
    """Orientations do not form an acyclic structure."""


def _pair(a: str, b: str) -> frozenset:
    return frozenset((a, b))


def _dot_id(name: str) -> str:
    if _BARE_ID.match(name) and name.lower() not in _DOT_KEYWORDS:
        return name
    escaped = name.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


@dataclass
class MixedGraph:
    """Nodes with directed and undirected edges, plus PC bookkeeping."""

    nodes: list[str]
    directed: set[tuple[str, str]] = field(default_factory=set)
    undirected: set[frozenset] = field(default_factory=set)
    sepsets: dict[frozenset, tuple[str, ...]] = field(default_factory=dict)
    changing_modules: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise ContractError(f"duplicate node names in {self.nodes}")

    # ------------------------------------------------------------ queries
    def _order(self, names: Iterable[str]) -> list[str]:
        pos = {n: i for i, n in enumerate(self.nodes)}
        return sorted(names, key=pos.__getitem__)

    def has_edge(self, a: str, b: str) -> bool:
        return _pair(a, b) in self.undirected or (a, b) in self.directed or (b, a) in self.directed

    def is_undirected(self, a: str, b: str) -> bool:
        return _pair(a, b) in self.undirected

    def parents(self, v: str) -> list[str]:
        return self._order(a for a, b in self.directed if b == v)

    def children(self, v: str) -> list[str]:
        return self._order(b for a, b in self.directed if a == v)

    def undirected_neighbors(self, v: str) -> list[str]:
        return self._order(next(iter(e - {v})) for e in self.undirected if v in e)

    def neighbors(self, v: str) -> list[str]:
        return self._order({*self.parents(v), *self.children(v), *self.undirected_neighbors(v)})

    def sepset(self, a: str, b: str) -> tuple[str, ...] | None:
        return self.sepsets.get(_pair(a, b))

    # ------------------------------------------------------------ edits
    def _check_node(self, *names: str) -> None:
        for n in names:
            if n not in self.nodes:
                raise ContractError(f"unknown node {n!r}")

    def add_undirected(self, a: str, b: str) -> None:
        self._check_node(a, b)
        if a == b:
            raise ContractError(f"self-loop on {a!r}")
        self.directed.discard((a, b))
        self.directed.discard((b, a))
        self.undirected.add(_pair(a, b))

    def add_directed(self, a: str, b: str) -> None:
        self._check_node(a, b)
        if a == b:
            raise ContractError(f"self-loop on {a!r}")
        self.undirected.discard(_pair(a, b))
        self.directed.discard((b, a))
        self.directed.add((a, b))

    def remove_edge(self, a: str, b: str) -> None:
        self.undirected.discard(_pair(a, b))
        self.directed.discard((a, b))
        self.directed.discard((b, a))

    def copy(self) -> "MixedGraph":
        return MixedGraph(list(self.nodes), set(self.directed), set(self.undirected),
                          dict(self.sepsets), list(self.changing_modules))

    # ------------------------------------------------------------ views
    def directed_graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.directed)
        return g

    def undirected_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(tuple(self._order(e)) for e in self.undirected)
        return g

    def directed_edges(self) -> list[tuple[str, str]]:
        pos = {n: i for i, n in enumerate(self.nodes)}
        return sorted(self.directed, key=lambda e: (pos[e[0]], pos[e[1]]))

    def undirected_edges(self) -> list[tuple[str, str]]:
        pos = {n: i for i, n in enumerate(self.nodes)}
        return sorted((tuple(self._order(e)) for e in self.undirected),
                      key=lambda e: (pos[e[0]], pos[e[1]]))

    def skeleton_edges(self) -> set[frozenset]:
        return {_pair(a, b) for a, b in self.directed} | set(self.undirected)

    # ------------------------------------------------------------ export
    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "directed": [list(e) for e in self.directed_edges()],
            "undirected": [list(e) for e in self.undirected_edges()],
            "changing_modules": list(self.changing_modules),
            "sepsets": [[*self._order(k), list(v)] for k, v in
                        sorted(self.sepsets.items(), key=lambda kv: self._order(kv[0]))],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MixedGraph":
        g = cls(list(data["nodes"]))
        for a, b in data.get("directed", []):
            g.add_directed(a, b)
        for a, b in data.get("undirected", []):
            g.add_undirected(a, b)
        for a, b, z in data.get("sepsets", []):
            g.sepsets[_pair(a, b)] = tuple(z)
        g.changing_modules = list(data.get("changing_modules", []))
        return g

    def to_json(self) -> str:
        doc = self.to_dict()
        doc.pop("sepsets")
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_dot(self) -> str:
        lines = ["digraph G {"]
        for n in self.nodes:
            style = " [style=dashed]" if n == DOMAIN_NODE else ""
            lines.append(f"  {_dot_id(n)}{style};")
        for a, b in self.directed_edges():
            lines.append(f"  {_dot_id(a)} -> {_dot_id(b)};")
        for a, b in self.undirected_edges():
            lines.append(f"  {_dot_id(a)} -> {_dot_id(b)} [dir=none];")
        lines.append("}")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# conditional independence
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CiTestResult:
    i: str
    j: str
    z: tuple[str, ...]
    statistic: float
    p_value: float
    independent: bool


CiTest = Callable[[str, str, tuple[str, ...]], CiTestResult]


def partial_correlation(corr: np.ndarray, i: int, j: int, z: Sequence[int] = ()) -> float:
    """r(i, j | z) from the inverse of the correlation submatrix."""
    idx = [i, j, *z]
    sub = np.asarray(corr, dtype=np.float64)[np.ix_(idx, idx)]
    if not np.all(np.isfinite(sub)):
        raise NumericalDegeneracyError(f"correlation submatrix for {idx} has non-finite entries "
                                       f"(constant column?)")
    if np.linalg.cond(sub) > 1e12:
        raise NumericalDegeneracyError(f"singular correlation submatrix for variables {idx}")
    prec = np.linalg.inv(sub)
    r = -prec[0, 1] / np.sqrt(prec[0, 0] * prec[1, 1])
    return float(np.clip(r, -1.0, 1.0))


def fisher_z(r: float, n: int, k: int) -> float:
    if n - k - 3 <= 0:
        raise ContractError(f"Fisher-z needs n > |Z| + 3, got n={n}, |Z|={k}")
    r = float(np.clip(r, -1.0 + 1e-15, 1.0 - 1e-15))
    return float(np.sqrt(n - k - 3) * np.arctanh(r))


def fisher_z_test(data, i: int, j: int, z: Sequence[int], alpha: float = DEFAULT_ALPHA,
                  names: Sequence[str] | None = None) -> CiTestResult:
    data = np.asarray(data, dtype=np.float64)
    corr = np.corrcoef(data, rowvar=False)
    return _fisher_from_corr(corr, data.shape[0], i, j, tuple(z), alpha, names)


def _fisher_from_corr(corr, n, i, j, z, alpha, names) -> CiTestResult:
    r = partial_correlation(corr, i, j, z)
    t = fisher_z(r, n, len(z))
    label = (lambda k: names[k]) if names is not None else str
    return CiTestResult(label(i), label(j), tuple(label(k) for k in z), t,
                        float(2.0 * norm.sf(abs(t))), abs(t) <= norm.ppf(1.0 - alpha / 2.0))


class FisherZ:
    """Fisher-z CI test by name over one data matrix (correlations computed once)."""

    def __init__(self, data: np.ndarray, names: Sequence[str], alpha: float = DEFAULT_ALPHA) -> None:
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != len(names):
            raise ContractError(f"data has shape {data.shape} for {len(names)} names")
        check_alpha(alpha)
        self.names = list(names)
        self.alpha = alpha
        self.n = data.shape[0]
        with np.errstate(invalid="ignore", divide="ignore"):
            self.corr = np.corrcoef(data, rowvar=False)
        self._pos = {n: k for k, n in enumerate(self.names)}

    def __call__(self, a: str, b: str, z: tuple[str, ...]) -> CiTestResult:
        return _fisher_from_corr(self.corr, self.n, self._pos[a], self._pos[b],
                                 tuple(self._pos[v] for v in z), self.alpha, self.names)


def dsep_oracle(dag: nx.DiGraph) -> CiTest:
    """Exact CI answers read off a known DAG by d-separation."""
    check = getattr(nx, "is_d_separator", None) or nx.d_separated

    def test(a: str, b: str, z: tuple[str, ...]) -> CiTestResult:
        indep = bool(check(dag, {a}, {b}, set(z)))
        return CiTestResult(a, b, tuple(z), 0.0 if indep else np.inf, 1.0 if indep else 0.0, indep)

    return test


def check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"significance level must lie in (0, 1), got {alpha}")


# --------------------------------------------------------------------------
# PC
# --------------------------------------------------------------------------

def _edge_test(ci_test: CiTest, a: str, b: str, adj_a: list[str], adj_b: list[str],
               depth: int) -> tuple[str, ...] | None:
    """First separating set of size ``depth`` found among a's then b's neighbours."""
    seen = set()
    for pool in (adj_a, adj_b):
        for z in combinations(pool, depth):
            if z in seen:
                continue
            seen.add(z)
            try:
                if ci_test(a, b, z).independent:
                    return z
            except NumericalDegeneracyError as exc:
                raise NumericalDegeneracyError(f"edge {a}-{b} given {list(z)}: {exc}") from exc
    return None


def pc_skeleton(data=None, alpha: float = DEFAULT_ALPHA, names: Sequence[str] | None = None,
                ci_test: CiTest | None = None, workers: int = 1) -> MixedGraph:
    """PC-stable edge removal by increasing conditioning-set size.

    Either ``data`` (rows x variables) or an explicit ``ci_test`` over
    ``names`` is required. Adjacency sets are frozen per stage and removals
    applied in variable order, so the result does not depend on ``workers``.
    """
    if ci_test is None:
        if data is None:
            raise ContractError("pc_skeleton needs data or a CI test")
        data = np.asarray(data, dtype=np.float64)
        names = list(names) if names is not None else [f"X{k + 1}" for k in range(data.shape[1])]
        ci_test = FisherZ(data, names, alpha)
    elif names is None:
        raise ContractError("pc_skeleton with a custom CI test needs variable names")
    names = list(names)
    if len(names) < 2:
        raise ContractError("structure learning needs at least two variables")

    g = MixedGraph(names)
    for a, b in combinations(names, 2):
        g.add_undirected(a, b)

    worker = TrainWorker(workers)
    depth = 0
    while True:
        adj = {v: g.undirected_neighbors(v) for v in names}
        candidates = [(a, b) for a, b in g.undirected_edges()
                      if len(adj[a]) - 1 >= depth or len(adj[b]) - 1 >= depth]
        if not candidates:
            break
        jobs = [TrainJob(f"{a}|{b}", (lambda a=a, b=b: _edge_test(
            ci_test, a, b, [v for v in adj[a] if v != b], [v for v in adj[b] if v != a], depth)))
            for a, b in candidates]
        found = worker.run(jobs)
        removed = 0
        for a, b in candidates:
            z = found[f"{a}|{b}"]
            if z is not None:
                g.remove_edge(a, b)
                g.sepsets[_pair(a, b)] = z
                removed += 1
        log.debug("PC depth %d: %d test edge(s), %d removed", depth, len(candidates), removed)
        depth += 1
    return g


def _conflict(msg: str, strict: bool) -> None:
    if strict:
        raise OrientationConflictError(msg)
    log.warning("%s; keeping the existing orientation", msg)


def _orient(g: MixedGraph, a: str, b: str, roots: set[str], strict: bool, reason: str) -> bool:
    """Direct a -> b if the edge is still undirected; report contradictions."""
    if (a, b) in g.directed:
        return False
    if (b, a) in g.directed:
        _conflict(f"edge {a}-{b}: {reason} needs {a} -> {b} but {b} -> {a} is already set", strict)
        return False
    if b in roots:
        _conflict(f"edge {a}-{b}: {reason} would point into root {b}", strict)
        return False
    g.add_directed(a, b)
    return True


def _meek(g: MixedGraph, roots: set[str], strict: bool) -> None:
    changed = True
    while changed:
        changed = False
        for a, b in g.undirected_edges():
            for x, y in ((a, b), (b, a)):
                if not g.is_undirected(x, y):
                    continue
                # R1: p -> x - y, p and y non-adjacent
                if any(not g.has_edge(p, y) for p in g.parents(x) if p != y):
                    changed |= _orient(g, x, y, roots, strict, "Meek rule 1")
                    continue
                # R2: x -> m -> y with x - y
                if any((m, y) in g.directed for m in g.children(x)):
                    changed |= _orient(g, x, y, roots, strict, "Meek rule 2")
                    continue
                # R3: x - c -> y, x - d -> y, c and d non-adjacent
                mids = [c for c in g.undirected_neighbors(x) if (c, y) in g.directed]
                if any(not g.has_edge(c, d) for c, d in combinations(mids, 2)):
                    changed |= _orient(g, x, y, roots, strict, "Meek rule 3")


def orient_with_root(skeleton: MixedGraph, roots: str | Sequence[str], strict: bool = True
                     ) -> MixedGraph:
    """PDAG from a skeleton: root edges first, then v-structures, then Meek rules.

    Edges between two roots point from the earlier to the later root.
    """
    roots = [roots] if isinstance(roots, str) else list(roots)
    for r in roots:
        if r not in skeleton.nodes:
            raise ContractError(f"root {r!r} is not a node of the graph")
    g = skeleton.copy()
    root_set = set(roots)

    for k, r in enumerate(roots):
        for v in g.neighbors(r):
            if v in roots[:k]:
                continue
            if g.is_undirected(r, v):
                g.add_directed(r, v)
            elif (v, r) in g.directed:
                _conflict(f"edge {v}-{r}: points into root {r}", strict)

    for b in g.nodes:
        for a, c in combinations(g.neighbors(b), 2):
            if g.has_edge(a, c):
                continue
            sep = g.sepset(a, c)
            if sep is None or b in sep:
                continue
            _orient(g, a, b, root_set, strict, f"v-structure {a} -> {b} <- {c}")
            _orient(g, c, b, root_set, strict, f"v-structure {a} -> {b} <- {c}")

    _meek(g, root_set, strict)
    if not nx.is_directed_acyclic_graph(g.directed_graph()):
        raise GraphInconsistencyError(f"oriented edges contain a cycle: {g.directed_edges()}")
    return g


def _pooled(datasets: Sequence[DomainDataset]) -> tuple[np.ndarray, list[str]]:
    unlabeled = [ds.domain for ds in datasets if not ds.labeled]
    if unlabeled:
        raise ContractError(f"structure learning needs labeled data; unlabeled domain(s) {unlabeled}")
    check_feature_dims(datasets)
    first = datasets[0]
    names = [first.label_name, *first.feature_names]
    data = np.vstack([np.column_stack([ds.y, ds.X]) for ds in datasets])
    return data, names


def discover(datasets: DomainDataset | Sequence[DomainDataset], alpha: float = DEFAULT_ALPHA,
             root: str | None = None, workers: int = 1, strict: bool = False) -> MixedGraph:
    """Plain PC on pooled labeled data with the label as the root."""
    if isinstance(datasets, DomainDataset):
        datasets = [datasets]
    check_alpha(alpha)
    data, names = _pooled(datasets)
    root = root or names[0]
    skeleton = pc_skeleton(data, alpha, names, workers=workers)
    return orient_with_root(skeleton, [root], strict)


def cdnod_lite(datasets: Sequence[DomainDataset], alpha: float = DEFAULT_ALPHA,
               root: str | None = None, workers: int = 1, strict: bool = False) -> MixedGraph:
    """PC over the pooled data plus an integer domain-index column ``S``.

    Variables adjacent to ``S`` are reported as changing modules.
    """
    if len(datasets) < 2:
        raise ContractError("domain-index discovery needs at least 2 domains; "
                            "use plain PC (discover) for a single domain")
    check_alpha(alpha)
    data, names = _pooled(datasets)
    if DOMAIN_NODE in names:
        raise ContractError(f"variable name {DOMAIN_NODE!r} is reserved for the domain index")
    index = np.concatenate([np.full(ds.n, float(k)) for k, ds in enumerate(datasets)])
    root = root or names[0]
    skeleton = pc_skeleton(np.column_stack([index, data]), alpha, [DOMAIN_NODE, *names],
                           workers=workers)
    g = orient_with_root(skeleton, [DOMAIN_NODE, root], strict)
    g.changing_modules = sorted(g.neighbors(DOMAIN_NODE))
    if root in g.changing_modules:
        log.warning("Label %s depends on the domain index; class priors appear to shift", root)
    return g


# --------------------------------------------------------------------------
# Markov blanket and groups
# --------------------------------------------------------------------------

def markov_blanket(g: MixedGraph, y: str) -> list[str]:
    """Parents, children and co-parents of ``y``; undirected links of children count as co-parents."""
    if y not in g.nodes:
        raise ContractError(f"unknown node {y!r}")
    mb = set(g.parents(y)) | set(g.children(y)) | set(g.undirected_neighbors(y))
    for c in g.children(y):
        mb.update(g.parents(c))
        mb.update(g.undirected_neighbors(c))
    mb.discard(y)
    return g._order(mb)


def restrict(g: MixedGraph, keep: Iterable[str]) -> MixedGraph:
    """Induced subgraph on ``keep`` (node order preserved)."""
    keep = set(keep)
    sub = MixedGraph([n for n in g.nodes if n in keep])
    for a, b in g.directed:
        if a in keep and b in keep:
            sub.add_directed(a, b)
    for e in g.undirected:
        if e <= keep:
            sub.add_undirected(*sorted(e))
    sub.changing_modules = [n for n in g.changing_modules if n in keep]
    return sub


@dataclass(frozen=True)
class GroupDag:
    """Partition of the nodes into groups with directed edges between groups."""

    groups: tuple[tuple[str, ...], ...]
    edges: tuple[tuple[int, int], ...]
    member_edges: tuple[tuple[str, str], ...] = ()

    def group_of(self, node: str) -> int:
        for k, members in enumerate(self.groups):
            if node in members:
                return k
        raise ContractError(f"node {node!r} is in no group")

    def parents(self, k: int) -> list[int]:
        return sorted(a for a, b in self.edges if b == k)

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(len(self.groups)))
        g.add_edges_from(self.edges)
        return g

    def topological_order(self) -> list[int]:
        return list(nx.lexicographical_topological_sort(self.graph()))

    def ungroup(self) -> list[tuple[str, str]]:
        return list(self.member_edges)

    def to_dict(self) -> dict:
        return {"groups": [list(g) for g in self.groups], "edges": [list(e) for e in self.edges],
                "member_edges": [list(e) for e in self.member_edges]}

    @classmethod
    def from_dict(cls, data: dict) -> "GroupDag":
        return cls(tuple(tuple(g) for g in data["groups"]),
                   tuple((int(a), int(b)) for a, b in data["edges"]),
                   tuple((a, b) for a, b in data.get("member_edges", [])))


def collapse_groups(pdag: MixedGraph) -> GroupDag:
    """Undirected components become groups; directed edges are lifted between groups."""
    pos = {n: i for i, n in enumerate(pdag.nodes)}
    components = [sorted(c, key=pos.__getitem__)
                  for c in nx.connected_components(pdag.undirected_graph())]
    components.sort(key=lambda c: pos[c[0]])
    which = {n: k for k, c in enumerate(components) for n in c}
    edges, members = set(), []
    for a, b in pdag.directed_edges():
        ga, gb = which[a], which[b]
        if ga == gb:
            raise GraphInconsistencyError(f"directed edge {a} -> {b} lies inside one undirected group")
        edges.add((ga, gb))
        members.append((a, b))
    result = GroupDag(tuple(tuple(c) for c in components), tuple(sorted(edges)), tuple(members))
    if not nx.is_directed_acyclic_graph(result.graph()):
        raise GraphInconsistencyError(
            f"lifted group graph is cyclic: {[(components[a], components[b]) for a, b in sorted(edges)]}")
    return result
