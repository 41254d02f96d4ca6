import json

import networkx as nx
import numpy as np
import pytest

from shiftlab.errors import ContractError
from shiftlab.services.causal import (
    GraphInconsistencyError,
    MixedGraph,
    NumericalDegeneracyError,
    OrientationConflictError,
    cdnod_lite,
    check_alpha,
    collapse_groups,
    discover,
    dsep_oracle,
    fisher_z,
    fisher_z_test,
    markov_blanket,
    orient_with_root,
    partial_correlation,
    pc_skeleton,
    restrict,
)
from shiftlab.services.synthetic import WIFI_EDGES, SyntheticSpec, make_synthetic


def _pairs(g: MixedGraph) -> set:
    return {frozenset(e) for e in g.skeleton_edges()}


def test_fisher_z_hand_values():
    assert fisher_z(0.0, 50, 0) == 0.0
    assert fisher_z(0.5, 103, 0) == pytest.approx(5.49306, abs=1e-5)
    with pytest.raises(ContractError):
        fisher_z(0.5, 5, 2)


def test_partial_correlation_recursion():
    corr = np.array([[1.0, 0.6, 0.5], [0.6, 1.0, 0.3], [0.5, 0.3, 1.0]])
    expected = 0.45 / np.sqrt(0.75 * 0.91)
    assert partial_correlation(corr, 0, 1, [2]) == pytest.approx(expected, abs=1e-12)
    assert partial_correlation(corr, 0, 1, [2]) == pytest.approx(0.5447, abs=1e-4)
    assert partial_correlation(corr, 0, 1) == pytest.approx(0.6)


def test_partial_correlation_singular():
    with pytest.raises(NumericalDegeneracyError):
        partial_correlation(np.ones((3, 3)), 0, 1, [2])


def test_fisher_z_test_on_data():
    rng = np.random.default_rng(0)
    x = rng.normal(size=2000)
    data = np.column_stack([x, x + 0.5 * rng.normal(size=2000)])
    result = fisher_z_test(data, 0, 1, [], names=["A", "B"])
    assert (result.i, result.j) == ("A", "B")
    assert not result.independent and result.p_value < 1e-6


def test_skeleton_chain_oracle():
    chain = nx.DiGraph([("Y", "X1"), ("X1", "X2")])
    g = pc_skeleton(names=["Y", "X1", "X2"], ci_test=dsep_oracle(chain))
    assert _pairs(g) == {frozenset({"Y", "X1"}), frozenset({"X1", "X2"})}
    assert g.sepset("Y", "X2") == ("X1",)
    assert g.sepset("X2", "Y") == ("X1",)


def test_skeleton_collider_oracle():
    collider = nx.DiGraph([("X1", "X3"), ("X2", "X3")])
    g = pc_skeleton(names=["X1", "X2", "X3"], ci_test=dsep_oracle(collider))
    assert _pairs(g) == {frozenset({"X1", "X3"}), frozenset({"X2", "X3"})}
    assert g.sepset("X1", "X2") == ()


def test_skeleton_independent_variables():
    empty = nx.DiGraph()
    empty.add_nodes_from(["A", "B", "C"])
    assert _pairs(pc_skeleton(names=["A", "B", "C"], ci_test=dsep_oracle(empty))) == set()


def test_skeleton_workers_do_not_change_result():
    dag = nx.DiGraph([("Y", "X1"), ("Y", "X2"), ("X1", "X3"), ("X2", "X3"), ("X3", "X4")])
    names = ["Y", "X1", "X2", "X3", "X4"]
    one = pc_skeleton(names=names, ci_test=dsep_oracle(dag), workers=1)
    many = pc_skeleton(names=names, ci_test=dsep_oracle(dag), workers=4)
    assert one.to_dict() == many.to_dict()


def test_orientation_chain_uses_meek_rule_one():
    chain = nx.DiGraph([("Y", "X1"), ("X1", "X2")])
    skeleton = pc_skeleton(names=["Y", "X1", "X2"], ci_test=dsep_oracle(chain))
    g = orient_with_root(skeleton, "Y")
    assert g.directed_edges() == [("Y", "X1"), ("X1", "X2")]
    assert not g.undirected


def test_orientation_collider():
    collider = nx.DiGraph([("X1", "X3"), ("X2", "X3")])
    skeleton = pc_skeleton(names=["X1", "X2", "X3"], ci_test=dsep_oracle(collider))
    g = orient_with_root(skeleton, "X1")
    assert set(g.directed_edges()) == {("X1", "X3"), ("X2", "X3")}


def test_orientation_single_edge():
    g = MixedGraph(["Y", "X1"])
    g.add_undirected("Y", "X1")
    assert orient_with_root(g, "Y").directed_edges() == [("Y", "X1")]


def test_orientation_conflict_is_reported():
    collider = nx.DiGraph([("X1", "X3"), ("X2", "X3")])
    skeleton = pc_skeleton(names=["X1", "X2", "X3"], ci_test=dsep_oracle(collider))
    with pytest.raises(OrientationConflictError, match="X3"):
        orient_with_root(skeleton, "X3")
    relaxed = orient_with_root(skeleton, "X3", strict=False)
    assert set(relaxed.directed_edges()) == {("X3", "X1"), ("X3", "X2")}


def _fig2() -> MixedGraph:
    g = MixedGraph(["Y", "X1", "X2", "X3", "X4", "X5", "X6"])
    for a, b in [("X3", "X1"), ("X3", "X5"), ("Y", "X1"), ("Y", "X2"), ("X1", "X2"),
                 ("X2", "X6"), ("Y", "X4")]:
        g.add_directed(a, b)
    return g


def test_markov_blanket():
    assert markov_blanket(_fig2(), "Y") == ["X1", "X2", "X3", "X4"]
    assert markov_blanket(MixedGraph(["Y", "X1"]), "Y") == []
    chain = MixedGraph(["Y", "X1", "X2"])
    chain.add_directed("Y", "X1")
    chain.add_directed("X1", "X2")
    assert markov_blanket(chain, "Y") == ["X1"]
    with pytest.raises(ContractError):
        markov_blanket(chain, "Z")


def test_restrict_keeps_induced_edges():
    sub = restrict(_fig2(), ["Y", "X1", "X2", "X3", "X4"])
    assert sub.nodes == ["Y", "X1", "X2", "X3", "X4"]
    assert ("X2", "X6") not in sub.directed and ("X3", "X1") in sub.directed


def test_collapse_groups_by_hand():
    g = MixedGraph(["Y", "X1", "X2", "X3"])
    g.add_directed("Y", "X1")
    g.add_undirected("X1", "X2")
    g.add_directed("X2", "X3")
    gdag = collapse_groups(g)
    assert gdag.groups == (("Y",), ("X1", "X2"), ("X3",))
    assert gdag.edges == ((0, 1), (1, 2))
    assert gdag.topological_order() == [0, 1, 2]
    assert gdag.ungroup() == [("Y", "X1"), ("X2", "X3")]


def test_collapse_fully_directed_and_fully_undirected():
    directed = collapse_groups(_fig2())
    assert all(len(members) == 1 for members in directed.groups)
    assert len(directed.edges) == 7
    undirected = MixedGraph(["A", "B", "C"])
    undirected.add_undirected("A", "B")
    undirected.add_undirected("B", "C")
    one = collapse_groups(undirected)
    assert one.groups == (("A", "B", "C"),) and one.edges == ()


def test_collapse_rejects_cyclic_lift():
    g = MixedGraph(["Y", "X1", "X2"])
    g.add_undirected("Y", "X1")
    g.add_directed("X1", "X2")
    g.add_directed("X2", "Y")
    with pytest.raises(GraphInconsistencyError, match="cyclic"):
        collapse_groups(g)


def test_dot_and_json_export():
    g = MixedGraph(["S", "Y", "X1", "X2"])
    g.add_directed("S", "X1")
    g.add_directed("Y", "X1")
    g.add_undirected("X1", "X2")
    dot = g.to_dot()
    assert "Y -> X1;" in dot and "S [style=dashed];" in dot
    assert "X1 -> X2 [dir=none];" in dot
    doc = json.loads(g.to_json())
    assert doc["directed"] == [["S", "X1"], ["Y", "X1"]]
    assert MixedGraph.from_dict(g.to_dict()).to_dict() == g.to_dict()


def test_alpha_range():
    for bad in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ContractError, match="significance level"):
            check_alpha(bad)
    check_alpha(0.05)


def _fcm(theta1, seed=0, offset2=(0.0,)):
    params = {"theta1": theta1, "offset1": [0.0], "coef2": [0.5], "offset2": list(offset2)}
    return make_synthetic(SyntheticSpec("fcm-chain", params, 2000, seed))


def test_cdnod_finds_the_changing_module():
    result = _fcm([1.0, 2.0, 3.0, 2.5])
    g = cdnod_lite(result.sources, alpha=0.01)
    assert g.changing_modules == ["X1"]
    assert ("S", "X1") in g.directed and ("Y", "X1") in g.directed
    assert ("X1", "X2") in g.directed


def test_cdnod_identical_mechanisms_leave_s_isolated():
    g = cdnod_lite(_fcm([2.0, 2.0, 2.0, 2.0]).sources, alpha=0.01)
    assert g.changing_modules == []
    assert g.neighbors("S") == []


def test_cdnod_both_modules_changing():
    g = cdnod_lite(_fcm([1.0, 2.0, 3.0, 2.5], offset2=[0.0, 1.0, 2.0, 0.5]).sources, alpha=0.01)
    assert g.changing_modules == ["X1", "X2"]


def test_cdnod_needs_two_domains():
    with pytest.raises(ContractError, match="plain PC"):
        cdnod_lite(_fcm([1.0, 2.0]).sources)


def test_discover_pooled_chain():
    g = discover(_fcm([2.0, 2.0, 2.0, 2.0]).sources, alpha=0.01)
    assert g.directed_edges() == [("Y", "X1"), ("X1", "X2")]
    with pytest.raises(ContractError):
        discover(_fcm([2.0, 2.0]).sources, alpha=1.5)


def test_skeleton_from_five_variable_data():
    # X1 -> X3 <- X2, X3 -> X4 -> X5
    rng = np.random.default_rng(11)
    e = rng.normal(size=(5000, 5))
    x1, x2 = e[:, 0], e[:, 1]
    x3 = 0.8 * x1 - 0.7 * x2 + e[:, 2]
    x4 = 0.9 * x3 + e[:, 3]
    x5 = 0.6 * x4 + e[:, 4]
    g = pc_skeleton(np.column_stack([x1, x2, x3, x4, x5]), alpha=0.001)
    assert _pairs(g) == {frozenset(p) for p in [("X1", "X3"), ("X2", "X3"), ("X3", "X4"),
                                                 ("X4", "X5")]}
    assert g.sepset("X1", "X2") == ()
    assert g.sepset("X3", "X5") == ("X4",)


@pytest.mark.slow
def test_cdnod_recovers_the_wifi_like_structure():
    result = make_synthetic(SyntheticSpec("fcm-wifi-like", {}, 5000, seed=0))
    g = cdnod_lite(result.sources, alpha=0.001)
    assert g.changing_modules == result.truth.changing == ["X1", "X4", "X6"]
    expected = {frozenset(e) for e in WIFI_EDGES} | {frozenset({"S", v}) for v in ("X1", "X4", "X6")}
    assert _pairs(g) == expected
    assert g.neighbors("X7") == []
    assert set(markov_blanket(g, "Y")) == {"S", "X1", "X2", "X3", "X4"}
