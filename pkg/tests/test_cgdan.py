from itertools import combinations, product

import numpy as np
import pytest

from shiftlab.errors import ContractError
from shiftlab.services.adaptation import compare_models
from shiftlab.services.causal import DOMAIN_NODE, GroupDag, MixedGraph, cdnod_lite, fisher_z_test
from shiftlab.services.cgdan import (
    CgdanModel,
    FcmModule,
    ancestral_generate,
    build_cgdan,
    recombine,
    train_cgdan,
    train_module,
)
from shiftlab.services.datasets import DomainDataset
from shiftlab.services.gdan import GeneratorNet, LabelPrior, ThetaMatrix, TrainConfig
from shiftlab.services.kernels import (
    DegenerateBandwidthError,
    LabelKernel,
    median_heuristic,
    mmd2_joint,
)
from shiftlab.services.rng import Rng
from shiftlab.services.synthetic import SyntheticSpec, make_synthetic

PRIOR = LabelPrior((0.0, 1.0), (0.5, 0.5))
DOMAINS = ("s1", "s2", "target")
CHAIN = GroupDag((("Y",), ("X1",), ("X2",)), ((0, 1), (1, 2)))


def _affine(context_dim: int, theta_dim: int, weights: list[float]) -> GeneratorNet:
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    return GeneratorNet(context_dim, 1, theta_dim, (), 1, "identity",
                        {"W0": w, "b0": np.zeros((1, 1))})


def _hand_wired(modules_reversed: bool = False) -> CgdanModel:
    # X1 = 2Y + E1 + theta, X2 = 0.5 X1 + E2 (theta only on X1)
    x1 = FcmModule(("X1",), ("Y",), 1, net=_affine(2, 1, [0.0, 2.0, 1.0, 1.0]),
                   theta=ThetaMatrix(np.array([[0.0, 5.0, 0.0]]), DOMAINS))
    x2 = FcmModule(("X2",), ("X1",), 0, net=_affine(1, 0, [0.5, 1.0]),
                   theta=ThetaMatrix(np.zeros((0, 3)), DOMAINS))
    modules = (x2, x1) if modules_reversed else (x1, x2)
    return CgdanModel(modules, PRIOR, DOMAINS, feature_names=("X1", "X2"))


ZERO_NOISE = {"X1": np.zeros((1, 1)), "X2": np.zeros((1, 1))}


def test_build_chain_modules():
    model = build_cgdan(CHAIN, ["X1"], TrainConfig(), prior=PRIOR, domains=DOMAINS)
    assert [m.name for m in model.modules] == ["X1", "X2"]
    assert model.module("X1").theta_dim == 1 and model.module("X1").parents == ("Y",)
    assert model.module("X2").theta_dim == 0 and model.module("X2").parents == ("X1",)
    assert model.feature_names == ("X1", "X2")


def test_build_without_changes_is_domain_invariant():
    model = build_cgdan(CHAIN, [], TrainConfig(), prior=PRIOR, domains=DOMAINS)
    assert all(m.theta_dim == 0 for m in model.modules)


def test_build_two_parent_module():
    gdag = GroupDag((("Y",), ("X1",), ("X2",)), ((0, 1), (0, 2), (1, 2)))
    model = build_cgdan(gdag, [], TrainConfig(), prior=PRIOR, domains=DOMAINS)
    assert model.module("X1").parents == ("Y",)
    assert model.module("X2").parents == ("Y", "X1")


def test_build_requires_label_root():
    gdag = GroupDag((("X1",), ("Y",)), ((0, 1),))
    with pytest.raises(ContractError, match="root"):
        build_cgdan(gdag, [], TrainConfig(), prior=PRIOR, domains=DOMAINS)


def test_hand_wired_chain():
    cols = ancestral_generate(_hand_wired(), "s1", labels=[1.0], noise=ZERO_NOISE)
    assert cols["X1"].tolist() == [2.0]
    assert cols["X2"].tolist() == [1.0]


def test_module_order_does_not_matter():
    a = _hand_wired().sample("s2", 50, Rng(4))
    b = _hand_wired(modules_reversed=True).sample("s2", 50, Rng(4))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_recombine_matches_single_domain_sampling():
    model = _hand_wired()
    x, y = recombine(model, {"X1": "s2", "X2": "s2"}, 30, Rng(9))
    x2, y2 = model.sample("s2", 30, Rng(9))
    assert np.array_equal(x, x2) and np.array_equal(y, y2)


def test_recombine_uses_each_module_domain():
    cols = ancestral_generate(_hand_wired(), {"X1": "s2", "X2": "s1"}, labels=[1.0],
                              noise=ZERO_NOISE)
    assert cols["X1"].tolist() == [7.0]
    assert cols["X2"].tolist() == [3.5]


def test_assignment_errors():
    model = _hand_wired()
    with pytest.raises(ContractError, match="no domain"):
        recombine(model, {"X1": "s1"}, 5, Rng(0))
    with pytest.raises(ContractError, match="unknown domain"):
        recombine(model, {"X1": "s1", "X2": "elsewhere"}, 5, Rng(0))
    with pytest.raises(ContractError, match="unknown domain"):
        model.sample("elsewhere", 5, Rng(0))


def test_unfitted_module_cannot_generate():
    model = build_cgdan(CHAIN, ["X1"], TrainConfig(), prior=PRIOR, domains=DOMAINS)
    with pytest.raises(ContractError, match="not fitted"):
        ancestral_generate(model, "s1", n=3)


def test_module_rejects_own_parent():
    with pytest.raises(ContractError):
        FcmModule(("X1",), ("X1",), 0)


def test_constant_target_column_has_no_bandwidth():
    rng = np.random.default_rng(0)
    data = np.column_stack([np.ones(50), rng.normal(size=50)])
    sources = [DomainDataset("s1", data, rng.integers(0, 2, 50))]
    cfg = TrainConfig(iterations=1, batch_size=8, module_hidden=(4,))
    with pytest.raises(DegenerateBandwidthError):
        train_module(FcmModule(("X1",), ("Y",), 0), sources, None, cfg, PRIOR, ("s1", "target"))


def _chain_graph() -> MixedGraph:
    # Y -> X2 keeps X2 inside the label's blanket
    g = MixedGraph(["Y", "X1", "X2"])
    g.add_directed("Y", "X1")
    g.add_directed("Y", "X2")
    g.add_directed("X1", "X2")
    g.changing_modules = ["X1"]
    return g


def _fcm_chain(n: int = 300, seed: int = 0):
    spec = SyntheticSpec("fcm-chain", {"theta1": [1.0, 2.0, 1.5], "offset1": [0.0], "coef2": [0.5],
                                       "offset2": [0.0]}, n, seed)
    return make_synthetic(spec)


def test_train_cgdan_smoke_and_determinism():
    data = _fcm_chain()
    cfg = TrainConfig(iterations=5, batch_size=16, module_hidden=(8,), seed=1, log_every=0)
    ticks = []
    a = train_cgdan(data.sources, data.target, _chain_graph(), cfg,
                    progress_cb=lambda done, total: ticks.append((done, total)))
    b = train_cgdan(data.sources, data.target, _chain_graph(), cfg, workers=2)
    assert ticks == [(1, 2), (2, 2)]
    assert all(m.fitted and len(m.trace) == 5 for m in a.modules)
    assert a.module("X1").theta.values.shape == (1, 3)
    assert a.module("X2").theta.values.shape == (0, 3)
    for ma, mb in zip(a.modules, b.modules):
        assert ma.trace == mb.trace
    x, y = a.sample("target", 20, Rng(2))
    assert x.shape == (20, 2) and set(y) <= {0.0, 1.0}
    again = CgdanModel.from_dict(a.to_dict())
    assert np.array_equal(again.sample("s1", 20, Rng(2))[0], a.sample("s1", 20, Rng(2))[0])


def test_train_cgdan_needs_a_blanket():
    data = _fcm_chain()
    g = MixedGraph(["Y", "X1", "X2"])
    with pytest.raises(ContractError, match="Markov blanket"):
        train_cgdan(data.sources, data.target, g, TrainConfig(iterations=1))


@pytest.mark.slow
def test_cgdan_recovers_linear_conditional_means():
    data = _fcm_chain(n=2000, seed=3)
    cfg = TrainConfig(iterations=1500, batch_size=128, module_hidden=(16,), lr=5e-3, seed=0,
                      log_every=0)
    model = train_cgdan(data.sources, data.target, _chain_graph(), cfg)
    for domain, theta in (("s1", 1.0), ("s2", 2.0)):
        for label in (0.0, 1.0):
            cols = ancestral_generate(model, domain, labels=np.full(4000, label), rng=Rng(5))
            assert abs(cols["X1"].mean() - theta * label) < 0.15


def test_train_cgdan_on_discovered_graph_skips_domain_index():
    data = _fcm_chain(n=2000)
    graph = cdnod_lite(data.sources, alpha=0.01)
    assert DOMAIN_NODE in graph.nodes and graph.changing_modules == ["X1"]
    cfg = TrainConfig(iterations=3, batch_size=16, module_hidden=(4,), log_every=0)
    model = train_cgdan(data.sources, data.target, graph, cfg)
    assert [m.name for m in model.modules] == ["X1"]
    assert model.feature_names == ("X1",)
    assert model.module("X1").changing
    x, _ = model.sample("target", 10, Rng(0))
    assert x.shape == (10, 1)


def _both_changing() -> CgdanModel:
    # X1 = 2Y + E1 + theta1, X2 = 0.5 X1 + E2 + theta2
    x1 = FcmModule(("X1",), ("Y",), 1, net=_affine(2, 1, [0.0, 2.0, 1.0, 1.0]),
                   theta=ThetaMatrix(np.array([[0.0, 5.0, 0.0]]), DOMAINS))
    x2 = FcmModule(("X2",), ("X1",), 1, net=_affine(1, 1, [0.5, 1.0, 1.0]),
                   theta=ThetaMatrix(np.array([[0.0, 3.0, 0.0]]), DOMAINS))
    return CgdanModel((x1, x2), PRIOR, DOMAINS, feature_names=("X1", "X2"))


def test_recombination_gives_four_distinct_joints():
    model = _both_changing()
    lk = LabelKernel("delta", (0.0, 1.0))
    joints = {(a, b): recombine(model, {"X1": a, "X2": b}, 500, Rng(3).split(f"{a}{b}"))
              for a, b in product(("s1", "s2"), repeat=2)}
    kernel = median_heuristic(np.vstack([x for x, _ in joints.values()]))
    again = recombine(model, {"X1": "s1", "X2": "s1"}, 500, Rng(4))
    null = float(mmd2_joint(joints["s1", "s1"], again, kernel, lk).item())
    for p, q in combinations(joints, 2):
        assert float(mmd2_joint(joints[p], joints[q], kernel, lk).item()) > 10 * null, (p, q)


def test_generated_chain_keeps_the_graph_independences():
    cols = ancestral_generate(_hand_wired(), "s2", n=5000, rng=Rng(8))
    data = np.column_stack([cols["Y"], cols["X1"], cols["X2"]])
    # Y and X2 are d-separated by X1 only
    assert fisher_z_test(data, 0, 2, [1], alpha=0.001).independent
    assert not fisher_z_test(data, 0, 2, [], alpha=0.001).independent
    assert not fisher_z_test(data, 1, 2, [0], alpha=0.001).independent


@pytest.mark.slow
def test_cgdan_is_not_worse_than_gdan_at_equal_budget():
    data = _fcm_chain(n=2000, seed=1)
    cfg = TrainConfig(iterations=1500, batch_size=128, hidden=(16,), module_hidden=(16,), lr=5e-3,
                      log_every=0)
    doc = compare_models(data, cfg, alpha=0.01)
    assert doc["changing"] == ["X1"] and doc["budget_matched"]
    assert doc["cgdan"]["error"] <= doc["gdan"]["error"] + 0.02
    assert doc["cgdan"]["target_mmd2"] <= doc["gdan"]["target_mmd2"] + 0.01
