import numpy as np
import pytest

from shiftlab.errors import ContractError
from shiftlab.services.datasets import DomainDataset
from shiftlab.services.gdan import (
    THETA_KEY,
    GdanModel,
    GeneratorNet,
    LabelPrior,
    ThetaMatrix,
    TrainConfig,
    draw_batch,
    gdan_loss,
    gdan_loss_and_grads,
    generate,
    interpolate_domains,
    train_gdan,
)
from shiftlab.services.kernels import KernelConfig, LabelKernel
from shiftlab.services.numerics import finite_difference, relative_error
from shiftlab.services.rng import Rng

PRIOR = LabelPrior((0.0, 1.0), (0.5, 0.5))


def _hand_wired() -> GeneratorNet:
    # X = onehot(y) + e + theta * (1, 1)
    w = np.vstack([np.eye(2), np.eye(2), np.ones((1, 2))])
    return GeneratorNet(2, 2, 1, (), 2, "identity", {"W0": w, "b0": np.zeros((1, 2))})


def test_hand_wired_generator():
    x, y = generate(_hand_wired(), [2.0], [0.0], Rng(0), PRIOR, noise=np.zeros((1, 2)))
    assert np.array_equal(x, [[3.0, 2.0]])
    assert np.array_equal(y, [0.0])


def test_zeroed_weights_give_the_bias():
    gen = GeneratorNet(2, 3, 1, (), 2, "identity", {"W0": np.zeros((6, 2)), "b0": np.array([[0.5, -1.0]])})
    x, _ = generate(gen, [4.0], [0.0, 1.0, 1.0], Rng(3), PRIOR)
    assert np.array_equal(x, np.tile([0.5, -1.0], (3, 1)))


def test_generate_rejects_bad_theta_and_labels():
    with pytest.raises(ContractError, match="theta"):
        generate(_hand_wired(), [1.0, 2.0], [0.0], Rng(0), PRIOR)
    with pytest.raises(ContractError, match="unknown label"):
        generate(_hand_wired(), [1.0], [5.0], Rng(0), PRIOR)


def test_generator_checks_layer_shapes():
    with pytest.raises(ContractError, match="layer 0"):
        GeneratorNet(2, 2, 1, (), 2, "identity", {"W0": np.zeros((4, 2)), "b0": np.zeros((1, 2))})


def test_interpolation():
    assert [float(t[0]) for t in interpolate_domains([0.0], [1.0], 3)] == [0.0, 0.5, 1.0]
    same = interpolate_domains([0.3, 0.7], [0.3, 0.7], 4)
    assert all(np.allclose(t, [0.3, 0.7], rtol=0, atol=1e-15) for t in same)
    assert np.allclose(interpolate_domains([0.0, 0.0], [2.0, 4.0], 5)[2], [1.0, 2.0])
    with pytest.raises(ContractError):
        interpolate_domains([0.0], [1.0], 1)


def test_label_prior_from_labels():
    prior = LabelPrior.from_labels(np.array([0, 0, 0, 1]))
    assert prior.classes == (0.0, 1.0)
    assert prior.probs == pytest.approx((0.75, 0.25))
    assert np.array_equal(prior.encode([1.0, 0.0]), [[0, 1], [1, 0]])
    with pytest.raises(ContractError):
        LabelPrior((0.0, 1.0), (0.7, 0.7))


def test_theta_matrix_columns():
    theta = ThetaMatrix(np.array([[1.0, 2.0, 3.0]]), ("s1", "s2", "target"))
    assert theta.column("s2").tolist() == [2.0]
    with pytest.raises(ContractError, match="unknown domain"):
        theta.column("nowhere")


def _setup(seed: int):
    rng = Rng(seed)
    gen = GeneratorNet.init(2, 2, 1, (4,), 2, "tanh", rng.split("init"))
    theta = ThetaMatrix.init(1, ("s1", "s2", "target"), rng.split("theta"), scale=1.0)
    data = np.random.default_rng(seed)
    sources = [DomainDataset(d, data.normal(size=(20, 2)) + k, data.integers(0, 2, 20))
               for k, d in enumerate(("s1", "s2"))]
    target_x = data.normal(size=(20, 2)) - 1.0
    batch = draw_batch(sources, target_x, gen, theta, PRIOR, 6, rng.split("batch"), "target")
    params = {**gen.params, THETA_KEY: theta.values}
    return gen, params, batch


def test_alpha_zero_decouples_target_column():
    gen, params, batch = _setup(0)
    _, grads = gdan_loss_and_grads(gen, params, batch, 0.0, KernelConfig((1.0, 2.0)),
                                   LabelKernel("delta", (0.0, 1.0)))
    assert np.all(grads[THETA_KEY][:, 2] == 0.0)
    _, grads = gdan_loss_and_grads(gen, params, batch, 1.0, KernelConfig((1.0, 2.0)),
                                   LabelKernel("delta", (0.0, 1.0)))
    assert np.any(grads[THETA_KEY][:, 2] != 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradients_match_finite_differences(seed):
    gen, params, batch = _setup(seed)
    kernel, lk = KernelConfig((0.5, 1.0, 2.0)), LabelKernel("delta", (0.0, 1.0))
    keys = sorted(params)
    _, analytic = gdan_loss_and_grads(gen, params, batch, 0.7, kernel, lk)
    numeric = finite_difference(
        lambda ps: gdan_loss(gen, dict(zip(keys, ps)), batch, 0.7, kernel, lk),
        [params[k] for k in keys])
    for key, n in zip(keys, numeric):
        assert relative_error(analytic[key], n) < 1e-4, key


def _toy_domains(seed: int):
    data = np.random.default_rng(seed)
    sources = []
    for k, name in enumerate(("s1", "s2")):
        y = data.integers(0, 2, 200)
        sources.append(DomainDataset(name, (4.0 * y + k + data.normal(size=200)).reshape(-1, 1), y))
    y = data.integers(0, 2, 200)
    target = DomainDataset("target", (4.0 * y + 2.0 + data.normal(size=200)).reshape(-1, 1))
    return sources, target


def test_train_gdan_smoke_and_determinism():
    sources, target = _toy_domains(0)
    cfg = TrainConfig(iterations=5, batch_size=16, hidden=(8,), noise_dim=2, seed=3, log_every=0)
    ticks = []
    a = train_gdan(sources, target, cfg, progress_cb=lambda done, total: ticks.append(done))
    b = train_gdan(sources, target, cfg)
    assert ticks == [1, 2, 3, 4, 5]
    assert len(a.trace) == 5 and all(np.isfinite(a.trace))
    assert a.trace == b.trace
    assert a.domains == ("s1", "s2", "target")
    assert np.array_equal(a.theta.values, b.theta.values)
    x, y = a.sample("target", 7, Rng(1))
    assert x.shape == (7, 1) and set(y) <= {0.0, 1.0}
    again = GdanModel.from_dict(a.to_dict())
    assert np.array_equal(again.sample("s1", 7, Rng(1))[0], a.sample("s1", 7, Rng(1))[0])


def test_train_gdan_rejects_unlabeled_sources():
    sources, target = _toy_domains(0)
    with pytest.raises(ContractError, match="without labels"):
        train_gdan([sources[0].without_labels()], target, TrainConfig(iterations=1))


@pytest.mark.slow
def test_train_gdan_reduces_loss():
    sources, target = _toy_domains(1)
    cfg = TrainConfig(iterations=400, batch_size=64, hidden=(16,), noise_dim=2, lr=1e-2, seed=0,
                      log_every=0)
    trace = np.asarray(train_gdan(sources, target, cfg).trace)
    assert trace[-40:].mean() < trace[:40].mean()
