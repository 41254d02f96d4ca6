import numpy as np
import pytest

from shiftlab.errors import ContractError, NumericalError, ShapeError
from shiftlab.services.numerics import (
    Tape,
    Tensor2,
    concat_cols,
    finite_difference,
    matmul,
    relative_error,
    sqdist,
    tanh,
    total,
)
from shiftlab.services.rmsprop import RmsProp, RmsPropState, rmsprop_step
from shiftlab.services.rng import Rng, sample_gaussian


def test_matmul_identity_and_hand_product():
    eye = Tensor2([[1, 0], [0, 1]])
    assert np.array_equal(matmul(eye, Tensor2([[5], [7]])).data, [[5], [7]])
    assert matmul(Tensor2([[1, 2]]), Tensor2([[3], [4]])).item() == 11.0


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    oracle = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                oracle[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(matmul(a, b).data - oracle)) < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_tensor_rejects_non_finite():
    with pytest.raises(NumericalError):
        Tensor2([[1.0, np.nan]])


def test_power_rule_and_disconnected_leaf():
    w = Tensor2([[3.0]])
    c = Tensor2([[1.0]])
    with Tape() as tape:
        y = w * w
    assert tape.gradient(y, [w])[0][0, 0] == 6.0
    assert tape.gradient(y, [c])[0][0, 0] == 0.0


def test_backward_needs_scalar():
    w = Tensor2(np.ones((2, 2)))
    with Tape() as tape:
        y = w * w
    with pytest.raises(ContractError):
        tape.gradient(y, [w])


def test_identity_output_is_its_own_leaf():
    w = Tensor2([[2.0]])
    with Tape() as tape:
        pass
    assert tape.gradient(w, [w])[0][0, 0] == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_mlp_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 3))
    params = [rng.normal(size=(3, 4)), rng.normal(size=(1, 4)), rng.normal(size=(4, 2))]
    target = rng.normal(size=(6, 2))

    def loss(ps):
        w1, b1, w2 = ps
        h = tanh(matmul(x, w1) + b1)
        out = matmul(h, w2)
        diff = out - target
        return total(diff * diff)

    leaves = [Tensor2(p) for p in params]
    with Tape() as tape:
        value = loss(leaves)
    analytic = tape.gradient(value, leaves)
    numeric = finite_difference(lambda ps: loss(ps).item(), params)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-4


def test_sqdist_and_concat_gradients():
    rng = np.random.default_rng(0)
    a, c, b = rng.normal(size=(4, 1)), rng.normal(size=(4, 1)), rng.normal(size=(3, 2))

    def f(ps):
        return total(sqdist(concat_cols([ps[0], ps[1]]), ps[2]))

    leaves = [Tensor2(a), Tensor2(c), Tensor2(b)]
    with Tape() as tape:
        out = f(leaves)
    analytic = tape.gradient(out, leaves)
    numeric = finite_difference(lambda ps: f(ps).item(), [a, c, b])
    for g, n in zip(analytic, numeric):
        assert relative_error(g, n) < 1e-5


def test_rmsprop_hand_step():
    state = RmsPropState.zeros((1,), rho=0.9, lr=0.01, eps=1e-8)
    p, s = rmsprop_step(state, np.array([0.0]), np.array([1.0]))
    assert s.v[0] == pytest.approx(0.1, abs=1e-15)
    assert p[0] == pytest.approx(-0.01 / (np.sqrt(0.1) + 1e-8), abs=1e-12)
    assert p[0] == pytest.approx(-0.0316228, abs=1e-7)


def test_rmsprop_zero_gradient_decays_accumulator():
    state = RmsPropState(np.array([0.5, 2.0]), rho=0.9, lr=0.01)
    p, s = rmsprop_step(state, np.array([1.0, -1.0]), np.zeros(2))
    assert np.array_equal(p, [1.0, -1.0])
    assert np.allclose(s.v, [0.45, 1.8], atol=1e-15)


def test_rmsprop_two_steps_match_recurrence():
    rho, lr, eps = 0.9, 0.01, 1e-8
    state = RmsPropState.zeros((1,), rho=rho, lr=lr, eps=eps)
    p = np.array([0.0])
    for _ in range(2):
        p, state = rmsprop_step(state, p, np.array([1.0]))
    v1 = 0.1
    v2 = rho * v1 + 0.1
    expected = -lr / (np.sqrt(v1) + eps) - lr / (np.sqrt(v2) + eps)
    assert abs(p[0] - expected) < 1e-12


def test_rmsprop_length_mismatch():
    with pytest.raises(ContractError):
        rmsprop_step(RmsPropState.zeros((2,)), np.zeros(2), np.zeros(3))


def test_rmsprop_named_wrapper_keeps_inputs():
    params = {"w": np.ones((2, 2))}
    opt = RmsProp(params, lr=0.1)
    updated = opt.step(params, {"w": np.ones((2, 2))})
    assert np.array_equal(params["w"], np.ones((2, 2)))
    assert np.all(updated["w"] < 1.0)


def test_gaussian_determinism_and_seed_sensitivity():
    a = sample_gaussian(Rng(7), 5, 3)
    b = sample_gaussian(Rng(7), 5, 3)
    c = sample_gaussian(Rng(8), 5, 3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_gaussian_moments():
    z = Rng(0).gaussian(100_000, 1)
    assert abs(z.mean()) < 0.02
    assert 0.97 <= z.var() <= 1.03


def test_gaussian_rejects_empty():
    with pytest.raises(ContractError):
        Rng(0).gaussian(0, 3)


def test_split_is_stable_and_independent():
    root = Rng(1)
    assert np.array_equal(root.split("x").uniform(4), root.split("x").uniform(4))
    assert not np.array_equal(root.split("x").uniform(4), root.split("y").uniform(4))
