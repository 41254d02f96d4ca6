import numpy as np
import pytest

from shiftlab.errors import ContractError
from shiftlab.services.adaptation import (
    DegenerateTrainingError,
    PreconditionError,
    adapt_and_predict,
    check_linear_independence,
    check_theta_injectivity,
    evaluate,
    fit_predictor,
    matched_hidden,
    rotation_interpolation_check,
    validate_prop1,
    validate_prop2,
    validate_prop2_recovery,
    validate_prop3,
)
from shiftlab.services.datasets import DomainDataset
from shiftlab.services.gdan import GdanModel, GeneratorNet, LabelPrior, ThetaMatrix, TrainConfig
from shiftlab.services.kernels import LabelKernel, fixed_kernel
from shiftlab.services.rng import Rng

PRIOR = LabelPrior((0.0, 1.0), (0.5, 0.5))


class _TwoClassModel:
    """Generates X = 4y + N(0, 1) in every domain."""

    kind = "stub"
    prior = PRIOR
    feature_names = ("X1",)
    label_kind = "categorical"
    domains = ("s1", "target")
    target_domain = "target"

    def sample(self, domain, n, rng):
        y = self.prior.sample(n, rng.split("labels"))
        return (4.0 * y + rng.split("noise").gaussian(n, 1)[:, 0]).reshape(-1, 1), y


def _gdan(theta_row) -> GdanModel:
    # X = 4 * onehot(y)[1] + e + theta
    w = np.array([[0.0], [4.0], [1.0], [1.0]])
    gen = GeneratorNet(2, 1, 1, (), 1, "identity", {"W0": w, "b0": np.zeros((1, 1))})
    theta = ThetaMatrix(np.array([theta_row], dtype=float), ("s1", "s2", "target"))
    return GdanModel(gen, theta, PRIOR, fixed_kernel(), LabelKernel("delta", (0.0, 1.0)), ("X1",))


def test_evaluate_counts():
    assert evaluate([0, 1, 1, 0], [0, 1, 1, 1])["value"] == 0.75
    reg = evaluate([1, 2, 3, 4, 5], [1, 2, 3, 0, 0], "regression", radius=0.0)
    assert reg["value"] == pytest.approx(0.6)
    assert evaluate([1.0, 2.0], [1.5, 2.5], "regression", radius=1.0)["value"] == 1.0
    with pytest.raises(ContractError):
        evaluate([1, 2], [1, 2, 3])
    with pytest.raises(ContractError):
        evaluate([1.0], [1.0], "regression")


def test_knn_returns_the_exact_neighbour_label():
    pred = fit_predictor(np.array([[0.0], [1.0], [5.0]]), np.array([0, 1, 1]), "knn", k=1)
    assert pred.predict(np.array([[1.0], [0.0]])).tolist() == [1.0, 0.0]


def test_predictor_needs_two_classes():
    with pytest.raises(DegenerateTrainingError, match="only class"):
        fit_predictor(np.zeros((4, 1)), np.zeros(4))
    with pytest.raises(ContractError):
        fit_predictor(np.zeros((4, 1)), np.array([0, 1, 0, 1]), "least-squares")


def test_least_squares_for_real_labels():
    X = np.arange(10, dtype=float).reshape(-1, 1)
    pred = fit_predictor(X, 3.0 * X[:, 0] + 1.0, "least-squares", categorical=False)
    assert pred.predict(np.array([[20.0]]))[0] == pytest.approx(61.0)


def test_adapt_and_predict_separated_classes():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 1000).astype(float)
    target = DomainDataset("target", (4.0 * y + rng.normal(size=1000)).reshape(-1, 1))
    result = adapt_and_predict(_TwoClassModel(), target, "logistic", Rng(1))
    assert result.n_generated == 10_000
    assert evaluate(result.predictions, y)["value"] > 0.95


def test_adapt_and_predict_rejects_empty_target():
    with pytest.raises(ContractError, match="empty"):
        adapt_and_predict(_TwoClassModel(), np.zeros((0, 1)))


def test_prop2_recovery_exact_affine_image():
    true = np.array([[0.0, 1.0, 0.0, 1.0, 0.5], [0.0, 0.0, 1.0, 1.0, 0.5]])
    report = validate_prop2_recovery(true, 2.0 * true + 1.0)
    assert report.min_r2 == pytest.approx(1.0, abs=1e-12)
    assert report.passed
    assert np.allclose(report.coefficients[:, :2], 2.0 * np.eye(2))


def test_prop2_recovery_needs_enough_domains():
    with pytest.raises(PreconditionError, match="rank"):
        validate_prop2_recovery(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros((2, 2)))


def _normal(mean: float, seed: int, n: int = 2000) -> np.ndarray:
    return mean + np.random.default_rng(seed).normal(size=n)


def test_certificate_passes_for_distinct_conditionals():
    cert = check_linear_independence([_normal(0, 1), _normal(4, 2)], [_normal(2, 3), _normal(6, 4)])
    assert cert.passed and cert.rank == 4
    assert cert.min_sv > 0


def test_certificate_fails_for_duplicated_conditional():
    shared = _normal(0, 1)
    cert = check_linear_independence([shared, _normal(4, 2)], [shared, _normal(6, 4)])
    assert not cert.passed
    assert cert.rank == 3


def test_certificate_single_identical_class():
    x = _normal(0, 5)
    cert = check_linear_independence([x], [x])
    assert not cert.passed and cert.rank == 1


def test_certificate_errors():
    with pytest.raises(ContractError, match="empty"):
        check_linear_independence([np.array([])], [_normal(0, 1)])
    with pytest.raises(ContractError):
        check_linear_independence([_normal(0, 1)], [_normal(0, 1), _normal(2, 2)])


def _gdan4(theta_row) -> GdanModel:
    model = _gdan([0.0, 0.0, 0.0])
    theta = ThetaMatrix(np.array([theta_row], dtype=float), ("s1", "s2", "s3", "target"))
    return GdanModel(model.gen, theta, PRIOR, model.kernel, model.label_kernel, ("X1",))


def _pair(report, a, b) -> dict:
    return next(p for p in report.metrics["pairs"] if p["domains"] == [a, b])


def test_theta_injectivity_separates_exactly_the_distinct_domains():
    report = check_theta_injectivity(_gdan4([0.0, 0.0, 3.0, 1.0]), n=400,
                                     eta={"s1": [0.0], "s2": [0.0], "s3": [1.0]})
    assert report.passed, report.message
    assert report.metrics["eps"] == pytest.approx(4.0 * max(report.metrics["null_mmd2"]))
    assert report.metrics["delta"] == pytest.approx(0.3)
    same = _pair(report, "s1", "s2")
    assert same["same_truth"] and not same["separated"] and not same["theta_apart"]
    apart = _pair(report, "s1", "s3")
    assert apart["separated"] and apart["theta_apart"]
    assert apart["theta_distance"] == pytest.approx(3.0)


def test_theta_injectivity_flags_split_and_merged_domains():
    report = check_theta_injectivity(_gdan4([0.0, 3.0, 3.0, 1.0]), n=400,
                                     eta={"s1": [0.0], "s2": [0.0], "s3": [1.0]})
    assert not report.passed
    assert report.metrics["split"] == [["s1", "s2"]]
    assert report.metrics["merged"] == [["s2", "s3"]]
    assert "merged" in report.message


def test_theta_injectivity_with_fixed_delta():
    report = check_theta_injectivity(_gdan4([0.0, 0.0, 3.0, 1.0]), n=400, delta=5.0)
    assert not report.passed
    assert report.metrics["violations"] == [["s1", "s3"], ["s2", "s3"]]


def test_theta_injectivity_needs_two_sources():
    model = _gdan([0.0, 0.0, 0.0])
    single = GdanModel(model.gen, ThetaMatrix(np.zeros((1, 2)), ("s1", "target")), PRIOR,
                       model.kernel, model.label_kernel, ("X1",))
    with pytest.raises(PreconditionError, match="2 source domains"):
        check_theta_injectivity(single, n=50)


def test_prop1_fails_for_an_untrained_model():
    cfg = TrainConfig(iterations=1, batch_size=32, hidden=(8,), noise_dim=2, log_every=0)
    report = validate_prop1(cfg, seed=0, n_per_domain=400)
    assert not report.passed
    assert "does not reproduce" in report.message
    assert set(report.metrics["fit"]) == {"s1", "s2", "s3", "s4"}


def test_matched_hidden_hits_the_budget():
    cfg = TrainConfig(hidden=(64,), noise_dim=2, theta_dim=1)
    # 5 inputs, 2 outputs, 3 theta columns: 8w + 5 parameters
    assert matched_hidden(85, 2, 2, cfg, 3) == (10,)
    assert matched_hidden(89, 2, 2, cfg, 3) == (10,)
    assert matched_hidden(1, 2, 2, cfg, 3) == (1,)
    deep = TrainConfig(hidden=(8, 8), noise_dim=2, theta_dim=1)
    assert matched_hidden(41, 2, 2, deep, 3) == (3, 3)


def test_prop3_certificate_fails_without_shift():
    cfg = TrainConfig(iterations=10, batch_size=32, hidden=(8,), noise_dim=2, log_every=0)
    report = validate_prop3(cfg, {"target_shift": 0.0}, seed=0, n_per_domain=300)
    assert not report.passed
    assert report.metrics["checks"]["certificate"] is False


def test_prop3_rejects_several_sources():
    with pytest.raises(ContractError, match="exactly one source"):
        validate_prop3(TrainConfig(iterations=1), {"source_shifts": [0.0, 1.0]})


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_prop3_recovers_shifted_target(seed):
    report = validate_prop3(TrainConfig(iterations=2000, log_every=0), seed=seed, n_per_domain=2000)
    assert report.passed, report.message
    # class means 4 apart: 0.4 plus a few generated-mean standard errors
    assert 0.4 < report.metrics["mean_bound"] < 0.45
    assert report.metrics["accuracy"] >= 0.95


@pytest.mark.slow
def test_prop2_recovers_latent_columns():
    report = validate_prop2(TrainConfig(iterations=2000, log_every=0), seed=0, n_per_domain=2000)
    assert report.metrics["min_r2"] > 0.99


def test_prop3_bound_scales_with_the_class_gap():
    cfg = TrainConfig(iterations=5, batch_size=32, hidden=(8,), noise_dim=2, log_every=0)
    report = validate_prop3(cfg, {"means": [0.0, 8.0]}, seed=0, n_per_domain=300)
    # 3000 generated rows, about half per class: 0.8 plus 3 / sqrt(~1500)
    assert 0.8 < report.metrics["mean_bound"] < 0.9


@pytest.mark.slow
def test_prop1_passes_after_training():
    report = validate_prop1(TrainConfig(iterations=2000, log_every=0), seed=0, n_per_domain=2000)
    assert report.passed, report.message
    assert not report.metrics["merged"] and not report.metrics["split"]
    assert all(v["ok"] for v in report.metrics["fit"].values())


@pytest.mark.slow
def test_rotation_midpoint_sits_halfway():
    report = rotation_interpolation_check(TrainConfig(iterations=2000, log_every=0), end_angle=45.0,
                                          seed=0, n_per_domain=2000)
    assert report.passed, report.message
    first, middle, last = report.metrics["angles"]
    assert abs(first) < 10.0 and abs(last - 45.0) < 10.0
    assert min(first, last) < middle < max(first, last)
