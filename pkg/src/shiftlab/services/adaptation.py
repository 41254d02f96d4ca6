"""Target-domain adaptation and executable identifiability checks.

``adapt_and_predict`` turns a fitted generative model into a target predictor:
generate labeled rows at the target latent column, fit a scikit-learn model on
them, predict the real target features. The ``validate_*`` helpers run the
identifiability checks end to end on synthetic families with known truth.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Any, Literal, Protocol, Sequence

import numpy as np
from scipy.stats import gaussian_kde
from sklearn.linear_model import LinearRegression, LogisticRegression
from sklearn.neighbors import KNeighborsClassifier, KNeighborsRegressor

from ..errors import ContractError, ShiftLabError
from .causal import cdnod_lite
from .cgdan import train_cgdan
from .datasets import DomainDataset
from .gdan import LabelPrior, TrainConfig, train_gdan
from .kernels import label_kernel_for, median_heuristic, mmd2_joint
from .rng import Rng
from .synthetic import SyntheticResult, SyntheticSpec, make_synthetic

log = logging.getLogger(__name__)

PredictorKind = Literal["logistic", "knn", "least-squares"]
MAX_GENERATED = 50_000


class DegenerateTrainingError(ShiftLabError):
    """The generated training set cannot determine the predictor."""


class PreconditionError(ShiftLabError):
    """A validator's mathematical precondition does not hold."""


class GenerativeModel(Protocol):
    kind: str
    prior: LabelPrior
    feature_names: tuple[str, ...]
    label_kind: str
    domains: tuple[str, ...]

    @property
    def target_domain(self) -> str: ...

    def sample(self, domain: str, n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]: ...


# --------------------------------------------------------------------------
# predictors
# --------------------------------------------------------------------------

@dataclass
class Predictor:
    kind: PredictorKind
    estimator: Any
    dim: int
    classes: tuple[float, ...] | None = None

    @property
    def categorical(self) -> bool:
        return self.classes is not None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, self.dim)
        if X.shape[1] != self.dim:
            raise ContractError(f"predictor trained on {self.dim} features, got {X.shape[1]}")
        return np.asarray(self.estimator.predict(X), dtype=np.float64).reshape(-1)


def fit_predictor(X: np.ndarray, y: np.ndarray, kind: PredictorKind = "logistic",
                  categorical: bool = True, k: int = 5) -> Predictor:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if categorical:
        classes = tuple(float(c) for c in np.unique(y))
        if len(classes) < 2:
            raise DegenerateTrainingError(
                f"generated training set contains only class(es) {list(classes)}; need at least 2")
        if kind == "logistic":
            est = LogisticRegression(max_iter=1000)
        elif kind == "knn":
            est = KNeighborsClassifier(n_neighbors=min(k, len(y)))
        else:
            raise ContractError(f"predictor {kind!r} is for real-valued labels")
    else:
        classes = None
        if kind == "least-squares":
            est = LinearRegression()
        elif kind == "knn":
            est = KNeighborsRegressor(n_neighbors=min(k, len(y)))
        else:
            raise ContractError(f"predictor {kind!r} needs categorical labels")
    est.fit(X, y)
    return Predictor(kind, est, X.shape[1], classes)


def default_predictor(model: GenerativeModel) -> PredictorKind:
    return "logistic" if model.label_kind == "categorical" else "least-squares"


@dataclass
class AdaptResult:
    predictor: Predictor
    predictions: np.ndarray
    n_generated: int


def target_features(model: GenerativeModel, target: DomainDataset | np.ndarray) -> np.ndarray:
    if isinstance(target, DomainDataset):
        return target.columns(model.feature_names)
    X = np.asarray(target, dtype=np.float64)
    return X.reshape(-1, 1) if X.ndim == 1 else X


def adapt_and_predict(model: GenerativeModel, target: DomainDataset | np.ndarray,
                      kind: PredictorKind | None = None, rng: Rng | None = None,
                      n_generated: int | None = None, k: int = 5) -> AdaptResult:
    """Generate labeled rows at the target column, fit a predictor, predict the target."""
    X_t = target_features(model, target)
    if X_t.shape[0] == 0:
        raise ContractError("target features are empty")
    if model.target_domain not in model.domains:
        raise ContractError("model has no target latent column")
    rng = rng or Rng(0)
    n = n_generated or min(10 * X_t.shape[0], MAX_GENERATED)
    X_g, y_g = model.sample(model.target_domain, n, rng.split("adapt"))
    predictor = fit_predictor(X_g, y_g, kind or default_predictor(model),
                              model.label_kind == "categorical", k)
    return AdaptResult(predictor, predictor.predict(X_t), n)


def evaluate(predictions, truth, task: Literal["classification", "regression"] = "classification",
             radius: float | None = None) -> dict:
    """Accuracy, or the fraction of predictions within ``radius`` of the truth."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ContractError(f"{p.size} predictions for {t.size} ground-truth values")
    if p.size == 0:
        raise ContractError("nothing to evaluate")
    if task == "classification":
        return {"task": task, "metric": "accuracy", "value": float(np.mean(p == t)), "n": int(p.size)}
    if radius is None or radius < 0:
        raise ContractError("regression evaluation needs a radius >= 0")
    return {"task": task, "metric": f"within_{radius:g}", "value": float(np.mean(np.abs(p - t) <= radius)),
            "n": int(p.size), "radius": radius}


# --------------------------------------------------------------------------
# certificates and recovery checks
# --------------------------------------------------------------------------

@dataclass
class ValidationReport:
    check: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        return {"check": self.check, "passed": self.passed, "metrics": self.metrics,
                "message": self.message}


@dataclass
class Prop2Report:
    r2: list[float]
    coefficients: np.ndarray
    threshold: float

    @property
    def min_r2(self) -> float:
        return float(min(self.r2))

    @property
    def passed(self) -> bool:
        return self.min_r2 > self.threshold


def validate_prop2_recovery(theta_true: np.ndarray, theta_hat: np.ndarray,
                            threshold: float = 0.99) -> Prop2Report:
    """Regress every fitted latent row on ``[theta*; 1]`` across domains."""
    true = np.atleast_2d(np.asarray(theta_true, dtype=np.float64))
    hat = np.atleast_2d(np.asarray(theta_hat, dtype=np.float64))
    d, m = true.shape
    if hat.shape[1] != m:
        raise ContractError(f"{hat.shape[1]} fitted columns for {m} true columns")
    design = np.vstack([true, np.ones(m)])
    rank = int(np.linalg.matrix_rank(design))
    if m < d + 1 or rank < d + 1:
        raise PreconditionError(f"theta* augmented with ones has rank {rank} over {m} domain(s); "
                                f"recovery needs rank {d + 1} (at least {d + 1} domains)")
    coef, *_ = np.linalg.lstsq(design.T, hat.T, rcond=None)
    fitted = design.T @ coef
    r2 = []
    for k in range(hat.shape[0]):
        ss_tot = float(np.sum((hat[k] - hat[k].mean()) ** 2))
        ss_res = float(np.sum((hat[k] - fitted[:, k]) ** 2))
        r2.append(0.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot)
    return Prop2Report(r2, coef.T, threshold)


@dataclass
class IndependenceCertificate:
    grid: np.ndarray
    densities: np.ndarray
    gram: np.ndarray
    singular_values: np.ndarray
    tol: float

    @property
    def min_sv(self) -> float:
        return float(self.singular_values.min())

    @property
    def max_sv(self) -> float:
        return float(self.singular_values.max())

    @property
    def rank(self) -> int:
        return int(np.sum(self.singular_values > self.tol * self.max_sv))

    @property
    def passed(self) -> bool:
        return self.max_sv > 0 and self.min_sv > self.tol * self.max_sv

    def to_dict(self) -> dict:
        return {"min_sv": self.min_sv, "max_sv": self.max_sv, "rank": self.rank,
                "functions": int(self.densities.shape[0]), "passed": self.passed}


def _as_points(sample) -> np.ndarray:
    arr = np.asarray(sample, dtype=np.float64)
    return arr.reshape(-1, 1) if arr.ndim == 1 else arr


def default_grid(samples: Sequence[np.ndarray], size: int = 512) -> np.ndarray:
    pooled = np.vstack([_as_points(s) for s in samples])
    if pooled.shape[1] == 1:
        lo, hi = pooled.min(), pooled.max()
        pad = 3.0 * max(pooled.std(), 1e-12)
        return np.linspace(lo - pad, hi + pad, size).reshape(-1, 1)
    step = max(1, pooled.shape[0] // size)
    return pooled[::step][:size]


def check_linear_independence(samples_a: Sequence[np.ndarray], samples_b: Sequence[np.ndarray],
                              grid: np.ndarray | None = None, tol: float = 1e-6
                              ) -> IndependenceCertificate:
    """Gram certificate over the 2C class-conditional densities of two domains.

    Densities are Gaussian KDEs with Silverman bandwidths evaluated on ``grid``;
    the certificate passes when the Gram matrix is numerically full rank, which
    is sufficient for the linear-independence hypothesis.
    """
    if len(samples_a) != len(samples_b):
        raise ContractError(f"{len(samples_a)} classes in the first set, {len(samples_b)} in the second")
    if not samples_a:
        raise ContractError("need at least one class")
    functions = [*samples_a, *samples_b]
    for k, s in enumerate(functions):
        if _as_points(s).shape[0] == 0:
            raise ContractError(f"class {k % len(samples_a)} of set {'AB'[k // len(samples_a)]} is empty")
    grid = default_grid(functions) if grid is None else _as_points(grid)
    rows = []
    for s in functions:
        pts = _as_points(s)
        try:
            kde = gaussian_kde(pts.T, bw_method="silverman")
        except np.linalg.LinAlgError as exc:
            raise ContractError(f"density estimate needs non-degenerate samples: {exc}") from exc
        rows.append(kde(grid.T))
    dens = np.vstack(rows)
    weight = float(grid[1, 0] - grid[0, 0]) if grid.shape[1] == 1 and grid.shape[0] > 1 else 1.0 / grid.shape[0]
    gram = (dens @ dens.T) * weight
    gram = 0.5 * (gram + gram.T)
    sv = np.linalg.svd(gram, compute_uv=False)
    return IndependenceCertificate(grid, dens, gram, sv, tol)


def check_theta_injectivity(model, n: int = 1000, seed: int = 0, eps: float | None = None,
                            delta: float | None = None, null_factor: float = 4.0,
                            rel_delta: float = 0.1, repeats: int = 2,
                            eta: dict[str, Sequence[float]] | None = None) -> ValidationReport:
    """Generated source conditionals must be separated exactly when theta columns are.

    ``eps`` (an MMD^2 level) defaults to ``null_factor`` times the largest
    MMD^2 between independent draws from one domain. ``delta`` defaults to
    ``rel_delta`` times the largest distance between source theta columns.
    With ``eta`` (true latent column per source) pairs with equal truth must
    merge and pairs with distinct truth must separate in both measures.
    """
    rng = Rng(seed).split("injectivity")
    sources = [d for d in model.domains if d != model.target_domain]
    if len(sources) < 2:
        raise PreconditionError(f"theta injectivity needs at least 2 source domains, got {sources}")
    draws = {d: model.sample(d, n, rng.split(d)) for d in sources}
    kernel = median_heuristic(np.vstack([x for x, _ in draws.values()]))
    lk = label_kernel_for(np.concatenate([y for _, y in draws.values()]),
                          model.label_kind == "categorical", model.prior.classes)

    def mmd(p, q) -> float:
        return float(mmd2_joint(p, q, kernel, lk).item())

    null = [mmd(draws[d], model.sample(d, n, rng.split(d).split(f"repeat{r}")))
            for d in sources for r in range(repeats)]
    spread = max(null)
    eps = null_factor * spread if eps is None else eps
    dists = {(a, b): _theta_distance(model, a, b) for a, b in combinations(sources, 2)}
    delta = rel_delta * max(dists.values()) if delta is None else delta

    pairs, violations, merged, split = [], [], [], []
    for (a, b), dist in dists.items():
        value = mmd(draws[a], draws[b])
        pair = {"domains": [a, b], "mmd2": value, "theta_distance": dist,
                "separated": value > eps, "theta_apart": dist > delta}
        if pair["separated"] and not pair["theta_apart"]:
            violations.append([a, b])
        if eta is not None:
            same = bool(np.allclose(np.asarray(eta[a], dtype=np.float64),
                                    np.asarray(eta[b], dtype=np.float64)))
            pair["same_truth"] = same
            if same and pair["separated"]:
                split.append([a, b])
            elif not same and not (pair["separated"] and pair["theta_apart"]):
                merged.append([a, b])
        pairs.append(pair)
    problems = []
    if violations:
        problems.append(f"distinct conditionals share theta for {violations}")
    if split:
        problems.append(f"identical domains generated apart for {split}")
    if merged:
        problems.append(f"distinct domains merged for {merged}")
    passed = not problems
    return ValidationReport("prop1", passed, {
        "pairs": pairs, "null_mmd2": null, "eps": eps, "delta": delta,
        "violations": violations, "merged": merged, "split": split},
        "ok" if passed else "; ".join(problems))


def _theta_distance(model, a: str, b: str) -> float:
    if model.kind == "gdan":
        return float(np.linalg.norm(model.theta.column(a) - model.theta.column(b)))
    return float(np.sqrt(sum(np.sum((m.theta.column(a) - m.theta.column(b)) ** 2)
                             for m in model.modules)))


# --------------------------------------------------------------------------
# end-to-end validators on synthetic families
# --------------------------------------------------------------------------

def _fit(result: SyntheticResult, cfg: TrainConfig):
    return train_gdan(result.sources, result.target, cfg)


def validate_prop1(cfg: TrainConfig, params: dict | None = None, seed: int = 0,
                   n_per_domain: int = 2000, null_factor: float = 4.0, fit_factor: float = 10.0,
                   rel_delta: float = 0.1) -> ValidationReport:
    """Train on a linear-mean family; fitted theta must track the true latent columns.

    The model must first reproduce every source joint: its MMD^2 to the real
    rows may be at most ``fit_factor`` times the spread between two halves of
    that domain's real data. The injectivity check then runs against the truth.
    """
    spec = SyntheticSpec("linear-mean", params or {}, n_per_domain, seed)
    result = make_synthetic(spec)
    truth = result.truth
    model = _fit(result, replace(cfg, theta_dim=truth.thetas.shape[0], seed=seed))
    half = n_per_domain // 2
    if half < 2:
        raise PreconditionError(f"n_per_domain={n_per_domain} is too small to split a domain in halves")
    eta = {d: truth.thetas[:, k] for k, d in enumerate(truth.domains[:-1])}
    report = check_theta_injectivity(model, min(half, 1000), seed, null_factor=null_factor,
                                     rel_delta=rel_delta, eta=eta)

    rng = Rng(seed).split("prop1-fit")
    real = {ds.domain: ds for ds in result.sources}
    kernel = median_heuristic(np.vstack([ds.X for ds in result.sources]))
    lk = label_kernel_for(np.concatenate([ds.y for ds in result.sources]), True, model.prior.classes)
    fit = {}
    for d in eta:
        X, y = real[d].X, real[d].y
        within = float(mmd2_joint((X[:half], y[:half]), (X[half:2 * half], y[half:2 * half]),
                                  kernel, lk).item())
        gen = float(mmd2_joint((X[:half], y[:half]), model.sample(d, half, rng.split(d)),
                               kernel, lk).item())
        fit[d] = {"within_mmd2": within, "model_mmd2": gen, "ok": gen <= fit_factor * within}
    unfit = [d for d, v in fit.items() if not v["ok"]]
    report.metrics.update({"fit": fit, "fit_factor": fit_factor,
                           "theta_hat": model.theta.values.tolist(),
                           "theta_true": truth.thetas.tolist()})
    if unfit:
        report.passed = False
        report.message = f"model does not reproduce sources {unfit}" + (
            "" if report.message == "ok" else f"; {report.message}")
    return report


def validate_prop2(cfg: TrainConfig, params: dict | None = None, seed: int = 0,
                   n_per_domain: int = 2000, threshold: float = 0.99) -> ValidationReport:
    spec = SyntheticSpec("linear-mean", params or {}, n_per_domain, seed, identifiable=True)
    result = make_synthetic(spec)
    truth = result.truth
    model = _fit(result, replace(cfg, theta_dim=truth.thetas.shape[0], seed=seed))
    rep = validate_prop2_recovery(truth.thetas, model.theta.values, threshold)
    return ValidationReport("prop2", rep.passed,
                            {"r2": rep.r2, "min_r2": rep.min_r2, "threshold": threshold,
                             "theta_hat": model.theta.values.tolist(),
                             "theta_true": truth.thetas.tolist()},
                            f"min R^2 = {rep.min_r2:.6f}")


def _family_conditionals(truth, n: int, seed: int) -> tuple[list, list]:
    """Per-class samples of the first source and the target, sharing their noise draws."""
    p = truth.params
    means = np.asarray(p["means"], dtype=np.float64)
    shift_s, shift_t = float(p["source_shifts"][0]), float(p["target_shift"])
    base = float(p["sigma"]) * Rng(seed).split("certificate").gaussian(n, 1)[:, 0]
    return ([m + shift_s + base for m in means], [m + shift_t + base for m in means])


def validate_prop3(cfg: TrainConfig, params: dict | None = None, seed: int = 0,
                   n_per_domain: int = 2000, mean_tol: float = 0.1, mean_z: float = 3.0,
                   prior_tol: float = 0.05, min_accuracy: float = 0.95, tol: float = 1e-6
                   ) -> ValidationReport:
    """Single source, unlabeled shifted target: recover the target joint from its marginal.

    Recovered class means may miss the truth by ``mean_tol`` times the smallest
    gap between class means plus ``mean_z`` standard errors of the generated mean.
    """
    params = dict(params or {})
    params.setdefault("source_shifts", [0.0])
    if len(params["source_shifts"]) != 1:
        raise ContractError("the single-source check needs exactly one source shift")
    spec = SyntheticSpec("gaussian-classes-1d", params, n_per_domain, seed, identifiable=True)
    result = make_synthetic(spec)
    truth = result.truth
    sigma = float(truth.params["sigma"])

    cert = check_linear_independence(*_family_conditionals(truth, n_per_domain, seed), tol=tol)
    model = _fit(result, replace(cfg, seed=seed))
    rng = Rng(seed).split("prop3")
    X_g, y_g = model.sample(model.target_domain, 10 * n_per_domain, rng.split("means"))
    classes = np.asarray(truth.classes)
    true_means = np.asarray(truth.class_means["target"], dtype=np.float64).reshape(-1)
    got_means = np.array([X_g[y_g == c, 0].mean() if np.any(y_g == c) else np.nan for c in classes])
    counts = np.array([np.sum(y_g == c) for c in classes])
    gap = float(np.min(np.diff(np.sort(true_means)))) if true_means.size > 1 else sigma
    mean_bound = float(mean_tol * gap + mean_z * sigma / np.sqrt(max(int(counts.min()), 1)))
    mean_err = float(np.nanmax(np.abs(got_means - true_means))) if np.all(np.isfinite(got_means)) else np.inf

    adapted = adapt_and_predict(model, result.target, "logistic", rng.split("adapt"))
    true_prior = (np.asarray(truth.params["priors"]) if truth.params.get("priors") is not None
                  else np.full(classes.size, 1.0 / classes.size))
    got_prior = np.array([np.mean(adapted.predictions == c) for c in classes])
    prior_err = float(np.max(np.abs(got_prior - true_prior)))
    acc = evaluate(adapted.predictions, truth.target_labels)["value"]

    checks = {"certificate": cert.passed, "class_means": mean_err <= mean_bound,
              "label_prior": prior_err <= prior_tol, "accuracy": acc >= min_accuracy}
    failed = [k for k, ok in checks.items() if not ok]
    return ValidationReport("prop3", not failed, {
        "certificate": cert.to_dict(), "recovered_means": got_means.tolist(),
        "true_means": true_means.tolist(), "mean_error": mean_err, "mean_bound": mean_bound,
        "recovered_prior": got_prior.tolist(), "true_prior": true_prior.tolist(),
        "prior_error": prior_err, "accuracy": acc, "bayes_accuracy": truth.bayes_accuracy,
        "checks": checks}, "ok" if not failed else f"failed: {', '.join(failed)}")


def class_mean_angle(X: np.ndarray, y: np.ndarray, cls: float = 0.0) -> float:
    mean = X[y == cls].mean(axis=0)
    return float(np.degrees(np.arctan2(mean[1], mean[0])))


def rotation_interpolation_check(cfg: TrainConfig, end_angle: float = 45.0, seed: int = 0,
                                 n_per_domain: int = 2000, tolerance: float = 10.0,
                                 n_generated: int = 5000) -> ValidationReport:
    """Train on rotations 0 and ``end_angle``; the midpoint theta should sit halfway."""
    spec = SyntheticSpec("rotation-2d", {"source_angles": [0.0, end_angle], "target_angle": end_angle},
                         n_per_domain, seed)
    result = make_synthetic(spec)
    model = _fit(result, replace(cfg, seed=seed))
    rng = Rng(seed).split("rotation")
    a, b = model.theta.column("s1"), model.theta.column("s2")
    angles = []
    for k, theta in enumerate((a, 0.5 * (a + b), b)):
        X, y = model.sample_at(theta, n_generated, rng.split(k))
        angles.append(class_mean_angle(X, y))
    expected = 0.5 * end_angle
    err = abs(angles[1] - expected)
    return ValidationReport("rotation", err <= tolerance,
                            {"angles": angles, "expected_midpoint": expected, "error": err,
                             "end_angle": end_angle},
                            f"midpoint axis {angles[1]:.2f} deg, expected {expected:.2f}")


def matched_hidden(budget: int, context_dim: int, out_dim: int, cfg: TrainConfig,
                   n_domains: int, max_width: int = 4096) -> tuple[int, ...]:
    """Uniform hidden widths, at the depth of ``cfg.hidden``, whose G-DAN size is closest to ``budget``."""
    depth = max(1, len(cfg.hidden))
    in_dim = context_dim + cfg.noise_dim + cfg.theta_dim

    def size(width: int) -> int:
        widths = [in_dim, *([width] * depth), out_dim]
        return sum(fi * fo + fo for fi, fo in zip(widths[:-1], widths[1:])) + cfg.theta_dim * n_domains

    width = min(range(1, max_width + 1), key=lambda w: (abs(size(w) - budget), w))
    return (width,) * depth


def compare_models(result: SyntheticResult, cfg: TrainConfig, alpha: float = 0.05,
                   workers: int = 1, n: int | None = None, radius: float = 1.0,
                   match_budget: bool = True) -> dict:
    """G-DAN versus CG-DAN on one synthetic family: target-joint MMD and prediction error.

    With ``match_budget`` the G-DAN hidden widths are chosen so its parameter
    count is as close as possible to the trained CG-DAN's.
    """
    truth = result.labeled_target()
    graph = cdnod_lite(result.sources, alpha, workers=workers)
    cgdan = train_cgdan(result.sources, result.target, graph, cfg, workers)
    gdan_cfg = cfg
    if match_budget:
        hidden = matched_hidden(_param_count(cgdan), cgdan.prior.context_dim,
                                result.sources[0].X.shape[1], cfg, len(cgdan.domains))
        gdan_cfg = replace(cfg, hidden=hidden)
        log.info("G-DAN hidden widths %s match the CG-DAN budget of %d parameters",
                 list(hidden), _param_count(cgdan))
    models = {"gdan": train_gdan(result.sources, result.target, gdan_cfg), "cgdan": cgdan}
    features = cgdan.feature_names
    X_true = truth.columns(features)
    kernel = median_heuristic(X_true)
    lk = models["gdan"].prior.label_kernel()
    n = n or truth.n
    rng = Rng(cfg.seed).split("compare")
    out = {"features": list(features), "changing": graph.changing_modules,
           "budget_matched": match_budget, "gdan_hidden": list(gdan_cfg.hidden)}
    for name, model in models.items():
        X_g, y_g = model.sample(model.target_domain, n, rng.split(name))
        cols = [list(model.feature_names).index(f) for f in features]
        mmd = float(mmd2_joint((X_true, truth.y), (X_g[:, cols], y_g), kernel, lk).item())
        adapted = adapt_and_predict(model, result.target, rng=rng.split(f"{name}-adapt"))
        if model.label_kind == "categorical":
            score = evaluate(adapted.predictions, truth.y)
        else:
            score = evaluate(adapted.predictions, truth.y, "regression", radius)
        out[name] = {"target_mmd2": mmd, "error": 1.0 - score["value"], "metric": score["metric"],
                     "params": _param_count(model)}
    return out


def _param_count(model) -> int:
    if model.kind == "gdan":
        return model.gen.param_count + model.theta.values.size
    return sum(m.net.param_count + m.theta.values.size for m in model.modules)
