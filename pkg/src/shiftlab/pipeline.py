from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import pandas as pd

from .app_version import tool_version
from .config import Settings
from .errors import ContractError
from .logging_setup import get_logger
from .services.adaptation import (
    DegenerateTrainingError,
    PreconditionError,
    ValidationReport,
    adapt_and_predict,
    compare_models,
    default_predictor,
    evaluate,
    rotation_interpolation_check,
    validate_prop1,
    validate_prop2,
    validate_prop2_recovery,
    validate_prop3,
)
from .services.causal import DOMAIN_NODE, MixedGraph, cdnod_lite, check_alpha, discover
from .services.cgdan import CgdanModel, recombine, train_cgdan
from .services.checkpoint import load_checkpoint, save_checkpoint
from .services.datasets import DataError, DomainDataset, load_csv, save_csv
from .services.file_names import domain_file_name, interpolation_file_name, recombination_file_name
from .services.gdan import GdanModel, TrainConfig, interpolate_domains, train_gdan
from .services.plots import plot_losses, plot_scatter
from .services.rng import Rng
from .services.synthetic import GroundTruth, make_synthetic
from .services.temp_utils import atomic_write_text
from .types_run_types import ExperimentReport, RunConfig

CHECKPOINT_FILE = "checkpoint.json"
REPORT_FILE = "report.json"
LOSSES_FILE = "losses.csv"
PLOTS_DIR = "plots"

StatusCb = Callable[[str], None]
ProgressCb = Callable[[int, int], None]


@dataclass
class RunData:
    sources: list[DomainDataset]
    target: DomainDataset
    target_labels: np.ndarray | None = None
    truth: GroundTruth | None = None


def load_run_data(run: RunConfig) -> RunData:
    """Labeled sources plus the unlabeled target, with target labels kept aside when known."""
    if run.data.kind == "synthetic":
        result = make_synthetic(run.data.synthetic)
        return RunData(result.sources, result.target, result.truth.target_labels, result.truth)

    datasets = load_csv(run.data.csv_path, run.data.schema)
    if run.data.target_domain is not None:
        targets = [d for d in datasets if d.domain == run.data.target_domain]
        if not targets:
            raise DataError(f"target domain {run.data.target_domain!r} not found; "
                            f"domains are {[d.domain for d in datasets]}")
    else:
        targets = [d for d in datasets if not d.labeled]
        if len(targets) != 1:
            raise DataError(f"expected exactly one unlabeled domain as the target, found "
                            f"{[d.domain for d in targets]}; set data.csv.target_domain")
    target = targets[0]
    sources = [d for d in datasets if d is not target]
    unlabeled = [d.domain for d in sources if not d.labeled]
    if unlabeled:
        raise DataError(f"source domain(s) without labels: {unlabeled}")
    if not sources:
        raise DataError("no labeled source domain in the data")
    return RunData(sources, target.without_labels(), target.y, None)


def _discover_graph(sources, alpha: float, root: str | None, with_domain_index: bool,
                    workers: int) -> MixedGraph:
    if with_domain_index:
        return cdnod_lite(sources, alpha, root, workers)
    return discover(sources, alpha, root, workers)


def _window(trace, head: bool) -> float:
    w = max(1, len(trace) // 10)
    part = trace[:w] if head else trace[-w:]
    return float(np.mean(part))


def _loss_traces(model) -> dict[str, list[float]]:
    if model.kind == "gdan":
        return {"gdan": list(model.trace)}
    return {m.name: list(m.trace) for m in model.modules}


def _theta_report(model) -> dict[str, dict]:
    if model.kind == "gdan":
        return {"gdan": model.theta.to_dict()}
    return {m.name: m.theta.to_dict() for m in model.modules if m.theta is not None}


def _write_losses(path: Path, traces: Mapping[str, list[float]]) -> None:
    frames = [pd.DataFrame({"module": name, "iteration": np.arange(1, len(t) + 1), "loss": t})
              for name, t in traces.items()]
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")


def _graph_edges(g: MixedGraph) -> set[tuple[str, str]]:
    return {(a, b) for a, b in g.directed_edges() if DOMAIN_NODE not in (a, b)}


def _metrics(model, run: RunConfig, data: RunData, log) -> dict:
    metrics: dict = {}
    trace = list(model.trace)
    if trace:
        metrics.update(initial_loss=_window(trace, True), final_loss=_window(trace, False),
                       first_loss=trace[0], last_loss=trace[-1])
        metrics["loss_decreased"] = metrics["final_loss"] < metrics["initial_loss"]

    truth = data.truth
    if truth is not None and model.kind == "gdan" and truth.linear_family is not None \
            and truth.thetas.shape[0] == model.theta.dim:
        try:
            rec = validate_prop2_recovery(truth.thetas, model.theta.values)
        except PreconditionError as exc:
            log.warning("Skipping theta recovery metric: %s", exc)
        else:
            metrics["theta_r2"] = rec.r2
            metrics["theta_min_r2"] = rec.min_r2
    if model.kind == "cgdan" and model.graph is not None:
        metrics["changing_modules"] = list(model.graph.changing_modules)
        if truth is not None and truth.dag_edges:
            found = _graph_edges(model.graph)
            metrics["graph_matches_truth"] = (found == {tuple(e) for e in truth.dag_edges}
                                              and not any(DOMAIN_NODE not in (a, b) for a, b
                                                          in model.graph.undirected_edges()))
            metrics["changing_match_truth"] = sorted(model.graph.changing_modules) == sorted(truth.changing)

    if data.target_labels is not None:
        ev = run.evaluation
        kind = default_predictor(model) if ev.predictor == "auto" else ev.predictor
        try:
            adapted = adapt_and_predict(model, data.target, kind, Rng(run.seed).split("evaluate"),
                                        ev.n_generated, ev.k)
        except (ContractError, DegenerateTrainingError) as exc:
            log.warning("Skipping target evaluation: %s", exc)
        else:
            task = "classification" if model.label_kind == "categorical" else "regression"
            metrics["target"] = evaluate(adapted.predictions, data.target_labels, task,
                                         ev.radius if task == "regression" else None)
            metrics["target"]["predictor"] = kind
    return metrics


def _plots(model, data: RunData, run: RunConfig, out_dir: Path, traces) -> list[str]:
    plots = out_dir / PLOTS_DIR
    written = [plot_losses(traces, plots / "losses.svg", f"{run.name}: {model.kind} loss")]
    if run.evaluation.scatter and len(model.feature_names) >= 2:
        X_g, y_g = model.sample(model.target_domain, data.target.n, Rng(run.seed).split("scatter"))
        X_t = data.target.columns(model.feature_names)
        written.append(plot_scatter(X_t, X_g, plots / "target_scatter.svg",
                                    f"{run.name}: target, real vs generated", data.target_labels, y_g))
    return [str(p.relative_to(out_dir)) for p in written]


def run_train(
    settings: Settings,
    progress_cb: ProgressCb | None = None,
    status_cb: StatusCb | None = None,
    log_file: Path | None = None,
    output_dir: Path | None = None,
) -> dict:
    """Validate, load data, train, then write checkpoint, report, losses and plots."""
    logger = get_logger(logfile=log_file)
    run = settings.as_run()
    out_dir = Path(output_dir) if output_dir is not None else run.run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    if status_cb:
        status_cb(f"Loading data ({run.data.kind})")
    data = load_run_data(run)
    logger.info("Run %s: %d source domain(s), target %s (%d rows)", run.name,
                len(data.sources), data.target.domain, data.target.n)

    graph_doc = None
    try:
        if run.model == "gdan":
            if status_cb:
                status_cb("Training G-DAN")
            model = train_gdan(data.sources, data.target, run.train, progress_cb)
        else:
            if status_cb:
                status_cb("Discovering causal structure")
            graph = _discover_graph(data.sources, run.discovery.alpha, run.discovery.root,
                                    run.discovery.with_domain_index and len(data.sources) > 1,
                                    run.workers)
            if status_cb:
                status_cb(f"Training CG-DAN (changing: {', '.join(graph.changing_modules) or 'none'})")
            model = train_cgdan(data.sources, data.target, graph, run.train, run.workers,
                                status_cb, progress_cb)
            graph_doc = graph.to_dict()
            atomic_write_text(out_dir / "graph.dot", graph.to_dot())
            atomic_write_text(out_dir / "graph.json", graph.to_json())
    except Exception as exc:
        logger.error("Training failed for run %s: %s", run.name, exc)
        raise

    if status_cb:
        status_cb("Writing checkpoint and report")
    config_hash = settings.config_hash()
    sha = save_checkpoint(out_dir / CHECKPOINT_FILE, model,
                          {"config_hash": config_hash, "tool_version": tool_version(), "name": run.name})
    traces = _loss_traces(model)
    _write_losses(out_dir / LOSSES_FILE, traces)
    metrics = _metrics(model, run, data, logger)
    metrics["plots"] = _plots(model, data, run, out_dir, traces)

    report = ExperimentReport(run.name, run.model, settings.as_dict(), config_hash, tool_version(),
                              traces, _theta_report(model), metrics, graph_doc, sha,
                              round(time.perf_counter() - started, 3))
    doc = report.to_dict()
    write_report(out_dir / REPORT_FILE, doc)
    logger.info("Run %s complete: %s", run.name, {k: v for k, v in metrics.items() if k != "plots"})
    return {**doc, "output_dir": str(out_dir)}


def write_report(path: Path, doc: dict) -> None:
    atomic_write_text(Path(path), json.dumps(doc, sort_keys=True, indent=2, allow_nan=False))


def read_report(path: Path) -> ExperimentReport:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    if not path.exists():
        raise FileNotFoundError(f"report not found: {path}")
    return ExperimentReport.from_dict(json.loads(path.read_text(encoding="utf-8")))


def verify_report(report: ExperimentReport) -> bool:
    """True when the embedded config still hashes to the embedded hash."""
    return Settings(report.config).config_hash() == report.config_hash


# --------------------------------------------------------------------------
# discover / generate / adapt / validate
# --------------------------------------------------------------------------

def run_discover(
    settings: Settings,
    output_dir: Path,
    alpha: float | None = None,
    root: str | None = None,
    with_domain_index: bool = False,
    status_cb: StatusCb | None = None,
    log_file: Path | None = None,
) -> dict:
    """Structure learning on the labeled domains of the configured data; writes graph.dot/json."""
    logger = get_logger(logfile=log_file)
    run = settings.as_run()
    alpha = run.discovery.alpha if alpha is None else alpha
    check_alpha(alpha)
    data = load_run_data(run)
    if with_domain_index and len(data.sources) < 2:
        raise ContractError(f"--with-domain-index needs at least 2 labeled domains, "
                            f"found {[d.domain for d in data.sources]}")
    if status_cb:
        status_cb(f"Running {'CD-NOD-lite' if with_domain_index else 'PC'} at alpha={alpha}")
    graph = _discover_graph(data.sources, alpha, root or run.discovery.root, with_domain_index,
                            run.workers)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "graph.dot", graph.to_dot())
    atomic_write_text(out / "graph.json", graph.to_json())
    logger.info("Discovered %d directed and %d undirected edge(s); changing: %s",
                len(graph.directed_edges()), len(graph.undirected_edges()),
                graph.changing_modules or "none")
    return {"graph": graph.to_dict(), "changing": list(graph.changing_modules),
            "dot": str(out / "graph.dot"), "json": str(out / "graph.json")}


def parse_assignment(text: str) -> dict[str, str]:
    """``"X1=s1,X2=target"`` -> ``{"X1": "s1", "X2": "target"}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep or not key.strip() or not value.strip():
            raise ContractError(f"recombination entries look like module=domain, got {part!r}")
        out[key.strip()] = value.strip()
    if not out:
        raise ContractError("empty recombination assignment")
    return out


def _generated(domain: str, X, y, model) -> DomainDataset:
    return DomainDataset(domain, X, y, tuple(model.feature_names), model.label_name, model.label_kind)


def run_generate(
    checkpoint: Path,
    output_dir: Path,
    n: int,
    seed: int = 0,
    domain: str | None = None,
    interpolate: tuple[str, str, int] | None = None,
    recombine_with: Mapping[str, str] | None = None,
    log_file: Path | None = None,
) -> dict:
    """Sample one domain, a theta interpolation between two domains, or a module recombination."""
    logger = get_logger(logfile=log_file)
    chosen = [o for o in (domain, interpolate, recombine_with) if o is not None]
    if len(chosen) != 1:
        raise ContractError("choose exactly one of --domain, --interpolate, --recombine")
    if n < 1:
        raise ContractError(f"sample size must be >= 1, got {n}")
    model, _, sha = load_checkpoint(checkpoint)
    rng = Rng(seed).split("generate")
    out = Path(output_dir)
    files: list[dict] = []

    if domain is not None:
        X, y = model.sample(domain, n, rng)
        path = save_csv(out / domain_file_name(domain), [_generated(domain, X, y, model)])
        files.append({"file": path.name, "domain": domain})
    elif interpolate is not None:
        if not isinstance(model, GdanModel):
            raise ContractError("interpolate requires gdan (got a cgdan checkpoint)")
        a, b, count = interpolate
        thetas = interpolate_domains(model.theta.column(a), model.theta.column(b), count)
        for i, theta in enumerate(thetas):
            X, y = model.sample_at(theta, n, rng.split(i))
            name = interpolation_file_name(i, count)
            save_csv(out / name, [_generated(Path(name).stem, X, y, model)])
            files.append({"file": name, "theta": theta.tolist(), "weight": i / (count - 1)})
    else:
        if not isinstance(model, CgdanModel):
            raise ContractError("recombine requires cgdan (got a gdan checkpoint)")
        assignment = {model.module(k).name: v for k, v in recombine_with.items()}
        for m in model.modules:
            assignment.setdefault(m.name, model.target_domain)
        X, y = recombine(model, assignment, n, rng)
        name = recombination_file_name(assignment)
        save_csv(out / name, [_generated(Path(name).stem, X, y, model)])
        files.append({"file": name, "assignment": assignment})

    manifest = {"checkpoint_sha256": sha, "n": n, "seed": seed, "files": files}
    atomic_write_text(out / "generated.json", json.dumps(manifest, sort_keys=True, indent=2))
    logger.info("Generated %d file(s) into %s", len(files), out)
    return manifest


def run_adapt(
    checkpoint: Path,
    settings: Settings,
    output_dir: Path,
    predictor: str | None = None,
    log_file: Path | None = None,
) -> dict:
    """Predict the configured target domain with a trained checkpoint."""
    logger = get_logger(logfile=log_file)
    run = settings.as_run()
    model, _, sha = load_checkpoint(checkpoint)
    data = load_run_data(run)
    kind = predictor or (None if run.evaluation.predictor == "auto" else run.evaluation.predictor)
    adapted = adapt_and_predict(model, data.target, kind, Rng(run.seed).split("evaluate"),
                                run.evaluation.n_generated, run.evaluation.k)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(data.target.columns(model.feature_names), columns=list(model.feature_names))
    frame["prediction"] = adapted.predictions
    frame.to_csv(out / "predictions.csv", index=False, float_format="%.17g")
    task = "classification" if model.label_kind == "categorical" else "regression"
    doc = {"task": task, "metric": None, "value": None, "n": int(adapted.predictions.size),
           "seed": run.seed, "model_checkpoint_hash": sha, "target": data.target.domain,
           "predictor": adapted.predictor.kind, "n_generated": adapted.n_generated, "metrics": None}
    if data.target_labels is not None:
        doc["metrics"] = evaluate(adapted.predictions, data.target_labels, task,
                                  run.evaluation.radius if task == "regression" else None)
        doc.update(metric=doc["metrics"]["metric"], value=doc["metrics"]["value"])
    write_report(out / "adapt.json", doc)
    logger.info("Adapted %s: %s", data.target.domain, doc["metrics"] or "no target labels")
    return doc


VALIDATORS = {
    "1": validate_prop1,
    "2": validate_prop2,
    "3": validate_prop3,
}


def run_validate(
    prop: str,
    cfg: TrainConfig,
    params: dict | None = None,
    seed: int = 0,
    n_per_domain: int = 2000,
    log_file: Path | None = None,
) -> ValidationReport:
    """Run one identifiability check, or the rotation interpolation check (``prop="rotation"``)."""
    logger = get_logger(logfile=log_file)
    if prop == "rotation":
        params = dict(params or {})
        end = float(params.pop("end_angle", 45.0))
        if params:
            raise ContractError(f"rotation check accepts only end_angle, got {sorted(params)}")
        report = rotation_interpolation_check(cfg, end, seed, n_per_domain)
    elif prop in VALIDATORS:
        report = VALIDATORS[prop](replace(cfg, seed=seed), params, seed, n_per_domain)
    else:
        raise ContractError(f"unknown check {prop!r}; expected 1, 2, 3 or rotation")
    logger.info("Check %s %s: %s", report.check, "passed" if report.passed else "FAILED", report.message)
    return report


def run_compare(
    settings: Settings,
    output_dir: Path,
    status_cb: StatusCb | None = None,
    log_file: Path | None = None,
) -> dict:
    """Train both model kinds on a synthetic family and compare them on the held-out target."""
    logger = get_logger(logfile=log_file)
    run = settings.as_run()
    if run.data.kind != "synthetic":
        raise ContractError("compare needs a synthetic data source (held-out target labels)")
    result = make_synthetic(run.data.synthetic)
    if status_cb:
        status_cb(f"Comparing gdan and cgdan on {run.data.synthetic.family}")
    doc = compare_models(result, run.train, run.discovery.alpha, run.workers,
                         run.evaluation.n_generated, run.evaluation.radius)
    doc["config_hash"] = settings.config_hash()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "compare.json", doc)
    logger.info("Comparison on %s: %s", run.data.synthetic.family,
                {k: doc[k] for k in ("gdan", "cgdan")})
    return doc
