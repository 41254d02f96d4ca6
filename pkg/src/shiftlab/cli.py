"""Command-line surface: train, generate, discover, adapt, validate, compare, report.

Exit codes: 0 success, 1 a check or run failed, 2 usage, configuration or I/O error.
"""
from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator, List, Optional

import typer
import yaml
from tqdm import tqdm

from .app_version import tool_version
from .config import ConfigError, Settings
from .errors import ContractError, ShiftLabError
from .logging_setup import get_logger, set_verbosity
from .pipeline import (
    CHECKPOINT_FILE,
    parse_assignment,
    read_report,
    run_adapt,
    run_compare,
    run_discover,
    run_generate,
    run_train,
    run_validate,
    verify_report,
)
from .services.checkpoint import CheckpointError, load_checkpoint
from .services.datasets import DataError, SchemaError
from .services.gdan import TrainConfig
from .services.synthetic import SpecError

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

app = typer.Typer(add_completion=False, no_args_is_help=True,
                  help="Generative domain adaptation lab.")

_USAGE_ERRORS = (ContractError, SchemaError, DataError, SpecError, CheckpointError, OSError)


@contextmanager
def _exit_codes() -> Iterator[None]:
    logger = get_logger()
    try:
        yield
    except ConfigError as exc:
        typer.echo(str(exc), err=True)
        raise typer.Exit(EXIT_USAGE)
    except _USAGE_ERRORS as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(EXIT_USAGE)
    except ShiftLabError as exc:
        logger.error("%s", exc)
        typer.echo(f"failed: {exc}", err=True)
        raise typer.Exit(EXIT_FAILED)


def _parse_pairs(pairs: List[str]) -> dict:
    """``key=value`` options; values are parsed as YAML scalars or lists."""
    out = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise ContractError(f"expected key=value, got {pair!r}")
        out[key.strip()] = yaml.safe_load(raw)
    return out


def _load_settings(config: Path, overrides: List[str]) -> Settings:
    if not config.exists():
        raise FileNotFoundError(f"config file not found: {config}")
    settings = Settings.from_file(config)
    for key, value in _parse_pairs(overrides).items():
        settings = settings.override(key, value)
    return settings


class _Progress:
    """tqdm bar fed by ``progress_cb(done, total)``."""

    def __init__(self, desc: str, enabled: bool = True) -> None:
        self._bar: tqdm | None = None
        self._desc = desc
        self._enabled = enabled

    def __call__(self, done: int, total: int) -> None:
        if not self._enabled:
            return
        if self._bar is None or self._bar.total != total:
            self.close()
            self._bar = tqdm(total=total, desc=self._desc, leave=False)
        self._bar.update(done - self._bar.n)

    def close(self) -> None:
        if self._bar is not None:
            self._bar.close()
            self._bar = None


def _status(message: str) -> None:
    typer.echo(message, err=True)


@app.callback()
def _main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging."),
          quiet: bool = typer.Option(False, "--quiet", "-q", help="Warnings and errors only.")) -> None:
    get_logger()
    if verbose:
        set_verbosity("DEBUG")
    elif quiet:
        set_verbosity("WARNING")


@app.command()
def train(
    config: Path = typer.Argument(..., help="YAML or JSON run configuration."),
    output_dir: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory."),
    set_: List[str] = typer.Option([], "--set", help="Override a config key, e.g. train.iterations=200."),
    log_file: Optional[Path] = typer.Option(None, "--log-file"),
    progress: bool = typer.Option(True, "--progress/--no-progress"),
) -> None:
    """Train a G-DAN or CG-DAN model and write checkpoint, report, losses and plots."""
    with _exit_codes():
        settings = _load_settings(config, set_)
        bar = _Progress("train", progress)
        try:
            report = run_train(settings, progress_cb=bar, status_cb=_status, log_file=log_file,
                               output_dir=output_dir)
        finally:
            bar.close()
        metrics = report["metrics"]
        typer.echo(f"run {report['name']} ({report['model']}) -> {report['output_dir']}")
        if "final_loss" in metrics:
            typer.echo(f"loss {metrics['initial_loss']:.6f} -> {metrics['final_loss']:.6f}")
        if "target" in metrics:
            t = metrics["target"]
            typer.echo(f"target {t['metric']}: {t['value']:.4f} (n={t['n']})")
        if metrics.get("changing_modules") is not None:
            typer.echo(f"changing: {', '.join(metrics['changing_modules']) or 'none'}")


def _parse_interpolation(text: str) -> tuple[str, str, int]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ContractError(f"--interpolate expects a,b,count, got {text!r}")
    try:
        count = int(parts[2])
    except ValueError:
        raise ContractError(f"--interpolate count must be an integer, got {parts[2]!r}") from None
    return parts[0], parts[1], count


@app.command()
def generate(
    checkpoint: Path = typer.Argument(..., help="checkpoint.json, or a run directory holding one."),
    output_dir: Path = typer.Option(Path("generated"), "--out", "-o"),
    domain: Optional[str] = typer.Option(None, "--domain", help="Sample one known domain."),
    interpolate: Optional[str] = typer.Option(None, "--interpolate", help="a,b,count: thetas between two domains."),
    recombine: Optional[str] = typer.Option(None, "--recombine", help="module=domain,...; CG-DAN only."),
    n: int = typer.Option(1000, "--n", help="Rows per generated file."),
    seed: int = typer.Option(0, "--seed"),
) -> None:
    """Write generated (X, Y) CSV files."""
    with _exit_codes():
        if checkpoint.is_dir():
            checkpoint = checkpoint / CHECKPOINT_FILE
        manifest = run_generate(
            checkpoint, output_dir, n, seed, domain,
            _parse_interpolation(interpolate) if interpolate is not None else None,
            parse_assignment(recombine) if recombine is not None else None)
        for entry in manifest["files"]:
            typer.echo(str(output_dir / entry["file"]))


@app.command()
def discover(
    config: Path = typer.Argument(..., help="Run configuration naming the data source."),
    output_dir: Path = typer.Option(Path("graph"), "--out", "-o"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="CI test level in (0, 1)."),
    root: Optional[str] = typer.Option(None, "--root", help="Variable constrained to be a root."),
    with_domain_index: bool = typer.Option(False, "--with-domain-index",
                                           help="Add the domain index S; report changing modules."),
    set_: List[str] = typer.Option([], "--set"),
) -> None:
    """Learn a causal graph; write graph.dot and graph.json."""
    with _exit_codes():
        settings = _load_settings(config, set_)
        result = run_discover(settings, output_dir, alpha, root, with_domain_index, _status)
        typer.echo(f"graph: {result['dot']}")
        if with_domain_index:
            typer.echo(f"changing: {', '.join(result['changing']) or 'none'}")


@app.command()
def adapt(
    checkpoint: Path = typer.Argument(..., help="checkpoint.json, or a run directory holding one."),
    config: Path = typer.Option(..., "--config", "-c", help="Run configuration naming the target data."),
    output_dir: Path = typer.Option(Path("adapted"), "--out", "-o"),
    predictor: Optional[str] = typer.Option(None, "--predictor", help="logistic | knn | least-squares"),
    set_: List[str] = typer.Option([], "--set"),
) -> None:
    """Predict the target domain; write predictions.csv and adapt.json."""
    with _exit_codes():
        if checkpoint.is_dir():
            checkpoint = checkpoint / CHECKPOINT_FILE
        doc = run_adapt(checkpoint, _load_settings(config, set_), output_dir, predictor)
        if doc["metrics"]:
            typer.echo(f"{doc['metrics']['metric']}: {doc['metrics']['value']:.4f}")
        typer.echo(str(output_dir / "predictions.csv"))


@app.command()
def validate(
    prop: str = typer.Option(..., "--prop", help="1, 2, 3 or rotation."),
    param: List[str] = typer.Option([], "--param", help="Family parameter override, key=value."),
    seed: int = typer.Option(0, "--seed"),
    iterations: Optional[int] = typer.Option(None, "--iterations"),
    n_per_domain: int = typer.Option(2000, "--n-per-domain"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Take train settings from a run config."),
) -> None:
    """Run an identifiability check end to end; exit 1 when it fails."""
    with _exit_codes():
        cfg = TrainConfig()
        if config is not None:
            cfg = _load_settings(config, []).as_run().train
        if iterations is not None:
            cfg = replace(cfg, iterations=iterations)
        report = run_validate(prop, cfg, _parse_pairs(param), seed, n_per_domain)
        typer.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=str))
        typer.echo(f"{report.check}: {'PASS' if report.passed else 'FAIL'} ({report.message})")
        if not report.passed:
            raise typer.Exit(EXIT_FAILED)


@app.command()
def compare(
    config: Path = typer.Argument(..., help="Run configuration with a synthetic data source."),
    output_dir: Path = typer.Option(Path("compare"), "--out", "-o"),
    set_: List[str] = typer.Option([], "--set"),
) -> None:
    """Train G-DAN and CG-DAN on one family; report target-joint MMD and error for each."""
    with _exit_codes():
        doc = run_compare(_load_settings(config, set_), output_dir, _status)
        typer.echo(f"changing: {', '.join(doc['changing']) or 'none'}")
        for name in ("gdan", "cgdan"):
            r = doc[name]
            typer.echo(f"{name}: mmd2 {r['target_mmd2']:.6f}, error {r['error']:.4f}, "
                       f"{r['params']} parameters")
        typer.echo(str(output_dir / "compare.json"))


@app.command()
def report(path: Path = typer.Argument(..., help="report.json or a run directory.")) -> None:
    """Summarize a run and verify its config and checkpoint hashes."""
    with _exit_codes():
        rep = read_report(path)
        typer.echo(f"run {rep.name} ({rep.model}), {rep.tool_version}, {rep.wall_clock_s:.1f}s")
        ok = verify_report(rep)
        typer.echo(f"config hash {rep.config_hash[:12]}: {'ok' if ok else 'MISMATCH'}")
        run_dir = path if path.is_dir() else path.parent
        ckpt = run_dir / CHECKPOINT_FILE
        if ckpt.exists() and rep.checkpoint_sha256:
            try:
                _, _, sha = load_checkpoint(ckpt)
            except CheckpointError as exc:
                typer.echo(f"checkpoint: {exc}")
                ok = False
            else:
                same = sha == rep.checkpoint_sha256
                typer.echo(f"checkpoint {sha[:12]}: {'ok' if same else 'does not match the report'}")
                ok = ok and same
        for key, value in sorted(rep.metrics.items()):
            if key != "plots":
                typer.echo(f"  {key}: {json.dumps(value, sort_keys=True)}")
        if not ok:
            raise typer.Exit(EXIT_FAILED)


@app.command()
def version() -> None:
    typer.echo(tool_version())


def main() -> None:
    app()


if __name__ == "__main__":
    main()
