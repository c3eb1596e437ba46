"""``ncgsnn`` command line: train, kfold, gridsearch, export-weights, report."""
from __future__ import annotations

import functools
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
from pydantic import ValidationError

from .config import ExperimentConfig, ModelConfig, format_validation_error, load_grid
from .exceptions import NCGError, ParameterError
from .experiment import run_gridsearch, run_kfold, run_train
from .reports import (RunRecord, export_weights, format_number, load_model, write_bundle,
                      write_csv, write_lock, write_report)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fail(kind: str, message: str, code: int):
    sep = "\n" if "\n" in message else " "
    click.echo(f"{kind}:{sep}{message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    """Map library exceptions to one-line messages and non-zero exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _fail("schema error", format_validation_error(exc) + "\n", 2)
        except NCGError as exc:
            _fail(type(exc).__name__, str(exc), 1)
        except OSError as exc:
            _fail("io error", str(exc), 1)

    return wrapper


def _load_config(config_path, out, seed, mnist_dir, features, encode) -> ExperimentConfig:
    config = ExperimentConfig.load(config_path)
    changes = {}
    if out is not None:
        changes["output_dir"] = str(out)
    if seed is not None:
        changes["seed"] = seed
    if mnist_dir is not None:
        changes["data.mnist_dir"] = str(mnist_dir)
        changes["data.features"] = None
        changes["data.test_features"] = None
    if features is not None:
        changes["data.features"] = str(features)
        changes["data.mnist_dir"] = None
    if encode is not None:
        changes["data.encoding"] = encode
    return config.with_overrides(**changes) if changes else config


def run_options(fn):
    options = [
        click.option("--config", "config_path", required=True,
                     type=click.Path(dir_okay=False, path_type=Path), help="Experiment YAML."),
        click.option("--out", type=click.Path(file_okay=False, path_type=Path),
                     help="Output directory (overrides output_dir)."),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Override the seed."),
        click.option("--threads", type=click.IntRange(1), default=1, show_default=True,
                     help="Parallel workers for folds and grid cells."),
        click.option("--mnist-dir", type=click.Path(path_type=Path),
                     help="Directory with MNIST IDX files."),
        click.option("--features", type=click.Path(path_type=Path), help="NCGF feature file."),
        click.option("--encode", type=click.Choice(["latency"]), help="Input encoding."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log per-epoch progress.")
def main(verbose):
    """Train and evaluate spiking classifiers with Neuronal Competition Groups."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@run_options
@handle_errors
def train(config_path, out, seed, threads, mnist_dir, features, encode):
    """Single training run with early stopping; writes a report bundle."""
    config = _load_config(config_path, out, seed, mnist_dir, features, encode)
    started = _now()
    result = run_train(config)
    bundle = write_bundle(config.output_dir, config, [RunRecord(0, config.seed, result)],
                          "train", started, _now())
    click.echo((bundle / "summary.txt").read_text(), nl=False)


@main.command()
@run_options
@click.option("--k", "n_folds", type=int, default=10, show_default=True, help="Number of folds.")
@handle_errors
def kfold(config_path, out, seed, threads, mnist_dir, features, encode, n_folds):
    """K-fold training, each fold with its own seed, scored on the test set."""
    config = _load_config(config_path, out, seed, mnist_dir, features, encode)
    started = _now()
    result = run_kfold(config, n_folds, threads)
    records = [RunRecord(k, s, r) for k, (s, r) in enumerate(zip(result.seeds, result.runs))]
    bundle = write_bundle(config.output_dir, config, records, f"kfold k={n_folds}",
                          started, _now())
    click.echo((bundle / "summary.txt").read_text(), nl=False)


def _validate_grid(config: ExperimentConfig, space: dict) -> None:
    fields = set(ModelConfig.model_fields)
    unknown = sorted(set(space) - fields)
    if unknown:
        raise ValidationError.from_exception_data("grid", [
            {"type": "extra_forbidden", "loc": ("grid", key), "input": space[key]}
            for key in unknown])
    if not space or any(len(v) == 0 for v in space.values()):
        raise ParameterError("empty hyperparameter grid")
    for key, values in space.items():
        for value in values:
            ModelConfig.model_validate({**config.model.model_dump(), key: value})


@main.command()
@run_options
@click.option("--grid", "grid_path", required=True,
              type=click.Path(dir_okay=False, path_type=Path), help="Grid YAML.")
@handle_errors
def gridsearch(config_path, out, seed, threads, mnist_dir, features, encode, grid_path):
    """Exhaustive hyperparameter search; writes a ranked table and the winning config."""
    config = _load_config(config_path, out, seed, mnist_dir, features, encode)
    space = load_grid(grid_path)
    _validate_grid(config, space)
    result = run_gridsearch(config, space, threads)
    keys = sorted(space)
    def cell(value):
        return str(value) if isinstance(value, (str, bool)) else format_number(value)

    rows = [[rank, format_number(acc)] + [cell(p[k]) for k in keys]
            for rank, (p, acc) in enumerate(result.ranked(), start=1)]
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "grid.csv", ["rank", "val_accuracy"] + keys, rows)
    best_params = {k: getattr(result.best, k) for k in keys}
    winner = config.with_overrides(**{f"model.{k}": v for k, v in best_params.items()})
    (out_dir / "best_config.yaml").write_text(winner.to_yaml())
    write_lock(out_dir, config)
    best_acc = result.ranked()[0][1]
    summary = (f"command: gridsearch\nconfig_hash: {config.config_hash()}\n"
               f"cells: {len(result.rows)}\nbest: {best_params} val {100 * best_acc:.2f}\n")
    (out_dir / "summary.txt").write_text(summary)
    click.echo(summary, nl=False)


@main.command("export-weights")
@click.argument("model_path", type=click.Path(path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="CSV file to write.")
@handle_errors
def export_weights_cmd(model_path, out_path):
    """Export a model snapshot as one CSV row per output neuron."""
    layer = load_model(model_path)
    export_weights(layer, out_path)
    click.echo(f"wrote {layer.n_neurons} neurons x {layer.n_inputs} weights to {out_path}")


@main.command()
@click.argument("bundle_path", type=click.Path(path_type=Path))
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              help="Where to write the report tables (default: the bundle).")
@handle_errors
def report(bundle_path, out_dir):
    """Per-class update shares, update entropy per NCG and an accuracy summary."""
    click.echo(write_report(bundle_path, out_dir), nl=False)

