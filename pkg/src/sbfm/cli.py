"""Command-line front end: ``sbfm gen-data | train | sample | verify | eval | plot-data``."""

from __future__ import annotations

import csv
import functools
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
import numpy as np

from . import __version__
from ._compat import detect_runtime, resolve_run_dir
from .checks import format_table
from .config import RunConfig, load_config
from .errors import SBFMError
from .field_model import load_checkpoint
from .manifest import RunManifest
from .oracle_eval import default_registry, evaluate_model, sample_pairs
from .streams import substream
from .toy_data import generate_dataset, read_dataset, write_dataset
from .trainer import MANIFEST_NAME, train

logger = logging.getLogger(__name__)

CONFIG_EPILOG = "\b\nConfig keys (section.key = default):\n" + "\n".join(
    f"  {line}" for line in RunConfig.describe_keys()
)


def _handle_errors(func):
    """Turn package errors into a one-line message and a non-zero exit."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except SBFMError as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc

    return wrapper


def _config_options(func):
    func = click.option(
        "--set", "assignments", multiple=True, metavar="SECTION.KEY=VALUE",
        help="Override any config key (repeatable).",
    )(func)
    func = click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
        help="INI config file.",
    )(func)
    return func


def _checkpoint_source_kind(checkpoint: Path, config: RunConfig) -> str:
    manifest_path = checkpoint.parent / MANIFEST_NAME
    if manifest_path.is_file():
        return RunManifest.load(manifest_path).config["loss"]["source_kind"]
    return config.loss.source_kind


@click.group(epilog=CONFIG_EPILOG)
@click.version_option(__version__, prog_name="sbfm")
@click.option("-v", "--verbose", is_flag=True, help="Log lifecycle events.")
@click.option("--debug", is_flag=True, help="Log per-step detail.")
def cli(verbose: bool, debug: bool) -> None:
    """Paired audio-video object removal with bridge flow matching (toy scale)."""
    level = logging.DEBUG if debug else logging.INFO if verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s")


@cli.command("gen-data", epilog=CONFIG_EPILOG)
@_config_options
@click.option("--seed", type=click.INT, help="Dataset seed.")
@click.option("--pairs", type=click.INT, help="Number of scenes.")
@click.option("--objects", type=click.INT, help="Object vocabulary size K.")
@click.option("--objects-per-scene", type=click.INT, help="Objects mixed per scene N.")
@click.option("--output", type=click.Path(dir_okay=False), help="Dataset file to write.")
@_handle_errors
def gen_data(config_path, assignments, seed, pairs, objects, objects_per_scene, output) -> None:
    """Generate the synthetic removal dataset and its digest sidecar."""
    config = load_config(
        config_path,
        assignments,
        {
            "run": {"seed": seed, "dataset": output},
            "toy_data": {"n_pairs": pairs, "n_objects": objects, "objects_per_scene": objects_per_scene},
        },
    )
    runtime = detect_runtime()
    path = Path(config.run.dataset)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(config.run.seed, config.data, threads=runtime.threads)
    manifest = write_dataset(dataset, path)
    click.echo(f"{manifest.digest}  {path}")


@cli.command("train", epilog=CONFIG_EPILOG)
@_config_options
@click.option("--seed", type=click.INT, help="Training seed.")
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False), help="Dataset file.")
@click.option("--lambda", "lam", type=click.FLOAT, help="Video-block loss weight.")
@click.option("--heads", type=click.Choice(["mlp", "linear"]), help="Head architecture.")
@click.option("--epochs", type=click.INT, help="Maximum epochs.")
@click.option("--source-kind", type=click.Choice(["paired", "noise"]), help="Bridge source.")
@click.option("--objective", type=click.Choice(["sbfm", "cfm"]), help="Regression target.")
@click.option("--run-dir", type=click.Path(file_okay=False), help="Explicit run directory.")
@click.option("--progress/--no-progress", default=True, help="Show the epoch progress bar.")
@_handle_errors
def train_cmd(config_path, assignments, seed, dataset, lam, heads, epochs, source_kind,
              objective, run_dir, progress) -> None:
    """Train a field; writes checkpoints and manifest.json into the run directory."""
    config = load_config(
        config_path,
        assignments,
        {
            "run": {"seed": seed, "dataset": dataset},
            "objective": {"lam": lam, "source_kind": source_kind, "objective_kind": objective},
            "field_model": {"heads": heads},
            "trainer": {"max_epochs": epochs},
        },
    )
    data = read_dataset(config.run.dataset)
    # the dataset file carries the data config it was generated with
    config = replace(config, data=data.config)
    target = resolve_run_dir(config.run.out_dir, config.run.seed, run_dir)
    target.mkdir(parents=True, exist_ok=True)
    config.write(target / "config.ini")
    result = train(
        data,
        config.field_config,
        config.loss_config,
        config.optim_config,
        target,
        dataset_path=config.run.dataset,
        runtime=detect_runtime(),
        progress=progress,
    )
    for line in result.manifest.summary_lines:
        click.echo(line)
    click.echo(f"  Run dir:      {target}")


def _load_for_inference(checkpoint: str, dataset: str, limit: Optional[int]):
    params = load_checkpoint(checkpoint)
    _, _, test_set = read_dataset(dataset).split()
    if limit is not None:
        test_set = test_set.subset(slice(0, limit))
    if len(test_set) == 0:
        raise click.ClickException("the test split is empty")
    return params, test_set


@cli.command(epilog=CONFIG_EPILOG)
@_config_options
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False), help="Dataset file.")
@click.option("--steps", type=click.INT, help="Euler steps.")
@click.option("--limit", type=click.INT, help="Only the first N test pairs.")
@click.option("--output", type=click.Path(file_okay=False), default="samples", show_default=True)
@_handle_errors
def sample(config_path, assignments, checkpoint, dataset, steps, limit, output) -> None:
    """Edit test pairs; writes generated.npy and trajectories.csv."""
    config = load_config(
        config_path, assignments,
        {"run": {"dataset": dataset}, "simulate": {"n_steps": steps, "record_path": True}},
    )
    params, test_set = _load_for_inference(checkpoint, config.run.dataset, limit)
    if _checkpoint_source_kind(Path(checkpoint), config) == "noise":
        x_init = substream(config.run.seed, "eval").standard_normal(test_set.x0.shape)
    else:
        x_init = test_set.x0
    trajectory = sample_pairs(params, x_init, test_set.phi_a, test_set.phi_v, config.plan)
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "generated.npy", trajectory.final)
    trajectory.write_csv(out / "trajectories.csv")
    click.echo(f"wrote {len(test_set)} paths of {config.plan.n_steps} steps to {out}")


@cli.command()
@click.option("--seed", type=click.INT, default=0, show_default=True)
@click.option("--only", multiple=True, help="Run only these checks (repeatable).")
@click.option("--report", type=click.Path(dir_okay=False), help="Write results as JSON.")
@_handle_errors
def verify(seed, only, report) -> None:
    """Run the identity and convergence checks; exits 1 if any fails."""
    registry = default_registry(seed)
    try:
        results = [registry.run(name) for name in only] if only else registry.run_all()
    except KeyError as exc:
        raise click.ClickException(f"unknown check {exc}; known: {', '.join(registry.names)}")
    for line in format_table(results):
        click.echo(line)
    if report:
        Path(report).write_text(json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True))
    failed = [r.name for r in results if r.status != "pass"]
    if failed:
        click.echo(f"failed: {', '.join(failed)}", err=True)
        click.get_current_context().exit(1)


@cli.command("eval", epilog=CONFIG_EPILOG)
@_config_options
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False), help="Dataset file.")
@click.option("--steps", type=click.INT, help="Euler steps.")
@click.option("--limit", type=click.INT, help="Only the first N test pairs.")
@click.option("--output", type=click.Path(dir_okay=False), default="metrics.json", show_default=True)
@click.option("--pair-errors", type=click.Path(dir_okay=False), help="Per-pair error CSV.")
@_handle_errors
def eval_cmd(config_path, assignments, checkpoint, dataset, steps, limit, output, pair_errors) -> None:
    """Score a checkpoint on the test split."""
    config = load_config(
        config_path, assignments,
        {"run": {"dataset": dataset}, "simulate": {"n_steps": steps, "record_path": False}},
    )
    params, test_set = _load_for_inference(checkpoint, config.run.dataset, limit)
    report = evaluate_model(
        params,
        test_set,
        config.plan,
        source_kind=_checkpoint_source_kind(Path(checkpoint), config),
        seed=config.run.seed,
    )
    report.write(output)
    if pair_errors:
        report.write_pair_errors(pair_errors)
    for line in report.summary_lines:
        click.echo(line)


def tidy_rows(run: str, manifest: RunManifest) -> List[Dict[str, Any]]:
    """Long-format ``run, metric, step, value`` rows of a training history."""
    rows: List[Dict[str, Any]] = []
    for record in manifest.epochs:
        for split, loss in (("train", record.train), ("validation", record.validation)):
            for part, value in (("total", loss.total), ("audio", loss.audio_part), ("video", loss.video_part)):
                rows.append({"run": run, "metric": f"{split}_{part}", "step": record.epoch, "value": value})
        rows.append({"run": run, "metric": "lr", "step": record.epoch, "value": record.lr})
    if manifest.baseline_validation is not None:
        rows.append({"run": run, "metric": "zero_field_total", "step": 0,
                     "value": manifest.baseline_validation.total})
    return rows


def report_rows(run: str, report: Dict[str, Any]) -> List[Dict[str, Any]]:
    rows = []
    for block in ("audio", "video", "joint"):
        for key, value in sorted(report[block].items()):
            rows.append({"run": run, "metric": f"{block}_{key}", "step": 0, "value": value})
    for key in ("energy_matched", "energy_threshold"):
        rows.append({"run": run, "metric": key, "step": 0, "value": report[key]})
    return rows


@cli.command("plot-data")
@click.argument("manifests", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "reports", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="MetricReport JSON (repeatable).")
@click.option("--output", type=click.Path(dir_okay=False), default="plot-data.csv", show_default=True)
@_handle_errors
def plot_data(manifests: Sequence[str], reports: Sequence[str], output: str) -> None:
    """Convert manifests and metric reports into one tidy CSV for plotting."""
    rows: List[Dict[str, Any]] = []
    for path in manifests:
        rows.extend(tidy_rows(Path(path).parent.name, RunManifest.load(path)))
    for path in reports:
        rows.extend(report_rows(Path(path).stem, json.loads(Path(path).read_text())))
    with open(output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run", "metric", "step", "value"])
        writer.writeheader()
        writer.writerows(rows)
    click.echo(f"wrote {len(rows)} rows to {output}")


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Console-script entry point."""
    cli.main(args=list(argv) if argv is not None else None, prog_name="sbfm")


if __name__ == "__main__":
    main()
