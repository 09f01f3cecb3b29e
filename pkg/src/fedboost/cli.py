"""Command-line entry points: prepare, partition, run, report.

Exit codes: 0 on success, 2 for configuration problems (bad flags, missing
files, infeasible partitions), 3 when a training cell failed.
"""

import json
import logging
import sys
from pathlib import Path

import click

from .boosting import Hyperparameters
from .data import (
    PartitionSpec,
    load_prepared,
    load_recipe,
    make_partition,
    prepare_dataset,
)
from .errors import (
    DatasetLoadError,
    FedboostError,
    InfeasiblePartitionError,
    PreparationError,
)
from .experiment import ALL_SCHEMES, ExperimentConfig, run_experiment
from . import report as report_module

EXIT_CONFIG_ERROR = 2
EXIT_TRAINING_FAILURE = 3


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable info-level logging.")
def main(verbose):
    """Federated gradient boosted decision trees over quantile sketches."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command()
@click.argument("recipe", type=click.Path(path_type=Path))
@click.option("--raw", "raw_path", type=click.Path(path_type=Path), required=True,
              help="Path to the raw CSV named by the recipe.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True,
              help="Directory for train.csv, test.csv, and manifest.json.")
@click.option("--holdout", default=0.2, show_default=True,
              help="Holdout fraction reserved for evaluation.")
@click.option("--seed", default=0, show_default=True)
def prepare(recipe, raw_path, out_dir, holdout, seed):
    """Encode a raw dataset per RECIPE and split off the global holdout."""
    try:
        manifest = prepare_dataset(load_recipe(recipe), raw_path, out_dir,
                                   holdout_fraction=holdout, seed=seed)
    except (DatasetLoadError, PreparationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    click.echo(
        f"prepared {manifest['name']}: {manifest['train_rows']} train rows, "
        f"{manifest['test_rows']} holdout rows, task {manifest['task']}"
    )


@main.command()
@click.argument("prepared_dir", type=click.Path(path_type=Path))
@click.option("--scheme", type=click.Choice(ALL_SCHEMES), required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--parties", default=5, show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Where to write the partition manifest JSON.")
@click.option("--skip-coverage-check", is_flag=True,
              help="Do not require every class in every party slice.")
def partition(prepared_dir, scheme, seed, parties, out_path, skip_coverage_check):
    """Assign the prepared training rows to parties under a skew scheme."""
    try:
        train, _, manifest = load_prepared(prepared_dir)
        result = make_partition(
            train,
            PartitionSpec(scheme=scheme, num_parties=parties, seed=seed),
            check_label_coverage=not skip_coverage_check,
        )
    except InfeasiblePartitionError as exc:
        click.echo(f"infeasible partition: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except (DatasetLoadError, FedboostError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    click.echo(" ".join(str(c) for c in result.counts))
    if out_path is not None:
        with open(out_path, "w") as handle:
            json.dump(result.to_manifest(scheme, seed), handle)
        click.echo(f"wrote {out_path}")


@main.command()
@click.option("--data", "prepared_dirs", type=click.Path(path_type=Path),
              multiple=True, required=True,
              help="Prepared dataset directory; repeat for several datasets.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--schemes", default=",".join(ALL_SCHEMES), show_default=True,
              help="Comma-separated partition schemes to run.")
@click.option("--rounds", default=100, show_default=True, help="Boosting rounds T.")
@click.option("--max-bins", default=255, show_default=True,
              help="Max split candidates per feature.")
@click.option("--delta", default=0.01, show_default=True,
              help="Sketch relative error.")
@click.option("--eta", default=0.1, show_default=True, help="Learning rate.")
@click.option("--reg-lambda", default=0.1, show_default=True,
              help="L2 regularization of leaf weights.")
@click.option("--gamma", default=0.0, show_default=True, help="Split penalty.")
@click.option("--max-depth", default=6, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--parties", default=5, show_default=True)
@click.option("--transport", type=click.Choice(["inprocess", "tcp"]),
              default="inprocess", show_default=True)
@click.option("--f1-average", type=click.Choice(["macro", "micro", "weighted"]),
              default="macro", show_default=True)
def run(prepared_dirs, out_dir, schemes, rounds, max_bins, delta, eta, reg_lambda,
        gamma, max_depth, seed, parties, transport, f1_average):
    """Run the full grid: centralized, local, and federated per scheme."""
    try:
        params = Hyperparameters(
            reg_lambda=reg_lambda, gamma=gamma, eta=eta,
            max_depth=max_depth, max_bins=max_bins, rounds=rounds,
        )
        config = ExperimentConfig(
            schemes=tuple(s.strip() for s in schemes.split(",") if s.strip()),
            hyperparameters=params,
            relative_error=delta,
            seed=seed,
            num_parties=parties,
            transport=transport,
            f1_average=f1_average,
        )
        for scheme in config.schemes:
            if scheme not in ALL_SCHEMES:
                raise ValueError(f"unknown scheme {scheme!r}")
        for prepared in prepared_dirs:
            if not (Path(prepared) / "manifest.json").exists():
                raise DatasetLoadError(f"{prepared} is not a prepared dataset directory")
    except (ValueError, DatasetLoadError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    summary = run_experiment(list(prepared_dirs), config, Path(out_dir))
    click.echo(f"summary written to {Path(out_dir) / 'summary.md'}")
    if any(block["had_failures"] for block in summary["datasets"]):
        click.echo("one or more cells failed; see metrics.json files", err=True)
        sys.exit(EXIT_TRAINING_FAILURE)


@main.command("report")
@click.argument("out_dir", type=click.Path(path_type=Path))
def report_cmd(out_dir):
    """Re-render summary tables and figures from an existing results tree."""
    summary_path = Path(out_dir) / "summary.json"
    if not summary_path.exists():
        click.echo(f"no summary.json under {out_dir}; run the grid first", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    with open(summary_path) as handle:
        summary = json.load(handle)
    report_module.write_summary(summary, Path(out_dir))
    figures = report_module.render_figures(summary, Path(out_dir))
    click.echo(f"wrote summary.md, summary.csv, and {len(figures)} figure(s)")


if __name__ == "__main__":
    main()
