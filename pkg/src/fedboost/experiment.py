"""Experiment grid over prepared datasets: centralized, local, federated.

For each dataset the grid trains one centralized model (a single party
holding the whole training set), five local models per scheme (each party
alone on its slice), and one five-party federated model per scheme, all
evaluated against the same global holdout. Every cell records its config
hash and per-round loss log so any number in the summary can be re-derived
in isolation. Infeasible partitions (a scheme that cannot give every party
all classes) are recorded as skipped cells, not failures, mirroring the
blank cells of the reference results table.
"""

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .boosting import Hyperparameters, TreeModel, train_centralized
from .data import DatasetMatrix, PartitionSpec, load_prepared, make_partition
from .errors import FedboostError, InfeasiblePartitionError
from .federation import TrainingConfig, run_training
from .metrics import evaluate_model
from .seeding import derive_seed

logger = logging.getLogger(__name__)

ALL_SCHEMES = ("even", "A", "B", "C", "D")
MODES = ("centralized", "local_party_avg", "federated")


@dataclass
class ExperimentConfig:
    schemes: tuple = ALL_SCHEMES
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    relative_error: float = 0.01
    seed: int = 0
    num_parties: int = 5
    transport: str = "inprocess"
    f1_average: str = "macro"
    timeout: float = 300.0

    def to_dict(self) -> dict:
        return {
            "schemes": list(self.schemes),
            "hyperparameters": self.hyperparameters.to_dict(),
            "relative_error": self.relative_error,
            "seed": self.seed,
            "num_parties": self.num_parties,
            "transport": self.transport,
            "f1_average": self.f1_average,
        }


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _cell_payload(dataset: str, scheme: str, mode: str, config: ExperimentConfig, **extra):
    payload = {"dataset": dataset, "scheme": scheme, "mode": mode, **config.to_dict()}
    payload.update(extra)
    return payload


def _write_cell(
    out_dir: Path, metrics: dict, model: TreeModel | None = None
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.json", "w") as handle:
        json.dump(metrics, handle, indent=2)
    if model is not None:
        (out_dir / "model.json").write_text(model.canonical_json())


def _training_config(config: ExperimentConfig) -> TrainingConfig:
    return TrainingConfig(
        hyperparameters=config.hyperparameters,
        relative_error=config.relative_error,
        transport=config.transport,
        timeout=config.timeout,
        seed=config.seed,
    )


def run_dataset_grid(
    name: str,
    train: DatasetMatrix,
    test: DatasetMatrix,
    config: ExperimentConfig,
    out_dir: Path,
) -> dict:
    """All cells for one dataset; returns the summary block for reporting."""
    out_base = Path(out_dir) / name
    average = config.f1_average
    result = {
        "dataset": name,
        "task": train.task,
        "num_class": train.num_class,
        "train_rows": train.n_rows,
        "test_rows": test.n_rows,
        "schemes": list(config.schemes),
        "federated": {},
        "local_per_scheme": {},
        "had_failures": False,
    }

    # Centralized: one party holding the whole training set.
    logger.info("[%s] centralized training", name)
    central_metrics = {"config_hash": config_hash(_cell_payload(name, "*", "centralized", config))}
    central_model = None
    try:
        outcome = run_training([("party_1", train)], _training_config(config))
        if not outcome.ok:
            raise FedboostError(outcome.error)
        central_model = outcome.model
        central_metrics.update(
            evaluate_model(central_model, test.features, test.labels, average)
        )
        central_metrics["history"] = outcome.history
    except FedboostError as exc:
        central_metrics["error"] = str(exc)
        result["had_failures"] = True
    result["centralized"] = {
        k: central_metrics.get(k) for k in ("f1", "accuracy", "error") if k in central_metrics
    }

    local_f1_pool: list[float] = []
    for scheme in config.schemes:
        scheme_dir = out_base / scheme
        _write_cell(scheme_dir / "centralized", dict(central_metrics, scheme=scheme), central_model)

        try:
            partition = make_partition(
                train, PartitionSpec(scheme=scheme, num_parties=config.num_parties,
                                     seed=derive_seed(config.seed, "dataset", name))
            )
        except InfeasiblePartitionError as exc:
            logger.warning("[%s] scheme %s infeasible: %s", name, scheme, exc)
            skipped = {"skipped": str(exc), "scheme": scheme}
            _write_cell(scheme_dir / "federated", dict(skipped, mode="federated"))
            _write_cell(scheme_dir / "local_party_avg", dict(skipped, mode="local_party_avg"))
            result["federated"][scheme] = {"skipped": str(exc)}
            result["local_per_scheme"][scheme] = {"skipped": str(exc)}
            continue

        parties = [
            (f"party_{i + 1}", train.subset(rows))
            for i, rows in enumerate(partition.party_indices)
        ]

        # Local mode: every party trains alone on its slice.
        per_party = []
        for party_id, slice_data in parties:
            cell = {
                "party": party_id,
                "rows": slice_data.n_rows,
                "config_hash": config_hash(
                    _cell_payload(name, scheme, "local", config, party=party_id)
                ),
            }
            try:
                model, history = train_centralized(
                    slice_data, config.hyperparameters, config.relative_error
                )
                cell.update(evaluate_model(model, test.features, test.labels, average))
                cell["history"] = history
                _write_cell(scheme_dir / "local_party_avg" / party_id, cell, model)
                local_f1_pool.append(cell["f1"])
            except FedboostError as exc:
                cell["error"] = str(exc)
                result["had_failures"] = True
                _write_cell(scheme_dir / "local_party_avg" / party_id, cell)
            per_party.append(cell)
        scheme_f1s = [c["f1"] for c in per_party if "f1" in c]
        local_summary = {
            "scheme": scheme,
            "mode": "local_party_avg",
            "f1": sum(scheme_f1s) / len(scheme_f1s) if scheme_f1s else None,
            "per_party": [
                {k: c.get(k) for k in ("party", "rows", "f1", "error") if k in c}
                for c in per_party
            ],
            "config_hash": config_hash(_cell_payload(name, scheme, "local_party_avg", config)),
        }
        _write_cell(scheme_dir / "local_party_avg", local_summary)
        result["local_per_scheme"][scheme] = {"f1": local_summary["f1"]}

        # Federated mode: the five-party protocol.
        logger.info("[%s] federated training, scheme %s", name, scheme)
        fed_cell = {
            "scheme": scheme,
            "mode": "federated",
            "party_counts": partition.counts,
            "config_hash": config_hash(_cell_payload(name, scheme, "federated", config)),
        }
        started = time.perf_counter()
        try:
            outcome = run_training(parties, _training_config(config))
            if not outcome.ok:
                raise FedboostError(outcome.error)
            fed_cell.update(
                evaluate_model(outcome.model, test.features, test.labels, average)
            )
            fed_cell["history"] = outcome.history
            fed_cell["seconds"] = time.perf_counter() - started
            _write_cell(scheme_dir / "federated", fed_cell, outcome.model)
            result["federated"][scheme] = {
                "f1": fed_cell["f1"], "accuracy": fed_cell["accuracy"],
            }
        except FedboostError as exc:
            fed_cell["error"] = str(exc)
            result["had_failures"] = True
            _write_cell(scheme_dir / "federated", fed_cell)
            result["federated"][scheme] = {"error": str(exc)}

    result["local_party_avg"] = {
        "f1": sum(local_f1_pool) / len(local_f1_pool) if local_f1_pool else None,
        "n_models": len(local_f1_pool),
    }
    return result


def run_experiment(
    prepared_dirs: list[Path], config: ExperimentConfig, out_dir: Path
) -> dict:
    """Run the grid over several prepared datasets and write the summary."""
    from . import report

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for prepared in prepared_dirs:
        train, test, manifest = load_prepared(prepared)
        results.append(
            run_dataset_grid(manifest["name"], train, test, config, out_dir)
        )
    summary = {
        "config": config.to_dict(),
        "config_hash": config_hash(config.to_dict()),
        "datasets": results,
    }
    report.write_summary(summary, out_dir)
    report.render_figures(summary, out_dir)
    return summary
