"""Job runner: build parties and transport from a config, run the protocol.

The in-process transport drives party objects synchronously and is the
default for simulation and tests. The TCP mode binds the aggregator socket
first, launches one client thread per party against it, and then runs the
identical protocol over length-prefixed frames; both modes produce
byte-identical serialized models for the same inputs because every float
survives the JSON round trip exactly.
"""

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..boosting import Hyperparameters, TreeModel
from ..data import DatasetMatrix, PartitionResult, read_matrix_csv
from ..errors import FedboostError, PartyTimeoutError, RoundAbortedError
from .aggregator import Aggregator
from .party import Party
from .transport import InProcessTransport, TcpTransport, run_party_client


@dataclass
class TrainingConfig:
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    relative_error: float = 0.01
    transport: str = "inprocess"
    aggregator_host: str = "127.0.0.1"
    aggregator_port: int = 0  # 0 lets the OS pick a free port
    timeout: float = 60.0
    seed: int = 0  # recorded for audit; the protocol itself is deterministic


@dataclass
class TrainingResult:
    model: TreeModel | None
    history: list[dict]
    ok: bool
    error: str | None = None


def run_training(
    parties_data: list, config: TrainingConfig
) -> TrainingResult:
    """Run the full protocol over the given party slices.

    Entries are (party_id, DatasetMatrix) pairs, or pre-built Party objects
    for callers that need custom party behavior. An aborted round yields a
    failed result carrying the last fully-fused model rather than raising,
    so callers can persist what completed.
    """
    parties = [
        entry if isinstance(entry, Party) else Party(entry[0], entry[1])
        for entry in parties_data
    ]
    if config.transport == "inprocess":
        transport = InProcessTransport(parties)
        client_threads = []
    elif config.transport == "tcp":
        transport, client_threads = _start_tcp(parties, config)
    else:
        raise ValueError(f"unknown transport {config.transport!r}")

    aggregator = Aggregator(
        transport,
        config.hyperparameters,
        relative_error=config.relative_error,
        timeout=config.timeout,
    )
    try:
        model = aggregator.run()
        return TrainingResult(model=model, history=aggregator.history, ok=True)
    except (RoundAbortedError, PartyTimeoutError, FedboostError) as exc:
        return TrainingResult(
            model=aggregator.model,
            history=aggregator.history,
            ok=False,
            error=f"{type(exc).__name__}: {exc}",
        )
    finally:
        transport.close()
        for thread in client_threads:
            thread.join(timeout=config.timeout)


def _start_tcp(parties, config: TrainingConfig):
    import socket

    # Bind before launching clients so the port is known and connectable.
    probe = socket.create_server((config.aggregator_host, config.aggregator_port))
    host, port = probe.getsockname()[:2]
    probe.close()

    threads = []
    listener: dict = {}

    def serve():
        listener["transport"] = TcpTransport.listen(
            host, port, [p.party_id for p in parties], timeout=config.timeout
        )

    accept_thread = threading.Thread(target=serve, daemon=True)
    accept_thread.start()
    for party in parties:
        thread = threading.Thread(
            target=run_party_client,
            args=(host, port, party),
            kwargs={"connect_timeout": config.timeout},
            daemon=True,
        )
        thread.start()
        threads.append(thread)
    accept_thread.join(timeout=config.timeout)
    if "transport" not in listener:
        raise PartyTimeoutError("*", "TCP registration did not complete")
    return listener["transport"], threads


def load_training_config(path: str | Path) -> tuple[list[tuple[str, DatasetMatrix]], TrainingConfig]:
    """Read the JSON job description: transport, endpoints, parties, knobs.

    Party slices either come as explicit per-party CSVs
    (``parties: [{id, data_path}]``) or as a shared train CSV plus a
    partition manifest assigning rows to parties. The label schema is
    inferred from the union of the parties' labels unless the config pins
    ``task``/``num_class`` explicitly.
    """
    import pandas as pd

    path = Path(path)
    with open(path) as handle:
        document = json.load(handle)
    base = path.parent

    if "parties" in document:
        csv_paths = [
            (entry["id"], _resolve(base, entry["data_path"]))
            for entry in document["parties"]
        ]
        num_class = document.get("num_class") or (
            max(int(pd.read_csv(p)["label"].max()) for _, p in csv_paths) + 1
        )
        task = document.get("task") or ("binary" if num_class == 2 else "multiclass")
        parties_data = [
            (party_id, read_matrix_csv(p, task, num_class)) for party_id, p in csv_paths
        ]
    else:
        train_path = _resolve(base, document["train_data"])
        num_class = document.get("num_class") or (
            int(pd.read_csv(train_path)["label"].max()) + 1
        )
        task = document.get("task") or ("binary" if num_class == 2 else "multiclass")
        train = read_matrix_csv(train_path, task, num_class)
        with open(_resolve(base, document["partition_manifest"])) as handle:
            partition = PartitionResult.from_manifest(json.load(handle))
        parties_data = [
            (f"party_{i + 1}", train.subset(rows))
            for i, rows in enumerate(partition.party_indices)
        ]

    host, _, port = document.get("aggregator_addr", "127.0.0.1:0").partition(":")
    config = TrainingConfig(
        hyperparameters=Hyperparameters.from_dict(document.get("hyperparameters", {})),
        relative_error=document.get("relative_error", 0.01),
        transport=document.get("transport", "inprocess"),
        aggregator_host=host or "127.0.0.1",
        aggregator_port=int(port or 0),
        timeout=document.get("timeout", 60.0),
        seed=document.get("seed", 0),
    )
    return parties_data, config


def _resolve(base: Path, value: str) -> Path:
    candidate = Path(value)
    return candidate if candidate.is_absolute() else base / candidate
