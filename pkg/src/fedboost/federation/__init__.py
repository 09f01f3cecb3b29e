from .aggregator import Aggregator
from .party import Party
from .runner import TrainingConfig, TrainingResult, load_training_config, run_training
from .transport import InProcessTransport, TcpTransport, run_party_client

__all__ = [
    "Aggregator",
    "Party",
    "TrainingConfig",
    "TrainingResult",
    "InProcessTransport",
    "TcpTransport",
    "load_training_config",
    "run_party_client",
    "run_training",
]
