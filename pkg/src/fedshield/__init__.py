"""Federated learning simulator with dual-attention aggregation against label flipping."""

__version__ = "0.1.0"

from .aggregation import (
    AttentionBreakdown,
    LocalUpdate,
    attention_aggregate,
    fed_avg,
    multi_krum,
)
from .data import LabeledDataset, PartitionSpec, PoisonSpec, generate_synthetic, partition, poison
from .errors import (
    ConfigurationError,
    DataError,
    DatasetParseError,
    DegenerateVectorError,
    DivergenceError,
    FedShieldError,
)
from .nn import MlpModel, init_model
from .orchestrator import ExperimentConfig, Flip, RoundRecord, desk_config, evaluate, run_experiment
