"""Simulators for Byzantine-resilient distributed and decentralized learning."""

__version__ = "0.1.0"

from .aggregation import (  # noqa: E402
    RULES, AggregationOutcome, Bulyan, CoordinateMedian, GeometricMedian, Krum, Mean,
    MultiKrum, SignMajority, TrimmedMean, Zeno, make_rule,
)
from .attacks import ATTACKS, AttackContext, make_attack  # noqa: E402
from .config import ExperimentConfig, parse_config, serialize_config  # noqa: E402
from .decentralized import (  # noqa: E402
    DecentralizedConfig, run_average_consensus, run_bridge, run_bridge_variant, run_byrdie,
    run_decentralized, run_dgd, run_lazy_attack_consensus, run_trimmed_consensus,
    trimmed_consensus_step,
)
from .distributed import (  # noqa: E402
    DistributedConfig, compare_rules, run_distributed_sgd, run_signsgd,
)
from .estimators import DecentralizedClassifier, DistributedSGDClassifier  # noqa: E402
from .exceptions import (  # noqa: E402
    ByzresError, ConfigError, ConvergenceError, DimensionError, DivergenceError,
    InvariantViolation, NonFiniteError, RankDeficientError, TopologyError, WellPosednessError,
)
from .inference import (  # noqa: E402
    DetectionConfig, EstimationConfig, simulate_detection, simulate_estimation_breakdown,
    sweep_alpha,
)
from .network import (  # noqa: E402
    NetworkGraph, WeightMatrix, check_partition_condition, check_source_component,
    metropolis_weights, random_graph, read_graph, write_graph,
)
from .numeric import SeededRng  # noqa: E402
from .tasks import Dataset, Task, TaskSpec, generate_data  # noqa: E402
from .trace import MetricsTrace  # noqa: E402
