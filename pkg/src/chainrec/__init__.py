"""Chain recurrence for semiflows, via Conley chains and shadow chains."""
from .core import (
    ChainParams,
    ChainrecError,
    ConleyChain,
    Curve,
    DomainEscapeError,
    Metric,
    UsageError,
    metric_distance,
)
from .semiflow import SemiflowSpec, builtin, estimate_modulus, evaluate, system_from_config

__all__ = [
    "ChainParams",
    "ChainrecError",
    "ConleyChain",
    "Curve",
    "DomainEscapeError",
    "Metric",
    "SemiflowSpec",
    "UsageError",
    "builtin",
    "estimate_modulus",
    "evaluate",
    "metric_distance",
    "system_from_config",
]

__version__ = "0.1.0"
