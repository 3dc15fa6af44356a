"""Real-vs-permuted price chart experiments: build surrogate charts, stream
paired trials to subjects or bots, score guesses, and test the fair-coin null
with exact binomial tails."""

from .engine import ContestConfig, Engine
from .series import (
    ChartWindow,
    Permutation,
    PricePath,
    ReturnSequence,
    SurrogatePath,
    build_surrogate,
    compute_returns,
    random_shift,
    sample_permutation,
    segment_disjoint,
)
from .stats import (
    ContestResult,
    SubjectRecord,
    binomial_tail,
    subgroup_accuracy,
    summarize_contest,
)
from .store import DatasetRegistry, EventLog, GuessEvent, load_prices

__version__ = "0.1.0"

__all__ = [
    "ChartWindow",
    "ContestConfig",
    "ContestResult",
    "DatasetRegistry",
    "Engine",
    "EventLog",
    "GuessEvent",
    "Permutation",
    "PricePath",
    "ReturnSequence",
    "SubjectRecord",
    "SurrogatePath",
    "binomial_tail",
    "build_surrogate",
    "compute_returns",
    "load_prices",
    "random_shift",
    "sample_permutation",
    "segment_disjoint",
    "subgroup_accuracy",
    "summarize_contest",
    "__version__",
]
