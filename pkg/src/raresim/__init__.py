"""Rare-event reliability analysis with subset simulation and local surrogates."""

__version__ = "0.1.0"

from .core import DesignSet, RngStream, Sample, lhs_sample  # noqa: E402
from .engine import RunConfig, RunResult, SubsetSimulationError, run  # noqa: E402
from .limit_states import make_limit_state  # noqa: E402

__all__ = [
    "DesignSet",
    "RngStream",
    "RunConfig",
    "RunResult",
    "Sample",
    "SubsetSimulationError",
    "lhs_sample",
    "make_limit_state",
    "run",
    "__version__",
]
