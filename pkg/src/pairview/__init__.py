"""Pairwise multi-view recognition and active view selection on a viewing sphere."""

from .errors import (
    ConfigError,
    ContractViolation,
    CoverageError,
    EpisodeComplete,
    HorizonExceeded,
    IncompleteTableError,
    ScoreTableError,
)
from .viewsphere import GridSpec, Path, RelativePose, ViewIndex

__version__ = "0.1.0"
