"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments outside its contract."""


class HorizonExceeded(ValueError):
    """Path enumeration was asked for more steps than the horizon cap allows."""


class CoverageError(ValueError):
    """Some relative pose received too few training samples."""


class ScoreTableError(ValueError):
    """A score-table file could not be parsed."""


class IncompleteTableError(ScoreTableError):
    """A score table is missing an (object, view) cell."""


class EpisodeComplete(Exception):
    """Every view on the grid has already been visited."""


class ConfigError(ValueError):
    """A benchmark configuration is invalid."""
