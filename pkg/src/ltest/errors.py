"""Exception hierarchy shared across the package.

Errors are grouped to mirror the CLI exit-code contract: usage/config problems,
data problems, and numerical problems each map to a distinct exit code.
"""


class LTestError(Exception):
    """Base class for all package-specific errors."""


# --- numerical / geometric problems ---------------------------------------

class RankDeficient(LTestError):
    """Design matrix is (numerically) rank deficient."""


class BadGroupSize(LTestError):
    """Tested-group size k outside [1, d]."""


class DegenerateResidual(LTestError):
    """y lies in the null-model column space; conditional tests undefined."""


class ZeroInput(LTestError):
    """b = 0 passed where the set-valued branch is not evaluated."""


class SingularGradient(LTestError):
    """The gradient of the inverse map is numerically singular."""


class NullDirection(LTestError):
    """Oracle direction requested for a zero tested-block coefficient."""


class BadRegime(LTestError):
    """Analytic density called outside its (k, c, n-d) regime."""


# --- usage / config problems ----------------------------------------------

class BadLevel(LTestError):
    """Test or FDR level outside (0, 1)."""


class ConfigError(LTestError):
    """Simulation config file problem; message names the offending key."""


# --- data problems ---------------------------------------------------------

class DataError(LTestError):
    """Base class for dataset ingestion problems."""


class ParseError(DataError):
    """Input file could not be parsed."""


class MissingColumn(DataError):
    """A referenced column is absent (or duplicated) in the dataset."""


class NonNumeric(DataError):
    """A required column contains non-numeric entries."""


class TooFewRows(DataError):
    """Fewer rows than columns after ingestion; model would be singular."""
