"""Exception types shared across the package.

Each error carries a short machine-friendly ``kind`` so the command line can map
failures onto exit codes without string matching.
"""


class SusphomError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ConfigError(SusphomError, ValueError):
    """Invalid parameters or configuration documents."""

    kind = "config"


class NumericalError(SusphomError, ArithmeticError):
    """A numerical procedure failed to reach its target."""

    kind = "numerical"


class OverDenseError(ConfigError):
    """Hardcore thinning would retain almost nothing."""


class SeparationError(ConfigError):
    """Two inclusions are closer than the separation constraint allows."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class OverlapError(ConfigError):
    """Spheres overlap in a free-space configuration."""


class InsideInclusionError(ConfigError):
    """A field was requested at a point inside an inclusion."""


class KernelMismatchError(ConfigError):
    """The kernel period does not match the configuration period."""


class NonConvergentError(NumericalError):
    """An iteration stopped contracting."""


class AccuracyNotMetError(NumericalError):
    """A kernel evaluator failed its internal cross-check."""


class InsufficientSamplesError(NumericalError):
    """A Monte Carlo estimate is too noisy to be reported."""


class NonIntegrableTailError(NumericalError):
    """A correlation model does not decay fast enough for the pair integral."""


class MissingSubsetError(SusphomError, KeyError):
    """A subset reading needed by a difference operator is absent."""

    kind = "numerical"


class AssertionFailure(SusphomError, AssertionError):
    """An experiment's built-in consistency check failed."""

    kind = "assertion"
