"""Exception taxonomy shared across the package.

Plain ``ValueError`` is used for invalid arguments to otherwise healthy
calls; the classes here mark failures with a distinct recovery story.
"""


class SpdlError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(SpdlError):
    """An experiment or component was configured inconsistently."""


class UnsupportedOperationError(SpdlError):
    """The operation is not defined for the given variant (e.g. loss kind)."""


class IngestionError(SpdlError):
    """A data file failed to parse; the message names the offending offset."""


class ChainError(SpdlError):
    """A block failed a chain-integrity check; the message names the check."""


class ElectionFailedError(SpdlError):
    """No eligible leader candidate; the caller may relaunch with a fresh seed."""


class SimulationError(SpdlError):
    """A protocol invariant was violated mid-run (fatal for the experiment)."""
