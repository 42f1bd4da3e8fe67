"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A data container or spec object violates one of its invariants."""


class ConfigError(ValueError):
    """Configuration is missing, unparsable, or inconsistent with the model."""


class NumericalError(RuntimeError):
    """A numerical failure (NaN/Inf) aborted an operation."""


class IngestError(RuntimeError):
    """External dataset layout is missing required files or structure."""


class MasksUnavailableError(RuntimeError):
    """A mask-dependent loss was requested but the batch carries no masks."""
