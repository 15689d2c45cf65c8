"""Exception types shared across the package."""


class EgocfError(Exception):
    """Base class for package-specific failures."""


class DimensionError(EgocfError, ValueError):
    """Shapes or lengths incompatible with the requested operation."""


class DegenerateInputError(EgocfError, ValueError):
    """Input is structurally valid but numerically unusable (zero norm etc.)."""


class ConsistencyError(EgocfError, RuntimeError):
    """State violates an invariant: missing gradient, overlapping spans, ..."""


class ConfigError(EgocfError, ValueError):
    """Bad configuration value or unusable combination of options."""


class FormatError(EgocfError, ValueError):
    """On-disk artifact is malformed, truncated, or version-incompatible."""


class InputError(EgocfError, ValueError):
    """Caller-supplied data outside the documented domain."""
