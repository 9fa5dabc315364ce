"""Exception types shared across the package."""


class MeshFieldError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MeshFieldError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(MeshFieldError, ValueError):
    """An input is outside the numeric domain of the operation (e.g. zero norm)."""


class ContractError(MeshFieldError, RuntimeError):
    """A documented usage contract was violated by the caller."""


class GeometryError(MeshFieldError, ValueError):
    """A mesh is geometrically unusable (empty, degenerate, ...)."""


class MeshFormatError(MeshFieldError, ValueError):
    """A mesh file could not be parsed."""


class BackendError(MeshFieldError, RuntimeError):
    """An embedding backend failed (transport, protocol, or service error)."""


class ConfigError(MeshFieldError, ValueError):
    """Configuration values are inconsistent or unsupported."""


class InputError(MeshFieldError, ValueError):
    """A user-supplied value is empty or malformed."""
