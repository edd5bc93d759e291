"""Exception hierarchy shared across the package."""


class SvtrError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SvtrError):
    """Tensor shapes are incompatible with the requested operation."""


class GeometryError(SvtrError):
    """Spatial geometry (input size, stride, padding) is invalid."""


class ContractError(SvtrError):
    """An API precondition was violated (non-scalar loss, missing grad, ...)."""


class FeasibilityError(SvtrError):
    """A CTC label cannot be aligned to the available timesteps."""


class RenderError(SvtrError):
    """Text cannot be rendered into the requested image geometry."""


class DatasetError(SvtrError):
    """A dataset file is missing, malformed, or contains unknown symbols."""


class CheckpointError(SvtrError):
    """A checkpoint file is corrupt or fails its checksum."""


class CompatibilityError(SvtrError):
    """A checkpoint's config does not match the requested config."""
