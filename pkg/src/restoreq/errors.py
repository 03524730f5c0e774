"""Exception types raised across the package."""


class RestoreQError(Exception):
    """Base class for all package errors."""


class ImageDecodeError(RestoreQError):
    pass


class ChannelError(RestoreQError):
    pass


class BoxError(RestoreQError, ValueError):
    pass


class ShapeError(RestoreQError, ValueError):
    pass


class ManifestError(RestoreQError):
    pass


class SpecError(RestoreQError, ValueError):
    """A network description is inconsistent.

    ``layer_index`` points at the first offending layer when known.
    """

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class CheckpointError(RestoreQError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigError(RestoreQError, ValueError):
    pass


class DivergenceError(RestoreQError):
    """Training produced a non-finite loss."""


class EvaluationError(RestoreQError, ValueError):
    pass
