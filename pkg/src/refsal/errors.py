"""Exception types shared across the engine."""


class RefsalError(Exception):
    """Base class for all engine errors."""


class ShapeError(RefsalError):
    """Array dimensions incompatible with the requested operation."""


class ConfigError(RefsalError):
    """Hyperparameter or configuration value outside its valid range."""


class InputError(RefsalError):
    """Malformed or degenerate input data."""


class DegenerateContextError(InputError):
    """No context tokens available for local emphasis; caller should fall back."""


class BackendError(RefsalError):
    """Base class for backend failures."""


class UnknownImageError(BackendError):
    """The backend cannot resolve the requested image identifier."""


class TransportError(BackendError):
    """Connection, timeout, or stream-level failure talking to a backend."""


class MalformedFrameError(BackendError):
    """A wire frame could not be decoded."""


class InvariantViolationError(BackendError):
    """A decoded backend response violates the response contract."""


class NoCandidateError(RefsalError):
    """No mask proposal survived filtering, even after relaxation."""
