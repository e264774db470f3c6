"""Exception hierarchy. CLI exit codes key off these classes."""


class MMVError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MMVError, ValueError):
    """Bad input or configuration detected before any work is done."""


class ShapeMismatchError(ValidationError):
    pass


class UnknownOpError(ValidationError):
    pass


class NonFiniteError(MMVError, FloatingPointError):
    pass


class LossNotScalarError(ValidationError):
    pass


class LossNotOnTapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class TopologyError(ValidationError):
    """A (modality, space) pair that the configured embedding graph cannot reach."""


class SpaceMismatchError(ValidationError):
    pass


class UnreachableTaskError(TopologyError):
    pass


class DataError(ValidationError):
    pass


class CheckpointError(MMVError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptFileError(CheckpointError):
    pass
