"""Exception types shared across the package."""


class SpikegridError(Exception):
    """Base class for all package errors."""


class ShapeError(SpikegridError, ValueError):
    """Tensor dimensions are incompatible with an operation."""


class NumericError(SpikegridError, FloatingPointError):
    """A NaN or Inf appeared in a forward value or a gradient."""

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id


class ContractError(SpikegridError, ValueError):
    """A precondition of an operation was violated."""


class NonSmoothGraphError(ContractError):
    """Finite differences were requested through a hard-threshold spike."""


class CheckpointError(SpikegridError):
    """A checkpoint file could not be read or does not match."""


class ChecksumError(CheckpointError):
    pass


class TopologyError(CheckpointError):
    """Checkpoint tensors do not match the target network.

    ``differences`` lists ``(name, expected, found)`` triples.
    """

    def __init__(self, message, differences=()):
        super().__init__(message)
        self.differences = list(differences)


class ConfigError(SpikegridError, ValueError):
    pass


class FormatError(SpikegridError, ValueError):
    """An input file does not follow its declared format."""
