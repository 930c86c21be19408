"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Array dimensions incompatible with the operation that received them."""


class ContractError(RuntimeError):
    """An operation was invoked in violation of its documented contract."""


class WindowError(ValueError):
    """A data split is too short to host the requested subsequence windows."""


class NumericalError(RuntimeError):
    """Non-finite values encountered where finite numbers are required."""


class DivergenceError(RuntimeError):
    """A simulated state trajectory exceeded the magnitude guard.

    ``step`` is the time index of the offending state; ``sequence`` is the
    batch row (when the rollout was batched).
    """

    def __init__(self, message, step=None, sequence=None):
        super().__init__(message)
        self.step = step
        self.sequence = sequence


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupted, tampered with, or incompatible."""
