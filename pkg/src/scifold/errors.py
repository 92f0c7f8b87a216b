"""Exception types shared across the toolkit."""


class ScifoldError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(ScifoldError, ValueError):
    """Raised when array shapes disagree; the message names the offending axis."""


class ConfigurationError(ScifoldError, ValueError):
    """Raised for invalid block/network/training configuration."""


class UsageError(ScifoldError, ValueError):
    """Raised when an operation is called in an unsupported way."""


class ContractViolationError(ScifoldError, RuntimeError):
    """Raised when a plug-in (e.g. a denoiser) breaks its declared contract."""


class FileFormatError(ScifoldError, ValueError):
    """Raised when an on-disk container fails magic/length validation."""


class TrainingDivergedError(ScifoldError, RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training loss became non-finite at epoch {epoch}")
