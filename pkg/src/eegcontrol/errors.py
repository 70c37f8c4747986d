"""Exception hierarchy shared across the package."""


class EEGControlError(Exception):
    """Base class for all package errors."""


class IngestionError(EEGControlError):
    """A dataset file is missing, unreadable, or malformed."""

    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message = f"{message}: {path}"
        super().__init__(message)


class ConfigurationError(EEGControlError, ValueError):
    """A configuration cannot produce a valid model or run."""


class BackboneLoadError(EEGControlError):
    """Backbone weights are missing or do not match a checkpoint."""


class ArchitectureMismatchError(EEGControlError, RuntimeError):
    """Block layouts of two networks disagree (adapter vs backbone)."""


class TrainingDivergedError(EEGControlError, FloatingPointError):
    """A training step produced a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} {self.diagnostics}" if diagnostics else message)


class MetricError(EEGControlError, ArithmeticError):
    """A metric computation produced a non-finite result."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} {self.diagnostics}" if diagnostics else message)
