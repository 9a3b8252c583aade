"""Exception types shared across the package."""


class HNMTError(Exception):
    """Base class for all package errors."""


class DimensionError(HNMTError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(HNMTError, RuntimeError):
    """A precondition of an operation was violated by the caller."""


class ParameterError(HNMTError, ValueError):
    """A hyperparameter or argument is outside its valid range."""


class IngestionError(HNMTError, ValueError):
    """Input data could not be read or is malformed."""


class CheckpointError(HNMTError, ValueError):
    """A checkpoint file is unreadable or inconsistent with the model."""


class ParseError(HNMTError, ValueError):
    """A text file (n-best list, BPE model, config) is malformed."""


class ConfigError(HNMTError, ValueError):
    """A run configuration contains unknown or invalid keys."""


class TrainingError(HNMTError, RuntimeError):
    """Training diverged or could not proceed."""


class PipelineError(HNMTError, RuntimeError):
    """A pipeline stage failed."""
