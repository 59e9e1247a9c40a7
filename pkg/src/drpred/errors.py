"""Exception hierarchy shared across the toolkit."""


class DrpredError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(DrpredError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(DrpredError):
    """Input values fall outside the documented domain."""


class DegenerateBatchError(DrpredError):
    """Batch statistics are undefined (train-mode batch of one)."""


class TrainingDivergedError(DrpredError):
    """Loss or gradients became non-finite during training."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ParseError(DrpredError):
    """SMILES text could not be parsed; carries the byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class VocabularyError(DrpredError):
    """A cluster label is missing from the vocabulary."""

    def __init__(self, label):
        super().__init__(f"cluster label not in vocabulary: {label!r}")
        self.label = label


class DataError(DrpredError):
    """Malformed or inconsistent input data files."""


class MetricsError(DrpredError):
    """A metric is undefined for the given inputs."""

    def __init__(self, message, rmse=None):
        super().__init__(message)
        self.rmse = rmse


class CheckpointError(DrpredError):
    """Checkpoint file is malformed or incompatible."""
