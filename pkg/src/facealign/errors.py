"""Exception types shared across the package."""


class FaceAlignError(Exception):
    """Base class for all package errors."""


class ShapeError(FaceAlignError):
    """Array dimensions violate an operation's contract."""


class ContractViolation(FaceAlignError):
    """A documented precondition was not met."""


class DegenerateFaceError(FaceAlignError):
    """Inter-ocular distance is zero; normalization undefined."""


class ModelFormatError(FaceAlignError):
    """Model file is malformed; `offset` points at the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DatasetError(FaceAlignError):
    """Dataset directory or file failed to load."""


class TrainingDiverged(FaceAlignError):
    """Loss or gradients became non-finite during training."""
