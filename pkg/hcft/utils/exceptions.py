"""
Custom exception classes for the application.

Every domain exception carries the process exit code the CLI returns for it.
"""

from typing import Optional, Sequence

from fastapi import HTTPException, status


class HCFTException(Exception):
    """Base class for all pipeline errors."""

    exit_code: int = 1

    def __init__(self, detail: str = "Pipeline error"):
        self.detail = detail
        super().__init__(detail)


class DimensionMismatchException(HCFTException):
    """Exception raised when two operands have incompatible shapes."""

    def __init__(self, op: str, left: Sequence[int], right: Sequence[int]):
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(
            f"{op}: incompatible shapes {self.left} and {self.right}"
        )


class ContractViolationException(HCFTException):
    """Exception raised when a caller breaks an operation precondition."""

    def __init__(self, detail: str = "Contract violation"):
        super().__init__(detail)


class ArgumentException(HCFTException):
    """Exception raised when an argument is outside its valid range."""

    def __init__(self, detail: str = "Invalid argument"):
        super().__init__(detail)


class ConfigurationException(HCFTException):
    """Exception raised when run configuration cannot be parsed or validated."""

    exit_code = 2

    def __init__(self, detail: str = "Invalid configuration"):
        super().__init__(detail)


class DataException(HCFTException):
    """Base class for cohort and dataset errors."""

    exit_code = 3

    def __init__(self, detail: str = "Data error"):
        super().__init__(detail)


class FormatException(DataException):
    """Exception raised when a stored file is malformed."""

    def __init__(self, detail: str, offset: Optional[int] = None, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = ""
        if path:
            where += f"{path}: "
        if offset is not None:
            where += f"at byte {offset}: "
        super().__init__(f"{where}{detail}")


class GenerationException(DataException):
    """Exception raised when cohort parameters cannot be realised."""

    def __init__(self, detail: str = "Infeasible cohort parameters"):
        super().__init__(detail)


class StratificationException(DataException):
    """Exception raised when a class has too few bags for the requested split."""

    def __init__(self, label: int, count: int, parts: int):
        self.label = label
        super().__init__(
            f"class {label} has {count} bag(s) but the split needs {parts} part(s)"
        )


class SeverityRuleViolationException(DataException):
    """Exception raised when a pseudo label exceeds its bag label."""

    def __init__(self, slide_id: str, patch_index: int, label: int, bag_label: int):
        super().__init__(
            f"instance {slide_id}#{patch_index} carries positive label {label} "
            f"above its bag label {bag_label}"
        )


class UndefinedMetricException(DataException):
    """Exception raised when a metric has no defined value for the input."""

    def __init__(self, detail: str = "Metric undefined for input"):
        super().__init__(detail)


class TrainingException(HCFTException):
    """Exception raised when optimisation diverges."""

    exit_code = 4

    def __init__(self, detail: str = "Training failed", epoch: Optional[int] = None):
        self.epoch = epoch
        if epoch is not None:
            detail = f"{detail} (epoch {epoch})"
        super().__init__(detail)


class StageException(HCFTException):
    """Exception raised when a pipeline stage fails; keeps the cause's exit code."""

    def __init__(self, stage: str, round_index: int, cause: BaseException):
        self.stage = stage
        self.round_index = round_index
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage '{stage}' failed in round {round_index}: {cause}")


class RunNotFoundException(HTTPException):
    """Exception raised when a run or round is not found."""

    def __init__(self, detail: str = "Run not found"):
        super().__init__(status_code=status.HTTP_404_NOT_FOUND, detail=detail)
