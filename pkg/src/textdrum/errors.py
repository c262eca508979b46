"""Exception types shared across the package.

CLI exit codes are attached to the three top-level families so the command
layer can map any failure to a status without a lookup table.
"""

from __future__ import annotations


class TextDrumError(Exception):
    exit_code = 2


class ConfigError(TextDrumError, ValueError):
    exit_code = 1


class DataError(TextDrumError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class EmptyTrackError(DataError):
    pass


class UnsupportedMeterError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class ShapeError(TextDrumError, ValueError):
    pass


class BatchTooSmallError(TextDrumError, ValueError):
    pass


class DegenerateEmbeddingError(TextDrumError, ArithmeticError):
    pass


class DegenerateDistributionError(TextDrumError, ArithmeticError):
    pass


class UntrainedEncoderError(TextDrumError, RuntimeError):
    pass


class CheckpointError(TextDrumError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class DependencyError(TextDrumError):
    exit_code = 3

    def __init__(self, stage: str, detail: str = ""):
        msg = f"missing prerequisite stage: {stage}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.stage = stage
