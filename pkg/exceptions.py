"""
Error hierarchy for the LSTM rainfall-runoff toolkit

Every error carries the process exit code the CLI reports for it:
1 for I/O problems, 2 for invalid inputs, 3 for numerical divergence.
"""
from typing import Optional


class HydroLstmError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


## I/O
class DataFileError(HydroLstmError):
    """Input file is missing or unreadable"""
    exit_code = 1


## Validation
class ConfigError(HydroLstmError):
    pass


class MissingColumn(HydroLstmError):
    pass


class InvalidDate(HydroLstmError):
    pass


class NonContiguousDates(HydroLstmError):
    pass


class NonFiniteValue(HydroLstmError):
    pass


class TminAboveTmax(HydroLstmError):
    pass


class NegativeValue(HydroLstmError):
    pass


class DateMismatch(HydroLstmError):
    pass


class ZeroVariance(HydroLstmError):
    pass


class SeriesTooShort(HydroLstmError):
    pass


class SpanTooShort(HydroLstmError):
    pass


class LengthMismatch(HydroLstmError):
    pass


class ConstantObservations(HydroLstmError):
    pass


class ConstantSeries(HydroLstmError):
    pass


class ShapeMismatch(HydroLstmError):
    pass


class CheckpointFormatError(HydroLstmError):
    pass


class StateAlignmentError(HydroLstmError):
    pass


## Divergence
class NonFiniteState(HydroLstmError):
    """Forward pass produced a non-finite cell or hidden state"""
    exit_code = 3

    def __init__(self, message: str, timestep: Optional[int] = None):
        super().__init__(message)
        self.timestep = timestep


class NonFiniteGradient(HydroLstmError):
    exit_code = 3


class DivergedTraining(HydroLstmError):
    exit_code = 3
