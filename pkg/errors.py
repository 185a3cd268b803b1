"""
Exception hierarchy for selfgate
Library code raises these; only the CLI and the sweep runner catch them
"""

from typing import Optional, Tuple


class SelfGateError(Exception):
    """Base class for every error raised by selfgate"""


class ShapeError(SelfGateError):
    """Operand shapes do not conform for an operation"""

    def __init__(self, op: str, *shapes: Tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"shape mismatch in {op}: {joined}")


class NonFiniteError(SelfGateError):
    """An operation produced NaN or Inf"""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        message = f"non-finite value produced by {op}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class TapeError(SelfGateError):
    """Misuse of a gradient tape"""


class ConfigError(SelfGateError):
    """Invalid run configuration; `field` names the offending key"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DatasetError(SelfGateError):
    """Dataset files are missing, malformed or inconsistent"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class CheckpointError(SelfGateError):
    """Checkpoint cannot be written or read"""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unknown container version"""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint payload does not match its checksum or is truncated"""


class DivergenceError(SelfGateError):
    """Training produced a non-finite loss"""

    def __init__(self, epoch: int, step: int, checkpoint_path: Optional[str] = None):
        self.epoch = epoch
        self.step = step
        self.checkpoint_path = checkpoint_path
        message = f"non-finite loss at epoch {epoch}, step {step}"
        if checkpoint_path:
            message += f"; last good checkpoint: {checkpoint_path}"
        super().__init__(message)


class GateTraceError(SelfGateError):
    """Gate trace is missing or does not match the evaluation records"""


class ParameterError(SelfGateError):
    """A layer or head is missing one of its parameter matrices"""


class InvalidArgumentError(SelfGateError, ValueError):
    """A library call received an argument outside its domain"""
