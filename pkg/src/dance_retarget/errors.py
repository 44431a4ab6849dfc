"""Exception hierarchy shared by every stage of the pipeline."""

from typing import Optional


class DanceRetargetError(Exception):
    """Base class for all errors raised by dance_retarget."""


class ConfigError(DanceRetargetError):
    """Configuration or file-system problem (CLI exit code 2)."""


class FormatError(ConfigError):
    """A document could not be parsed or is missing a field."""

    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}")


class ModelError(DanceRetargetError):
    """Inconsistent robot model or dimension mismatch."""


class UnknownFrameError(ModelError):
    def __init__(self, frame: str):
        self.frame = frame
        super().__init__(f"unknown frame '{frame}'")


class NumericalError(DanceRetargetError):
    """A numeric stage failed (CLI exit code 1)."""


class SingularityError(NumericalError):
    pass


class InfeasibleQpError(NumericalError):
    pass


class SimulationDivergedError(NumericalError):
    def __init__(self, time: float, message: str = "blow-up"):
        self.time = time
        super().__init__(f"{message} at t={time:.3f}s")


class ScheduleError(NumericalError):
    pass


class StageError(DanceRetargetError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")

    @property
    def exit_code(self) -> int:
        return 2 if isinstance(self.cause, (ConfigError, OSError)) else 1
