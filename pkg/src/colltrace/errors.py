"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid layout, program, fault or scenario configuration."""


class TopologyError(ValueError):
    """Query that makes no sense for the given topology (self-flow, 1-ring)."""


class SimulatorBug(RuntimeError):
    """The event loop ran dry with unfinished ops and no fault to blame."""


class RecordValidationError(ValueError):
    """A trace record violates its field invariants."""


class TraceParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class AnalysisError(ValueError):
    """Root-cause analysis was called with unusable input."""


class InsufficientHistory(AnalysisError):
    pass
