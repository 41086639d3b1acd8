"""Error types shared across the toolchain stages."""


class TtschedError(Exception):
    """Base class for all toolchain errors."""

    stage = "ttsched"

    def __str__(self):
        return f"{self.stage}: {super().__str__()}"


class ParseError(TtschedError):
    """Input file is not syntactically readable."""

    stage = "model"


class ValidationError(TtschedError):
    """Model graph violates a structural or shape constraint."""

    stage = "model"

    def __init__(self, message, layer_id=None):
        super().__init__(message)
        self.layer_id = layer_id


class InfeasibleBudgetError(TtschedError):
    """A minimal tile exceeds the scratchpad tile budget."""

    stage = "partition"

    def __init__(self, message, layer_id=None, required_bytes=0):
        super().__init__(message)
        self.layer_id = layer_id
        self.required_bytes = required_bytes


class SpmOverflowError(TtschedError):
    """Scratchpad capacity exceeded after the spill policy gave up."""

    stage = "schedule"

    def __init__(self, message, core=None, cycle=None, deficit=0):
        super().__init__(message)
        self.core = core
        self.cycle = cycle
        self.deficit = deficit


class ScheduleFormatError(TtschedError):
    """Schedule artifact is structurally malformed."""

    stage = "schedule"
