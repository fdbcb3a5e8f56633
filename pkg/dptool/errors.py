"""Exception types raised by dptool operations.

Validation findings are returned as data; these are reserved for
operations whose result is undefined for the given input.
"""

from typing import List, Optional


class DPToolError(Exception):
    """Base class; `code` is a stable machine-readable identifier."""

    code = "DPTOOL_ERROR"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ProblemFileError(DPToolError):
    code = "PROBLEM_FILE_ERROR"


class ZeroMassState(DPToolError):
    code = "ZERO_MASS_STATE"


class ZeroMassSignal(DPToolError):
    code = "ZERO_MASS_SIGNAL"


class UnknownLabel(DPToolError):
    code = "UNKNOWN_LABEL"

    def __init__(self, label: str, kind: str, row: Optional[int] = None):
        where = f"row {row}: " if row is not None else ""
        super().__init__(f"{where}unknown {kind} label {label!r}")
        self.label = label
        self.kind = kind
        self.row = row


class ParseError(DPToolError):
    code = "PARSE_ERROR"

    def __init__(self, row: int, column: str, reason: str):
        super().__init__(f"row {row}, column {column!r}: {reason}")
        self.row = row
        self.column = column
        self.reason = reason


class EmptyDataset(DPToolError):
    code = "EMPTY_DATASET"


class ZeroValueOfInformation(DPToolError):
    """Raised when Δ is too small to normalize losses by."""

    code = "ZERO_VALUE_OF_INFORMATION"

    def __init__(self, message: str, behavioral: Optional[float] = None, calibrated: Optional[float] = None):
        super().__init__(message)
        self.behavioral = behavioral
        self.calibrated = calibrated


class InfeasibleDisclosure(DPToolError):
    code = "INFEASIBLE_DISCLOSURE"


class MultiplicityNotApplicable(DPToolError):
    code = "MULTIPLICITY_NOT_APPLICABLE"


class ZeroMassPerceivedSignal(DPToolError):
    code = "ZERO_MASS_PERCEIVED_SIGNAL"


class InvalidAgentSpec(DPToolError):
    code = "INVALID_AGENT_SPEC"

    def __init__(self, problems: List[str]):
        super().__init__("invalid agent spec: " + "; ".join(problems))
        self.problems = problems


class PreconditionError(DPToolError):
    code = "PRECONDITION_VIOLATED"
