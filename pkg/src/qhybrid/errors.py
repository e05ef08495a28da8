"""Exception hierarchy shared by all qhybrid modules."""


class QHybridError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(QHybridError, ValueError):
    """Input violates a documented precondition."""


class ResourceLimitError(QHybridError):
    """Request exceeds a configured resource cap."""

    def __init__(self, message, cap=None):
        super().__init__(message)
        self.cap = cap


class DegeneratePostselectionError(QHybridError):
    """Postselected outcome has (numerically) zero probability."""

    def __init__(self, message, probability=0.0):
        super().__init__(message)
        self.probability = probability


class QasmError(QHybridError, ValueError):
    """Parse or validation failure in qasm-lite text, with source position."""

    def __init__(self, message, line=None, col=None, offset=None):
        self.line = line
        self.col = col
        self.offset = offset
        self.detail = message
        if line is not None:
            message = f"line {line}, col {col}: {message}"
        super().__init__(message)


class ExecutionError(QHybridError):
    """Failure while executing a circuit; carries the failing instruction index."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"instruction {index}: {message}")
        self.index = index


class ConditioningError(QHybridError):
    """Matrix is singular to tolerance or outside the supported spectrum."""


class CalibrationError(QHybridError):
    """HHL constants cannot satisfy the plan invariants."""


class NumericError(QHybridError):
    """A numerical routine failed to converge."""


class RefinementError(QHybridError):
    """Iterative refinement did not reach the tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ProtocolError(QHybridError):
    """Malformed frame or message on the wire."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class TransportError(QHybridError):
    """Connection to the device was lost or could not be established."""


class DeviceError(QHybridError):
    """The device answered with an ERROR message."""

    def __init__(self, code, detail):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class ScheduleError(QHybridError, ValueError):
    """Job document violates the schema; message starts with the field path."""


class InfeasibleJobError(ScheduleError):
    """A job requests more nodes than the cluster owns."""


class StepError(QHybridError):
    """A time step failed; wraps the solver error with the step index."""

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
