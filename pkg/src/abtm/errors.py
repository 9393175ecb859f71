"""Exception hierarchy for the engine."""


class AbtmError(Exception):
    """Base class for all engine errors."""


class DuplicateKey(AbtmError):
    pass


class ReservedKey(AbtmError):
    pass


class MalformedDump(AbtmError):
    pass


class DivideByZero(AbtmError, ZeroDivisionError):
    pass


class ParseError(AbtmError):
    """Syntax error in an expression or a tree file.

    ``offset`` is a character offset into the parsed text; ``line`` and
    ``column`` are 1-based and filled in when known.
    """

    def __init__(self, message: str, offset: int, expected: str = "", line: int = 0, column: int = 0):
        self.message = message
        self.offset = offset
        self.expected = expected
        self.line = line
        self.column = column
        where = f"{line}:{column}" if line else f"offset {offset}"
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"{where}: {message}{detail}")


class DuplicateName(AbtmError):
    pass


class ValidationError(AbtmError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class CycleBudgetExceeded(AbtmError):
    pass


class ConfigError(AbtmError):
    pass


class OracleMismatch(AbtmError):
    pass


class ExecutorError(AbtmError):
    """An executor failed inside the simulator; names replica and time."""

    def __init__(self, replica: int, time: float, cause: Exception):
        self.replica = replica
        self.time = time
        self.cause = cause
        super().__init__(f"replica {replica} at t={time:g}: {type(cause).__name__}: {cause}")
