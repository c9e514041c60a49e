"""Exception types shared across the package."""


class SMCError(Exception):
    """Base class for every error raised by smcomm."""


class RejectedInputError(SMCError, ValueError):
    pass


class ConfigurationError(SMCError, ValueError):
    pass


class TrainingDivergenceError(SMCError, ArithmeticError):
    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class ParseError(SMCError, ValueError):
    """Malformed serialized data. Carries the location of the failure."""

    def __init__(self, message: str, *, offset: int | None = None,
                 line: int | None = None, column: int | None = None,
                 field: str | None = None):
        self.offset = offset
        self.line = line
        self.column = column
        self.field = field
        where = []
        if field is not None:
            where.append(f"field {field}")
        if offset is not None:
            where.append(f"offset {offset}")
        if line is not None:
            where.append(f"line {line}, column {column}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)


class KnowledgeMissError(SMCError, KeyError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"knowledge base has no entry for {key!r}")

    def __str__(self):
        return self.args[0]


class IncompatibleArchitectureError(SMCError, ValueError):
    pass


class EnumerationRefusedError(SMCError, ValueError):
    pass


class CoverageError(SMCError, KeyError):
    def __str__(self):
        return self.args[0]


class InfeasibleEditError(SMCError, ValueError):
    pass
