"""Exception hierarchy. CLI exit codes key off these classes."""


class EduAttnError(Exception):
    pass


class ConfigError(EduAttnError):
    """Bad configuration or arguments (CLI exit code 2)."""


class DimensionError(EduAttnError, ValueError):
    pass


class NumericError(EduAttnError, ArithmeticError):
    """NaN/Inf encountered (CLI exit code 3)."""


class InputError(EduAttnError, ValueError):
    pass


class ParseError(EduAttnError, ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class ValidationError(EduAttnError, ValueError):
    pass


class DataError(EduAttnError, ValueError):
    pass


class CompatibilityError(EduAttnError):
    """Checkpoint does not match this build or vocabulary."""


class ScaleError(EduAttnError, ValueError):
    pass
