"""Exception hierarchy shared by every module."""


class BoxDenoiseError(Exception):
    """Base class for all package errors."""


class ContractViolation(BoxDenoiseError, ValueError):
    """An operation was called with inputs outside its contract."""


class AllBehindCamera(ContractViolation):
    """Every corner of a box lies at or behind the image plane."""


class InsufficientNeighbors(ContractViolation):
    pass


class TooManyGroundTruths(ContractViolation):
    pass


class MissingScore(ContractViolation):
    pass


class ParseError(BoxDenoiseError, ValueError):
    pass


class MalformedLine(ParseError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingKey(ParseError):
    pass


class MalformedMatrix(ParseError):
    pass


class ConfigError(BoxDenoiseError, ValueError):
    pass
