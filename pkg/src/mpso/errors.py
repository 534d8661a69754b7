"""Error categories. The CLI maps each category to an exit code."""


class MpsoError(Exception):
    exit_code = 1


class ConfigError(MpsoError, ValueError):
    exit_code = 2


class FormulaError(ConfigError):
    def __init__(self, msg, offset=None):
        if offset is not None:
            msg = f"{msg} at offset {offset}"
        super().__init__(msg)
        self.offset = offset


class CostError(FormulaError):
    pass


class UnrepresentableError(FormulaError):
    pass


class EmptyFormulaError(FormulaError):
    """The formula denotes the empty set for every input."""


class CorrelationError(MpsoError):
    exit_code = 3


class ProtocolError(MpsoError):
    exit_code = 4


class HashingError(ProtocolError):
    pass


class OkvsError(ProtocolError):
    pass


class TransportError(ProtocolError):
    pass


class FieldError(MpsoError, ArithmeticError):
    """Domain error in field arithmetic (e.g. inverting zero)."""
