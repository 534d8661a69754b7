"""Multi-party private set operations from membership zero-sharing."""
from .errors import (ConfigError, CorrelationError, FormulaError, MpsoError, ProtocolError,
                     TransportError)
from .formula import compile_expr, eval_expr, parse
from .protocols import PartyInput, RunResult, export_shares, oracle, random_inputs, run_local
from .session import SessionConfig, derive_params

__all__ = [
    "ConfigError", "CorrelationError", "FormulaError", "MpsoError", "ProtocolError", "TransportError",
    "compile_expr", "eval_expr", "parse", "PartyInput", "RunResult", "export_shares", "oracle",
    "random_inputs", "run_local", "SessionConfig", "derive_params",
]
__version__ = "0.1.0"
