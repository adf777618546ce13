"""Exception types shared across the simulator."""


class VarDramError(Exception):
    pass


class ConfigError(VarDramError):
    pass


class VariationError(VarDramError):
    """Field generation failed (non-PD covariance or grid over budget)."""


class IllegalCommand(VarDramError):
    pass


class CapacityExceeded(VarDramError):
    pass


class FlagTransitionError(VarDramError):
    pass


class LengthMismatch(VarDramError):
    pass


class TranslationError(VarDramError):
    """Internal invariant broken: a request resolved into a gated bank."""


class TraceParseError(VarDramError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class TraceOrderError(TraceParseError):
    pass


class FingerprintMismatch(VarDramError):
    pass
