"""Exception hierarchy for the lab."""


class LabError(Exception):
    """Base class for every error raised by ``app.core``."""


class ShapeError(LabError, ValueError):
    pass


class NonFiniteError(LabError, FloatingPointError):
    pass


class ConfigError(LabError, ValueError):
    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class UnknownKindError(LabError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown kind"


class QuadratureError(LabError, ArithmeticError):
    pass


class SurrogateFitError(LabError, RuntimeError):
    def __init__(self, message, best_mse):
        self.best_mse = best_mse
        super().__init__(f"{message} (best held-out MSE {best_mse:.3e})")


class DivergenceError(LabError, RuntimeError):
    def __init__(self, message, histories=None):
        self.histories = list(histories or [])
        super().__init__(message)


class DatasetFormatError(LabError, ValueError):
    pass


class ReproductionFailure(LabError, AssertionError):
    """A reproduction check failed; the message names the comparison."""
