"""Exception hierarchy shared by every fgp module."""


class FGPError(Exception):
    """Base class for all errors raised by fgp."""


class GraphError(FGPError, ValueError):
    pass


class CyclicGraph(GraphError):
    pass


class BadFeatureRow(GraphError):
    pass


class DanglingEdgeIndex(GraphError):
    pass


class ShapeMismatch(FGPError, ValueError):
    pass


class InvalidHyperparameter(FGPError, ValueError):
    pass


class NumericOverflow(FGPError, ArithmeticError):
    pass


class NotScalarLoss(FGPError, ValueError):
    pass


class TooFewItems(FGPError, ValueError):
    pass


class AllTied(FGPError, ValueError):
    pass


class InvalidPercent(FGPError, ValueError):
    pass


class DegenerateCovariance(FGPError, ValueError):
    pass


class MissingProxyScores(FGPError, ValueError):
    pass


class TooFewLabeled(FGPError, ValueError):
    pass


class SpaceExhausted(FGPError, RuntimeError):
    pass


class MutationExhausted(FGPError, RuntimeError):
    pass


class InsufficientRecords(FGPError, ValueError):
    pass


class ParseError(FGPError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(FGPError, ValueError):
    pass


class UnknownOp(SchemaError):
    pass


class LabelAccessError(FGPError, RuntimeError):
    """Raised when a label-free stage tries to read performance labels."""


class BatchSurrogateError(FGPError, RuntimeError):
    def __init__(self, failures):
        self.failures = list(failures)
        detail = ", ".join(f"#{i}: {type(e).__name__}: {e}" for i, e in self.failures)
        super().__init__(f"{len(self.failures)} graph(s) failed: {detail}")


class ConfigError(FGPError, ValueError):
    pass


class IoError(FGPError, OSError):
    pass
