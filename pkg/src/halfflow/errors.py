class HalfFlowError(Exception):
    """Base class for errors raised by the package."""


class DomainError(HalfFlowError, ValueError):
    pass


class PreconditionError(HalfFlowError, ValueError):
    pass


class ConfigError(HalfFlowError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class TubeViolation(DomainError):
    pass


class SolverError(HalfFlowError, RuntimeError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")


class OracleError(HalfFlowError, RuntimeError):
    def __init__(self, message, achieved=None):
        self.achieved = achieved
        super().__init__(message if achieved is None else f"{message} (achieved {achieved:.3e})")


class HypothesisViolation(PreconditionError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message)
