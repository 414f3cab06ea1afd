class BornInfeldError(Exception):
    pass


class DomainError(BornInfeldError, ValueError):
    """An argument lies outside the domain of an operation (e.g. |Du| >= 1)."""


class QuadratureError(BornInfeldError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class LinearSolveError(BornInfeldError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class ConfigError(BornInfeldError):
    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class UnsupportedAuditError(BornInfeldError):
    pass
