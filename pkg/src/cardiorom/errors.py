"""Exception hierarchy shared by all modules."""


class CardioRomError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(CardioRomError, ValueError):
    pass


class AssemblyError(CardioRomError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class DimensionError(CardioRomError, ValueError):
    pass


class ValidationError(CardioRomError):
    pass


class SingularityError(CardioRomError, FloatingPointError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class FactorizationError(CardioRomError):
    pass


class DivergenceError(CardioRomError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SelectionError(CardioRomError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class HyperreductionBuildError(CardioRomError):
    pass


class EstimationError(CardioRomError):
    pass


class UndefinedMetricError(CardioRomError, ValueError):
    pass
