class EpifocusError(Exception):
    pass


class ConfigError(EpifocusError):
    pass


class GeometryError(EpifocusError, ValueError):
    pass


class DegenerateProjectionError(GeometryError):
    def __init__(self, message: str, view: int = None, marker: int = None):
        super().__init__(message)
        self.view = view
        self.marker = marker


class DegeneratePairError(GeometryError):
    pass


class EmptyPairError(EpifocusError):
    pass


class ShapeMismatchError(EpifocusError, ValueError):
    pass


class OptimizerError(EpifocusError):
    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class TrainingError(EpifocusError):
    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UndefinedBaselineError(EpifocusError, ValueError):
    pass


class FormatError(EpifocusError, ValueError):
    pass
