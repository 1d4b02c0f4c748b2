"""Exception types raised across the package."""


class PipcdrError(Exception):
    pass


class ZeroRow(PipcdrError, ValueError):
    pass


class DimMismatch(PipcdrError, ValueError):
    pass


class BatchTooSmall(PipcdrError, ValueError):
    pass


class SingleCluster(PipcdrError, ValueError):
    pass


class DegenerateBatch(PipcdrError, ValueError):
    pass


class NoForwardState(PipcdrError, RuntimeError):
    pass


class TooFewPoints(PipcdrError, ValueError):
    pass


class LengthMismatch(PipcdrError, ValueError):
    pass


class EmptyReference(PipcdrError, ValueError):
    pass


class InfeasibleSeparation(PipcdrError, ValueError):
    pass


class LabelsMissing(PipcdrError, ValueError):
    pass


class RaggedRows(PipcdrError, ValueError):
    pass


class ParseError(PipcdrError, ValueError):
    def __init__(self, msg, row=None, col=None):
        super().__init__(msg)
        self.row = row
        self.col = col


class ConfigInvalid(PipcdrError, ValueError):
    pass
