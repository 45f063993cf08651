"""Exception hierarchy shared by every wavpool module."""


class WavPoolError(Exception):
    """Base class for all library errors."""


class DimensionError(WavPoolError, ValueError):
    pass


class SignalTooSmallError(WavPoolError, ValueError):
    pass


class CorruptionError(WavPoolError, ValueError):
    """An MRD whose level shapes are mutually inconsistent."""


class ProtocolError(WavPoolError, RuntimeError):
    """A layer used out of order, e.g. backward before forward."""


class DegenerateBatchError(WavPoolError, ValueError):
    pass


class LabelError(WavPoolError, ValueError):
    pass


class ConfigError(WavPoolError, ValueError):
    pass


class FormatError(WavPoolError, ValueError):
    pass


class DataSizeError(WavPoolError, ValueError):
    pass


class DivergenceError(WavPoolError, ArithmeticError):
    def __init__(self, epoch, learning_rate, message=None):
        self.epoch = epoch
        self.learning_rate = learning_rate
        super().__init__(
            message or f"non-finite loss at epoch {epoch} (learning rate {learning_rate:g})"
        )
