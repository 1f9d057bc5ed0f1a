"""Exception hierarchy shared by every stage of the co-segmentation pipeline."""


class CycleSegError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(CycleSegError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class LabelError(CycleSegError, ValueError):
    """Ground-truth mask holds values outside {0, 1}."""


class EmptyGroup(CycleSegError, ValueError):
    """An operation that needs at least one source image received none."""


class GroupTooSmall(CycleSegError, ValueError):
    """A group path was asked to run with fewer than two branches."""


class InvalidConfig(CycleSegError, ValueError):
    """A structured configuration (strategy, scene, CRM) is inconsistent."""


class CombinatorialBlowup(CycleSegError, ValueError):
    """Exhaustive tuple enumeration would exceed the configured cap."""


class MissingPrediction(CycleSegError, RuntimeError):
    """An image received no prediction during group fusion."""


class FormatError(CycleSegError, ValueError):
    """A file on disk does not follow the expected binary layout."""


class IoError(CycleSegError, OSError):
    """Reading or writing an artifact failed."""


class ConfigError(CycleSegError, ValueError):
    """A run configuration file or flag could not be resolved."""


class NumericalError(CycleSegError, FloatingPointError):
    """A non-finite value appeared while debug evaluation was on."""
