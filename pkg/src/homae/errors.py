"""Exception and warning types shared across the package."""


class HomaeError(Exception):
    pass


class ShapeMismatch(HomaeError, ValueError):
    pass


class NonPositiveDepth(HomaeError, ValueError):
    pass


class DegenerateConfiguration(HomaeError, ValueError):
    pass


class EmptyMesh(HomaeError, ValueError):
    pass


class EmptyPointSet(HomaeError, ValueError):
    pass


class ConfigRange(HomaeError, ValueError):
    pass


class LayoutError(HomaeError):
    pass


class BoxOutOfImage(HomaeError, ValueError):
    pass


class UnknownObject(HomaeError, KeyError):
    pass


class MissingPrediction(HomaeError, KeyError):
    pass


class DuplicatePrediction(HomaeError, ValueError):
    pass


class CheckpointVersionMismatch(HomaeError):
    pass


class NonFiniteLoss(HomaeError, FloatingPointError):
    pass


class NonWatertightWarning(UserWarning):
    """Ray-parity votes disagreed for at least one query point."""


class InsufficientObjectPatches(UserWarning):
    """The object region holds fewer patches than the requested in-object count."""


class UntrainedModelWarning(UserWarning):
    pass
