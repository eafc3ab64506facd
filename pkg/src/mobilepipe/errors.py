"""Exception hierarchy shared by every pipeline stage.

Each stage raises a subclass of MobilePipeError; the CLI maps the stage
that raised to an exit code, so errors stay plain data-carrying classes.
"""


class MobilePipeError(Exception):
    """Base class for all pipeline errors."""


# image-ops
class MalformedHeader(MobilePipeError):
    pass


class UnsupportedBitDepth(MobilePipeError):
    pass


class TruncatedData(MobilePipeError):
    pass


class CropLargerThanImage(MobilePipeError):
    pass


class ZeroStd(MobilePipeError):
    pass


# dataset
class TooFewClasses(MobilePipeError):
    pass


class EmptyClass(MobilePipeError):
    pass


class UndecodableImage(MobilePipeError):
    def __init__(self, path, reason=""):
        super().__init__(f"{path}: {reason}" if reason else str(path))
        self.path = path


class MixedChannels(MobilePipeError):
    pass


class ClassSmallerThanK(MobilePipeError):
    pass


class InvalidFraction(MobilePipeError):
    pass


# augmentor
class UnknownPreset(MobilePipeError):
    pass


class EmptyTrainingSet(MobilePipeError):
    pass


class MissingStats(MobilePipeError):
    pass


# engine
class InvalidArchitecture(MobilePipeError):
    pass


class ShapeMismatch(MobilePipeError):
    pass


class EmptySplit(MobilePipeError):
    pass


class NanLoss(MobilePipeError):
    def __init__(self, epoch, batch):
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# search
class EmptyResults(MobilePipeError):
    pass


class NonReducibleArchitecture(MobilePipeError):
    pass


# deploy
class NonFiniteInput(MobilePipeError):
    pass


class NotQuantized(MobilePipeError):
    pass


class MetadataMismatch(MobilePipeError):
    pass


class InsufficientProbes(MobilePipeError):
    pass


# device-sim
class LabelOrderMismatch(MobilePipeError):
    pass
