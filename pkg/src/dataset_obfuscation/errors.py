"""Exception hierarchy shared by every module in the package.

Each class name doubles as the diagnostic printed by the CLI, so keep the
names short and stable.
"""


class ObfuscationError(Exception):
    """Base class for all package errors."""


# data-io
class WrongMagic(ObfuscationError):
    def __init__(self, found: int, expected: int | None = None):
        self.found = found
        self.expected = expected
        msg = f"unexpected magic 0x{found:08x}"
        if expected is not None:
            msg += f" (expected 0x{expected:08x})"
        super().__init__(msg)


class CountMismatch(ObfuscationError):
    def __init__(self, images: int, labels: int):
        self.images = images
        self.labels = labels
        super().__init__(f"{images} images vs {labels} labels")


class TruncatedFile(ObfuscationError):
    pass


class BadRecordLength(ObfuscationError):
    def __init__(self, file, length: int):
        self.file = file
        self.length = length
        super().__init__(f"{file}: length {length} is not a multiple of 3073")


class LabelOutOfRange(ObfuscationError):
    def __init__(self, value: int):
        self.value = value
        super().__init__(f"label {value} out of range")


class EmptyDataset(ObfuscationError):
    pass


# sampler
class DegenerateSpec(ObfuscationError):
    pass


class InfeasibleOverlap(ObfuscationError):
    pass


class EmptyResult(ObfuscationError):
    pass


# obfuscation
class ShapeMismatch(ObfuscationError):
    pass


# nn-engine
class ShapeError(ObfuscationError):
    pass


class NonFiniteLoss(ObfuscationError):
    def __init__(self, step: int, trace=None):
        self.step = step
        self.trace = trace
        super().__init__(f"non-finite loss at step {step}")


# metrics
class ArchMismatch(ObfuscationError):
    pass


class LengthMismatch(ObfuscationError):
    pass


class RangeError(ObfuscationError):
    pass


# pol
class CommitmentMismatch(ObfuscationError):
    pass


class SegmentOutOfRange(ObfuscationError):
    pass


# containers / harness
class FormatError(ObfuscationError):
    pass


class ConfigError(ObfuscationError):
    pass
