"""Typed errors raised across the package."""


class VoxSplatError(Exception):
    """Base class for package errors."""


class CulledBehindCamera(VoxSplatError):
    """Primitive lies behind the camera near plane."""


class NonFiniteGradient(VoxSplatError):
    def __init__(self, where, index=None):
        self.where = where
        self.index = index
        msg = f"non-finite gradient in {where}"
        if index is not None:
            msg += f" (primitive {index})"
        super().__init__(msg)


class ShapeMismatch(VoxSplatError):
    """Inputs that must share a shape do not."""


class UnknownAttribute(VoxSplatError):
    """Attribute map requested for an attribute the model does not carry."""


class EmptyInput(VoxSplatError):
    """An operation received an empty collection."""


class OutOfRange(VoxSplatError):
    """A scalar argument fell outside its documented range."""


class MixedStage(VoxSplatError):
    """Composition requires every model to be editable-stage."""


class DatasetEmpty(VoxSplatError):
    """Training dataset has no usable views."""


class DivergedLoss(VoxSplatError):
    """Training loss became non-finite."""


class BadMagic(VoxSplatError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(VoxSplatError):
    """File version is newer than this build understands."""


class ChecksumMismatch(VoxSplatError):
    """Trailing CRC32 does not match the file contents."""


class CorruptIndex(VoxSplatError):
    """Quantized attribute index points outside its codebook."""
