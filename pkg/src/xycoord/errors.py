"""Exception hierarchy shared across the package."""

from __future__ import annotations


class XYCoordError(Exception):
    """Base class for all library errors."""


class ShapeError(XYCoordError, ValueError):
    pass


class ConfigError(XYCoordError, ValueError):
    pass


class NumericError(XYCoordError, ArithmeticError):
    pass


class DataError(XYCoordError):
    """Dataset files missing or unreadable."""


class IdxParseError(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(IdxParseError):
    pass


class TruncatedPayloadError(IdxParseError):
    pass


class TrailingBytesError(IdxParseError):
    pass


class CheckpointError(XYCoordError):
    pass


class ChecksumError(CheckpointError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (first bad block at byte offset {offset})")
        self.offset = offset


class CheckpointVersionError(CheckpointError):
    pass
