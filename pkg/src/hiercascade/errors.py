"""Exception hierarchy shared by every module.

Each error carries an ``exit_code`` so the CLI can map failures onto its
stable exit-code table without a lookup of its own.
"""

from __future__ import annotations


class HierError(Exception):
    exit_code = 1


class UsageError(HierError, ValueError):
    exit_code = 2


# -- schema / shape ---------------------------------------------------------


class SchemaError(HierError, ValueError):
    exit_code = 5


class ScheduleError(SchemaError):
    """A HierSchedule violates its monotonicity or positivity rules."""


class DimMismatch(SchemaError):
    def __init__(self, level: int, expected: int, got: int):
        self.level, self.expected, self.got = level, expected, got
        super().__init__(f"level {level}: expected length {expected}, got {got}")


class DuplicateId(SchemaError):
    def __init__(self, item_id: int):
        self.id = item_id
        super().__init__(f"duplicate id {item_id}")


class NonFinite(SchemaError):
    def __init__(self, item_id: int, level: int):
        self.id, self.level = item_id, level
        super().__init__(f"non-finite component in id {item_id}, level {level}")


class ScheduleMismatch(SchemaError):
    pass


class UnknownId(SchemaError, KeyError):
    def __init__(self, item_id: int):
        self.id = item_id
        super().__init__(f"unknown id {item_id}")

    def __str__(self) -> str:
        return self.args[0]


class LevelOutOfRange(SchemaError, IndexError):
    pass


class IndexOutOfRange(HierError, IndexError):
    exit_code = 2


class EmptyGallery(SchemaError):
    pass


class MissingGroundTruth(SchemaError):
    pass


# -- numerics ---------------------------------------------------------------


class EmptyInput(HierError, ValueError):
    exit_code = 2


class DegenerateBatch(HierError, ValueError):
    exit_code = 2


class NonFiniteLoss(HierError, ArithmeticError):
    exit_code = 4


class DivergenceDetected(HierError, ArithmeticError):
    exit_code = 4


# -- files ------------------------------------------------------------------


class IoFailure(HierError, OSError):
    exit_code = 3


class StoreFormatError(HierError):
    """The bytes on disk are not a valid store file."""

    exit_code = 3


class BadMagic(StoreFormatError):
    pass


class UnsupportedVersion(StoreFormatError):
    def __init__(self, version: int):
        self.version = version
        super().__init__(f"unsupported store format version {version}")


class TruncatedFile(StoreFormatError):
    pass


class ChecksumMismatch(StoreFormatError):
    pass
