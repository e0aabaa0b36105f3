"""Exception hierarchy.

``DataError`` subclasses describe bad or insufficient input data; the CLI maps
them to exit code 2.  Everything else derives from ``RigscanError``.
"""


class RigscanError(Exception):
    pass


class DataError(RigscanError):
    pass


class ParseError(DataError):
    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class DuplicateBid(DataError):
    pass


class EmptyDataset(DataError):
    pass


class DegenerateTender(DataError):
    pass


class NoEligibleTenders(DataError):
    pass


class MixedLabels(DataError):
    pass


class MalformedPgm(DataError):
    pass


class InsufficientData(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class EmptyInput(DataError):
    pass


class ShapeMismatch(RigscanError, ValueError):
    pass


class ConfigError(RigscanError, ValueError):
    pass


class ModelFileError(DataError):
    pass


class VersionMismatch(ModelFileError):
    pass


class ChecksumMismatch(ModelFileError):
    pass
