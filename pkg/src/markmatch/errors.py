"""Exception types shared across the package.

Plain argument validation raises ValueError; the classes here cover
conditions a caller may want to handle separately (CLI exit codes,
HTTP status mapping).
"""


class MarkMatchError(Exception):
    """Base class for package-specific errors."""


class NoMarkFoundError(MarkMatchError):
    """A segmentation prompt hit no qualifying ink."""


class DuplicateEnrollmentError(MarkMatchError):
    """A (ballot_id, mark_index) pair was enrolled twice."""


class EmptyPoolError(MarkMatchError):
    """A query was issued against an empty pool."""


class FileFormatError(MarkMatchError):
    """A pool or model file failed to parse.

    ``line`` is the 1-based offending line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VersionMismatchError(FileFormatError):
    """A pool or model file declares an unsupported format version."""

    def __init__(self, found: str, expected: str):
        super().__init__(f"unsupported format version {found!r}, expected {expected!r}")
        self.found = found
        self.expected = expected


class TrainingDivergedError(MarkMatchError):
    """Training produced a non-finite loss; ``step`` is the failing step index."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at training step {step}")
        self.step = step
        self.value = value
