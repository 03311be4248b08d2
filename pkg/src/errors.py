"""
Exception types shared by the library and the command line
"""


class DeadLeavesError(Exception):
    """Base class for every error the library raises on purpose."""


class InvalidInputError(DeadLeavesError, ValueError):
    """Degenerate geometry, invalid parameters or malformed flags."""


class PartitionCapError(InvalidInputError):
    """Raised when a pixel set is too large to enumerate its partitions."""

    def __init__(self, n_pixels: int, cap: int, projected: int):
        self.n_pixels = n_pixels
        self.cap = cap
        self.projected = projected
        super().__init__(
            f"{n_pixels} pixels exceed the enumeration cap of {cap} "
            f"({projected:,} partitions). Use a smaller window or raise --cap."
        )


class FormatError(DeadLeavesError, ValueError):
    """A scene, image or partition file could not be parsed."""

    def __init__(self, message: str, path=None, line=None, column=None, offset=None):
        self.path = path
        self.line = line
        self.column = column
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ConsistencyError(DeadLeavesError, RuntimeError):
    """A computed quantity violated an invariant it must satisfy."""
