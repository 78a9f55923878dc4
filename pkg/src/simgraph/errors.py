"""Exception hierarchy shared by every stage of the toolkit."""


class SimGraphError(Exception):
    """Base class for all toolkit errors."""


class FormatError(SimGraphError):
    """A binary or text artifact does not follow its declared layout."""


class TruncationError(FormatError):
    def __init__(self, path, offset, message=None):
        self.path = str(path)
        self.offset = offset
        super().__init__(message or f"{self.path}: truncated at byte offset {offset}")


class CorruptionError(FormatError):
    """Compressed data failed an integrity check while decoding."""

    def __init__(self, message, vertex=None):
        self.vertex = vertex
        super().__init__(message)


class DomainError(SimGraphError, ValueError):
    """An argument lies outside the domain of an operation."""


class ParseError(SimGraphError, ValueError):
    def __init__(self, message, record_index=None):
        self.record_index = record_index
        super().__init__(message)


class ValidationError(SimGraphError):
    """A structural invariant or cross-check failed."""

    def __init__(self, message, vertex=None, edge=None):
        self.vertex = vertex
        self.edge = edge
        super().__init__(message)


class PreconditionError(SimGraphError):
    """Input violates a documented precondition (e.g. unsorted or duplicated edges)."""


class CompletenessError(SimGraphError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(f"({i},{j})" for i, j in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" and {len(self.missing) - 10} more"
        super().__init__(f"missing COO blocks: {shown}{more}")


class PlanningError(SimGraphError):
    """The memory budget cannot accommodate even a single partition."""


class StorageError(SimGraphError, OSError):
    pass


class ProtocolError(SimGraphError):
    def __init__(self, code, message=""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class JournalCorruptionError(SimGraphError):
    pass
