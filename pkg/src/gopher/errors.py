"""Exception hierarchy shared by every gopher module."""


class GopherError(Exception):
    """Base class for library errors."""


class UsageError(GopherError):
    """An operation was called in a context where it is not allowed."""


class RejectedError(GopherError):
    """Work was submitted to an executor that has been shut down."""


class DeadlockError(GopherError):
    """A deterministic run ran out of work before its target completed."""


class ChannelClosedError(GopherError):
    """Write attempted on a closed channel."""


class EndOfInputError(ChannelClosedError):
    """Read attempted on a closed and drained channel."""


class DefinitionError(GopherError):
    """A transputer or replica set was declared inconsistently."""
