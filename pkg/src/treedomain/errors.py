"""Exception types shared across the package."""


class FieldRangeError(ValueError):
    """A packed-word field received a value outside its bit width."""


class MalformedQueryError(ValueError):
    """A 64-bit query word violates the layout (nonzero unused bits etc.)."""


class StateError(RuntimeError):
    """An operation was applied to a grid in the wrong state."""


class ConfigurationError(ValueError):
    """A scenario or domain configuration is unusable (e.g. fewer grids than ranks)."""


class LinkError(RuntimeError):
    """A query was addressed to a rank outside the communication rotation."""


class CapacityError(RuntimeError):
    """A per-rank counter (grid ids) is exhausted."""


class ProtocolError(RuntimeError):
    """A consistency violation surfaced while processing queries."""


class PlanError(ValueError):
    """A migration plan violates its constraints."""


class DeadlockError(RuntimeError):
    """No rank can make progress; carries the wait-for cycle when one exists."""

    def __init__(self, message, cycle=None):
        super().__init__(message)
        self.cycle = cycle or []


class BufferOverflowError(RuntimeError):
    """A buffered send exceeds the receiver's buffer budget."""


class ShutdownError(RuntimeError):
    """The simulated transport was used after being closed."""


class DumpFormatError(ValueError):
    """A topology dump could not be parsed."""
