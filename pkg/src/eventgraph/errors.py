"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: UsageError and ConfigError exit 1,
data-shaped failures (IngestError, GraphParseError, SizingError) exit 2,
and BudgetError exits 3.
"""


class EventGraphError(Exception):
    """Base class for all toolkit errors."""


class UsageError(EventGraphError):
    """An API was called out of contract (e.g. step() after termination)."""


class ConfigError(EventGraphError):
    """A configuration value is inconsistent or degenerate."""


class IngestError(EventGraphError):
    """The input stream itself is unreadable (not a per-record reject)."""


class GraphParseError(EventGraphError):
    """A serialized graph document is malformed; message carries the location."""


class SizingError(EventGraphError):
    """A fixed-capacity buffer is too small; message names the required capacity."""


class BudgetError(EventGraphError):
    """Estimated resource usage exceeds the configured budget."""
