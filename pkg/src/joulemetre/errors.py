"""Exception hierarchy shared across the toolkit."""


class JoulemetreError(Exception):
    """Base class for all joulemetre errors."""


# --- telemetry ---

class CounterUnavailable(JoulemetreError):
    """No cumulative energy counter is exposed on this platform."""


class PermissionDenied(JoulemetreError):
    """An energy counter exists but cannot be read with current privileges."""


class DeviceUnavailable(JoulemetreError):
    """The GPU management interface is not reachable."""


class OutOfRange(JoulemetreError):
    """A value fell outside its documented domain (e.g. utilisation not in [0,1])."""


class ParseError(JoulemetreError):
    """A trace or record file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class NonMonotonicTimestamp(JoulemetreError):
    """Timestamps within one channel must strictly increase."""

    def __init__(self, channel: str, prev_ns: int, curr_ns: int):
        super().__init__(
            f"channel {channel}: timestamp {curr_ns} does not follow {prev_ns}"
        )
        self.channel = channel
        self.prev_ns = prev_ns
        self.curr_ns = curr_ns


class AllChannelsUnavailable(JoulemetreError):
    """Not a single power channel could be sampled."""


# --- energy core ---

class EmptyTrace(JoulemetreError):
    """Operation requires at least one sample."""


class OutOfSpan(JoulemetreError):
    """Queried timestamp lies outside the trace."""


class WorkloadDetected(JoulemetreError):
    """An idle measurement was requested while a supervised workload is active."""


class ChannelMismatch(JoulemetreError):
    """Baseline and trace share no channels."""


class MalformedMarkers(JoulemetreError):
    """Marker events are unbalanced or out of order."""


class DegenerateInput(JoulemetreError):
    """A fit was requested on input with no spread in x."""


# --- model registry ---

class UnsupportedLayer(JoulemetreError):
    """Layer kind has no complexity formula registered."""


class ZeroParameters(JoulemetreError):
    """MACs-per-parameter is undefined for a zero-parameter model."""


class SchemaError(JoulemetreError):
    """A JSON document does not match its documented schema."""


class InvariantViolation(JoulemetreError):
    """A parsed value violates a domain invariant; the message names the rule."""


# --- analysis ---

class DegenerateVariance(JoulemetreError):
    """Correlation is undefined when either input has zero variance."""


class InsufficientRuns(JoulemetreError):
    """Fewer runs available than the analysis requires."""


class DuplicateBatchSize(JoulemetreError):
    """A batch sweep contains the same batch size twice."""


# --- orchestrator ---

class WorkloadFailed(JoulemetreError):
    """Supervised command exited nonzero; trace retained, report omitted."""

    def __init__(self, message: str, exit_status: int | None = None):
        super().__init__(message)
        self.exit_status = exit_status


class MarkerPipeBroken(JoulemetreError):
    """The marker transport failed mid-run; the run is flagged degraded."""


class ConfigError(JoulemetreError):
    """Invalid or contradictory run configuration."""
