"""Exception types shared across the package."""


class ClockSyncError(Exception):
    """Base class for all package errors."""


class ConfigError(ClockSyncError):
    """Invalid or inconsistent configuration; message names the offending field."""


class DisconnectedGraph(ClockSyncError):
    """Coupling graph is not connected."""


class InvalidEdge(ClockSyncError):
    """Self-edge or out-of-range node index in an edge list."""


class DimensionMismatch(ClockSyncError):
    """Vector or matrix shape does not match the agent count."""


class MissingNeighborSample(ClockSyncError):
    """Controller evaluated before a neighbor reference value was available."""


class DisturbanceOutOfBound(ClockSyncError):
    """A disturbance realization exceeds the per-agent bound."""


class NotExpired(ClockSyncError):
    """Timer-expiry handler called while the timer is still positive."""


class NotInJumpSet(ClockSyncError):
    """Jump applied for an agent whose timer has not reached zero."""


class TauOutOfRange(ClockSyncError):
    """Timer vector outside the box [0, T2] expected by the certificate."""


class NotFeasible(ClockSyncError):
    """Envelope constants requested from an infeasible certificate report."""


class CertificateMismatch(ClockSyncError):
    """Certificate dimensions do not match the trajectory being monitored."""


class InsufficientTransient(ClockSyncError):
    """Too few samples above the fitting threshold to estimate a decay rate."""


class ZenoGuard(ClockSyncError):
    """Tripwire: implausibly many jumps at a single continuous time."""


class NumericalBlowup(ClockSyncError):
    """A simulated state component left the plausible numeric range."""
