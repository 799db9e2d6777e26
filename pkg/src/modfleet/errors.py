"""Exception types shared across the toolkit."""


class ModfleetError(Exception):
    """Base class for all toolkit errors."""


class DegenerateStation(ModfleetError):
    """A station has zero effective rate in one of the two systems."""

    def __init__(self, system, stations, msg=None):
        self.system = system
        self.stations = list(stations)
        super().__init__(msg or f"system {system} degenerate at stations {self.stations}")


class InfeasibleSplit(ModfleetError):
    """Delegation rates exceed the underlying customer demand."""


class BadTopology(ModfleetError):
    """Routing uses an arc with no valid travel time."""


class SingularChain(ModfleetError):
    """The station routing chain is reducible; relative throughputs are not unique."""


class ZeroRate(ModfleetError):
    """A single-server node with positive throughput has zero service rate."""


class StateSpaceTooLarge(ModfleetError):
    """CTMC enumeration would exceed the configured state cap."""

    def __init__(self, n_states, cap):
        self.n_states = n_states
        self.cap = cap
        super().__init__(f"{n_states} states exceeds cap {cap}")


class Infeasible(ModfleetError):
    """No feasible flow exists; carries a violated cut certificate."""

    def __init__(self, msg, cut=None):
        self.cut = cut
        super().__init__(msg)


class NotReachedWithinBounds(ModfleetError):
    """Availability threshold unmet within the fleet search bound."""


class NoProgress(ModfleetError):
    """Nonlinear solve stalled above tolerance; best iterate attached."""

    def __init__(self, msg, best=None):
        self.best = best
        super().__init__(msg)


class InfeasibleStart(ModfleetError):
    """Initial point for the nonlinear solve violates its bounds."""


class IoError(ModfleetError):
    """Input file missing or unreadable."""


class EmptyWindow(ModfleetError):
    """No trip records fall inside the requested time window."""


class TooFewPoints(ModfleetError):
    """Fewer distinct pickup points than requested clusters."""


class DisconnectedDemand(ModfleetError):
    """Estimated routing chain is reducible even after smoothing."""


class UsageError(ModfleetError):
    """Bad command-line arguments."""
