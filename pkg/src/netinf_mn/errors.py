"""Exception hierarchy shared by all protocol modules."""

from __future__ import annotations


class NetInfError(Exception):
    """Base class for every error raised by this package."""


class NotFoundError(NetInfError):
    pass


class UnknownNeighborError(NetInfError):
    """An attachment register names a neighbour the LCS has never seen."""

    def __init__(self, ar, neighbor):
        super().__init__(f"{ar} names unknown neighbour {neighbor}")
        self.ar = ar
        self.neighbor = neighbor


class AlreadyAttachedError(NetInfError):
    pass


class ForeignAddressError(NetInfError):
    pass


class NotAttachedError(NetInfError):
    pass


class BadTtlError(NetInfError):
    pass


class InvalidStateError(NetInfError):
    pass


class InvalidTransitionError(InvalidStateError):
    """A session was asked to take an edge outside its state machine."""


class SendQueueFullError(NetInfError):
    pass


class MtuExceededError(NetInfError):
    def __init__(self, needed: int, mtu: int):
        super().__init__(f"packet needs {needed} bytes, path MTU is {mtu}")
        self.needed = needed
        self.mtu = mtu


class MalformedPacketError(NetInfError):
    pass


class ProtocolError(NetInfError):
    """A state machine received input that only a broken scenario or simulator can produce."""


class SimulationAbort(NetInfError):
    """Raised out of the event loop; carries the event being processed."""

    def __init__(self, message: str, event=None):
        super().__init__(message if event is None else f"{message} (while handling {event})")
        self.event = event


class IncomparableReportsError(NetInfError):
    pass


class ReconciliationError(NetInfError):
    """End-of-run counters disagree across actors; indicates a fabric bug."""
