"""SNTP client state machine modeled on the Windows time client.

The client polls on a fixed schedule, listens for a short window after
each request, and accepts a reply only if it echoes the request's transmit
timestamp. Broadcasts are ignored unless explicitly enabled. Accepted
samples are returned to the caller, which applies the correction with no
sanity clamp.
"""

from __future__ import annotations

import enum
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction

from .ntp_codec import Mode, NtpTimestamp, SntpPacket
from .timekeeping import SyncSample, as_fraction

__all__ = [
    "ServerRole",
    "SyncPolicy",
    "PendingRequest",
    "RejectReason",
    "Accept",
    "Reject",
    "Ignored",
    "SntpClient",
    "stamp",
]


class ServerRole(str, enum.Enum):
    DOMAIN_CONTROLLER = "domain_controller"
    DNS_SERVER = "dns_server"
    EXTERNAL_SERVER = "external_server"


class RejectReason(str, enum.Enum):
    WINDOW_CLOSED = "window_closed"
    ORIGINATE_MISMATCH = "originate_mismatch"
    BAD_MODE = "bad_mode"
    NO_PENDING = "no_pending"


def stamp(reading) -> NtpTimestamp:
    """Timestamp a clock reading given in NTP-era seconds."""
    return NtpTimestamp.from_seconds(as_fraction(reading))


@dataclass(frozen=True)
class SyncPolicy:
    """Polling and acceptance rules.

    ``servers`` maps each :class:`ServerRole` to the node that plays it;
    roles without a node are skipped when choosing a destination.
    ``signed`` is recorded but has no effect: the observed traffic carried
    no MACs.
    """

    poll_interval_s: float = 604_800.0
    listen_window_s: float = 5.0
    require_originate_match: bool = True
    originate_match_ms: bool = False
    accept_broadcast: bool = False
    server_preference: tuple[ServerRole, ...] = (
        ServerRole.DOMAIN_CONTROLLER,
        ServerRole.DNS_SERVER,
        ServerRole.EXTERNAL_SERVER,
    )
    servers: Mapping[ServerRole, str] = field(default_factory=dict)
    first_poll_s: float | None = None
    signed: bool = False

    def __post_init__(self) -> None:
        if not self.poll_interval_s > self.listen_window_s > 0:
            raise ValueError("need poll_interval_s > listen_window_s > 0")
        object.__setattr__(self, "server_preference", tuple(ServerRole(r) for r in self.server_preference))
        object.__setattr__(self, "servers", {ServerRole(k): v for k, v in dict(self.servers).items()})

    @property
    def duty_cycle(self) -> float:
        """Fraction of time the client is willing to accept a reply."""
        return self.listen_window_s / self.poll_interval_s


@dataclass(frozen=True)
class PendingRequest:
    transmit_ts: NtpTimestamp
    sent_at_true_time: Fraction
    destination: str | None
    expires_at_true_time: Fraction

    @property
    def sent_at_client_time(self) -> Fraction:
        # What actually went on the wire, so t1 matches the echoed originate.
        return self.transmit_ts.to_seconds()


@dataclass(frozen=True)
class Accept:
    sample: SyncSample

    @property
    def offset_s(self) -> Fraction:
        return self.sample.offset_s


@dataclass(frozen=True)
class Reject:
    reason: RejectReason


@dataclass(frozen=True)
class Ignored:
    reason: str = "broadcast_disabled"


def _ms(ts: NtpTimestamp) -> int:
    return (ts.raw * 1000) >> 32


class SntpClient:
    """One node's SNTP client. Holds at most one outstanding request."""

    def __init__(self, policy: SyncPolicy | None = None, version: int = 3):
        self.policy = policy or SyncPolicy()
        self.version = version
        self.pending: PendingRequest | None = None

    def choose_destination(self, reachable: Callable[[str], bool] = lambda node: True) -> str | None:
        """First reachable server in preference order.

        If no server is reachable, the most preferred configured one is
        returned anyway so the request still goes out (and times out).
        """
        configured = [self.policy.servers[r] for r in self.policy.server_preference if r in self.policy.servers]
        for node in configured:
            if reachable(node):
                return node
        return configured[0] if configured else None

    def begin_poll(
        self,
        client_clock_now,
        true_now=0,
        reachable: Callable[[str], bool] = lambda node: True,
    ) -> tuple[SntpPacket, PendingRequest]:
        true_now = as_fraction(true_now)
        if self.pending is not None:
            if true_now <= self.pending.expires_at_true_time:
                raise RuntimeError("a request is already outstanding")
            self.pending = None
        transmit = stamp(client_clock_now)
        request = SntpPacket(version=self.version, mode=Mode.CLIENT, transmit_ts=transmit)
        self.pending = PendingRequest(
            transmit_ts=transmit,
            sent_at_true_time=true_now,
            destination=self.choose_destination(reachable),
            expires_at_true_time=true_now + as_fraction(self.policy.listen_window_s),
        )
        return request, self.pending

    def _originate_matches(self, echoed: NtpTimestamp, sent: NtpTimestamp) -> bool:
        if not self.policy.require_originate_match:
            return True
        if self.policy.originate_match_ms:
            return _ms(echoed) == _ms(sent)
        return echoed == sent

    def handle_reply(self, reply: SntpPacket, arrival_client_time, arrival_true_time) -> Accept | Reject:
        pending = self.pending
        if pending is None:
            return Reject(RejectReason.NO_PENDING)
        if reply.mode != Mode.SERVER:
            return Reject(RejectReason.BAD_MODE)
        if as_fraction(arrival_true_time) > pending.expires_at_true_time:
            self.pending = None
            return Reject(RejectReason.WINDOW_CLOSED)
        if not self._originate_matches(reply.originate_ts, pending.transmit_ts):
            return Reject(RejectReason.ORIGINATE_MISMATCH)
        self.pending = None
        sample = SyncSample.from_times(
            pending.sent_at_client_time,
            reply.receive_ts.to_seconds(),
            reply.transmit_ts.to_seconds(),
            stamp(arrival_client_time).to_seconds(),
        )
        return Accept(sample)

    def on_broadcast(self, packet: SntpPacket, arrival_client_time) -> Accept | Ignored:
        if packet.mode != Mode.BROADCAST:
            return Ignored("not_broadcast")
        if not self.policy.accept_broadcast:
            return Ignored()
        t4 = stamp(arrival_client_time).to_seconds()
        t3 = packet.transmit_ts.to_seconds()
        # No delay estimate in broadcast mode: offset is just server minus local.
        return Accept(SyncSample.from_times(t4, t3, t3, t4))
