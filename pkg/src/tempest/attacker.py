"""Attack strategies against SNTP clients.

Each strategy is a small frozen dataclass. The simulator calls the
generators below at the right moments and takes care of addressing and
delivery.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

from .ntp_codec import Mode, NtpTimestamp, SntpPacket
from .sync_client import ServerRole, stamp
from .timekeeping import as_fraction

__all__ = [
    "BroadcastFlood",
    "SpoofedReply",
    "SlowDrift",
    "DnsRedirect",
    "AttackSpec",
    "RouteOverride",
    "on_observe",
    "flood_tick",
    "redirect",
    "attack_from_dict",
]

_REF_ID = b"LOCL"


def _positive(name: str, value) -> None:
    if value is not None and value < 0:
        raise ValueError(f"{name} must be non-negative, got {value}")


@dataclass(frozen=True)
class BroadcastFlood:
    """Blind flood of unsolicited time packets.

    With ``packet_mode="server"`` the packets are server replies carrying a
    guessed originate timestamp (right second, random fraction) instead of
    broadcasts.
    """

    packets_per_second: float = 1000.0
    claimed_offset_s: float = 240.0
    packet_mode: str = "broadcast"
    tick_s: float = 1.0
    start_s: float = 0.0
    end_s: float | None = None

    def __post_init__(self) -> None:
        _positive("packets_per_second", self.packets_per_second)
        if self.tick_s <= 0:
            raise ValueError("tick_s must be positive")
        if self.packet_mode not in ("broadcast", "server"):
            raise ValueError("packet_mode must be 'broadcast' or 'server'")


@dataclass(frozen=True)
class SpoofedReply:
    """On-path forger answering the target's requests.

    ``assumed_rtt_s`` is the attacker's estimate of the target's round trip
    to it; when accurate the target computes exactly ``per_reply_offset_s``.
    ``implied_delay_s`` is the server hold time written between receive and
    transmit stamps.
    """

    target: str
    per_reply_offset_s: float = 240.0
    observes_requests: bool = True
    spoof_source: bool = True
    assumed_rtt_s: float = 0.0
    implied_delay_s: float = 0.0

    def __post_init__(self) -> None:
        _positive("assumed_rtt_s", self.assumed_rtt_s)
        _positive("implied_delay_s", self.implied_delay_s)

    @property
    def offset_s(self) -> float:
        return self.per_reply_offset_s


@dataclass(frozen=True)
class SlowDrift:
    """Spoofed replies that stay under a filter threshold each poll."""

    target: str
    per_interval_offset_s: float = 30.0
    observes_requests: bool = True
    spoof_source: bool = True
    assumed_rtt_s: float = 0.0
    implied_delay_s: float = 0.0

    def __post_init__(self) -> None:
        _positive("per_interval_offset_s", self.per_interval_offset_s)
        _positive("assumed_rtt_s", self.assumed_rtt_s)
        _positive("implied_delay_s", self.implied_delay_s)

    @property
    def offset_s(self) -> float:
        return self.per_interval_offset_s


@dataclass(frozen=True)
class DnsRedirect:
    """Resolve the victim's external time server to ``attacker_server``."""

    victim: str
    attacker_server: str
    start_s: float = 0.0
    end_s: float | None = None


AttackSpec = Union[BroadcastFlood, SpoofedReply, SlowDrift, DnsRedirect]

_VARIANTS = {
    "broadcast_flood": BroadcastFlood,
    "spoofed_reply": SpoofedReply,
    "slow_drift": SlowDrift,
    "dns_redirect": DnsRedirect,
}


def attack_from_dict(data: dict) -> AttackSpec:
    """Build a spec from ``{"variant": name, **params}``."""
    params = dict(data)
    variant = params.pop("variant", None)
    try:
        cls = _VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown attack variant {variant!r}; expected one of {sorted(_VARIANTS)}") from None
    return cls(**params)


def on_observe(attack: AttackSpec, observed: SntpPacket, true_time=None) -> list[SntpPacket]:
    """Forge replies to a sniffed client request.

    The forged reply echoes the request's transmit stamp as its originate
    stamp, so it passes the victim's originate check by construction.
    """
    if not isinstance(attack, (SpoofedReply, SlowDrift)) or not attack.observes_requests:
        return []
    if observed.mode != Mode.CLIENT:
        return []
    t1 = observed.transmit_ts.to_seconds()
    rtt = as_fraction(attack.assumed_rtt_s)
    hold = as_fraction(attack.implied_delay_s)
    # offset = t2 - t1 + (hold - rtt)/2 once the victim folds in its t4
    t2 = t1 + as_fraction(attack.offset_s) + (rtt - hold) / 2
    receive = stamp(t2)
    return [
        SntpPacket(
            version=observed.version,
            mode=Mode.SERVER,
            stratum=2,
            poll_exponent=observed.poll_exponent,
            precision_exponent=-20,
            reference_id=_REF_ID,
            reference_ts=NtpTimestamp(receive.seconds, 0),
            originate_ts=observed.transmit_ts,
            receive_ts=receive,
            transmit_ts=stamp(t2 + hold),
        )
    ]


def flood_tick(
    attack: BroadcastFlood,
    clock_now,
    tick_s: float | None = None,
    rng: np.random.Generator | None = None,
) -> list[SntpPacket]:
    """Packets emitted during one tick: ``floor(rate * tick)`` of them.

    ``clock_now`` is the attacker's idea of the current NTP-era time; each
    packet claims ``clock_now + claimed_offset_s`` and carries a random
    originate guess.
    """
    tick = attack.tick_s if tick_s is None else tick_s
    count = int(Fraction(repr(float(attack.packets_per_second))) * as_fraction(tick))
    if count <= 0:
        return []
    rng = rng if rng is not None else np.random.default_rng()
    now = as_fraction(clock_now)
    claimed = stamp(now + as_fraction(attack.claimed_offset_s))
    guess_seconds = int(now)
    fractions = rng.integers(0, 1 << 32, size=count, dtype=np.uint64)
    mode = Mode.BROADCAST if attack.packet_mode == "broadcast" else Mode.SERVER
    return [
        SntpPacket(
            version=4,
            mode=mode,
            stratum=1,
            reference_id=_REF_ID,
            originate_ts=NtpTimestamp(guess_seconds, int(f)),
            receive_ts=claimed,
            transmit_ts=claimed,
        )
        for f in fractions
    ]


@dataclass(frozen=True)
class RouteOverride:
    """While active, ``victim``'s traffic for ``role`` goes to ``to_node``."""

    victim: str
    role: ServerRole
    to_node: str
    start_s: float = 0.0
    end_s: float | None = None

    def active(self, true_time) -> bool:
        t = as_fraction(true_time)
        if t < as_fraction(self.start_s):
            return False
        return self.end_s is None or t < as_fraction(self.end_s)


def redirect(attack: DnsRedirect) -> RouteOverride:
    if not isinstance(attack, DnsRedirect):
        raise TypeError("redirect() needs a DnsRedirect attack")
    return RouteOverride(
        victim=attack.victim,
        role=ServerRole.EXTERNAL_SERVER,
        to_node=attack.attacker_server,
        start_s=attack.start_s,
        end_s=attack.end_s,
    )
