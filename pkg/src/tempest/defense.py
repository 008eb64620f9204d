"""Offset+delay threshold filter for NTP traffic.

The filter sits inline, remembers each client request it forwards and
judges the matching server reply. A reply is dropped when
``|offset| + max(delay, 0)`` is strictly more than the threshold.
Unsolicited time packets (broadcasts, replies with no outstanding request)
are dropped; client requests always pass.

Delay is always measured at the filter: the time between seeing the request
and seeing the reply, minus the server's hold time. Offset needs a
reference clock, selected by :class:`Reference`:

``REQUESTER`` (default)
    Offset relative to the requesting client's clock, as echoed in the
    request. This is the correction the client would apply, so every
    accepted step is bounded by the threshold. It is also why a patient
    attacker can walk a clock away in sub-threshold steps.
``FILTER``
    Offset relative to the filter's own clock, which must be trusted and
    synchronized out-of-band. Catches cumulative drift, but also flags
    legitimate corrections of a client that is already far off.

The exchange table is guarded by a lock so the live proxy may call in from
several threads.
"""

from __future__ import annotations

import enum
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction

from .ntp_codec import Mode, SntpPacket
from .timekeeping import as_fraction, compute_offset_delay

__all__ = [
    "Verdict",
    "FilterMode",
    "Reference",
    "Reason",
    "FilterConfig",
    "FilterDecision",
    "ExchangeRecord",
    "ExchangeTable",
    "ThresholdFilter",
    "LOG_FIELDS",
]

LOG_FIELDS = ("verdict", "client_addr", "offset_s", "delay_s", "combined_s", "threshold_s", "reason")


class Verdict(str, enum.Enum):
    PASS = "pass"
    DROP = "drop"


class FilterMode(str, enum.Enum):
    INLINE = "inline"
    MIRROR = "mirror"  # decide and log, never drop


class Reference(str, enum.Enum):
    REQUESTER = "requester"
    FILTER = "filter"


class Reason(str, enum.Enum):
    CLIENT_REQUEST = "client_request"
    WITHIN_THRESHOLD = "within_threshold"
    OVER_THRESHOLD = "over_threshold"
    NO_EXCHANGE = "no_exchange"
    UNSOLICITED = "unsolicited"
    DECODE_ERROR = "decode_error"


@dataclass(frozen=True)
class FilterConfig:
    threshold_s: float = 240.0
    proxy_port: int = 2100
    mode: FilterMode = FilterMode.INLINE
    exchange_ttl_s: float = 16.0
    reference: Reference = Reference.REQUESTER

    def __post_init__(self) -> None:
        if not self.threshold_s > 0:
            raise ValueError("threshold_s must be positive")
        if not self.exchange_ttl_s > 0:
            raise ValueError("exchange_ttl_s must be positive")
        object.__setattr__(self, "mode", FilterMode(self.mode))
        object.__setattr__(self, "reference", Reference(self.reference))

    @property
    def enforcing(self) -> bool:
        return self.mode is FilterMode.INLINE


def _fmt(value) -> str:
    return "" if value is None else f"{float(value):.9f}"


@dataclass(frozen=True)
class FilterDecision:
    verdict: Verdict
    reason: Reason
    threshold_s: Fraction
    offset_s: Fraction | None = None
    delay_s: Fraction | None = None
    combined_s: Fraction | None = None
    client_addr: str | None = None

    @property
    def dropped(self) -> bool:
        return self.verdict is Verdict.DROP

    def log_line(self) -> str:
        """``verdict,client_addr,offset_s,delay_s,combined_s,threshold_s,reason``"""
        return ",".join(
            (
                self.verdict.value,
                self.client_addr or "",
                _fmt(self.offset_s),
                _fmt(self.delay_s),
                _fmt(self.combined_s),
                _fmt(self.threshold_s),
                self.reason.value,
            )
        )

    @staticmethod
    def parse_log_line(line: str) -> dict:
        values = line.rstrip("\n").split(",")
        if len(values) != len(LOG_FIELDS):
            raise ValueError(f"expected {len(LOG_FIELDS)} fields, got {len(values)}")
        row = dict(zip(LOG_FIELDS, values))
        for key in ("offset_s", "delay_s", "combined_s", "threshold_s"):
            row[key] = float(row[key]) if row[key] else math.nan
        return row


@dataclass
class ExchangeRecord:
    key: tuple[str, int]  # (client address, raw request transmit stamp)
    t1_filter: Fraction
    created_at: Fraction
    ttl_s: Fraction = Fraction(16)

    @property
    def request_ts(self) -> Fraction:
        return Fraction(self.key[1], 1 << 32)

    def expired(self, now: Fraction) -> bool:
        return now - self.created_at > self.ttl_s


class ExchangeTable:
    """Outstanding exchanges, oldest first."""

    def __init__(self, ttl_s=16):
        self.ttl_s = as_fraction(ttl_s)
        self._records: OrderedDict[tuple[str, int], ExchangeRecord] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    def _purge(self, now: Fraction) -> None:
        while self._records:
            oldest = next(iter(self._records.values()))
            if not oldest.expired(now):
                break
            self._records.popitem(last=False)

    def upsert(self, client_addr: str, transmit_raw: int, now: Fraction) -> ExchangeRecord:
        key = (client_addr, transmit_raw)
        with self._lock:
            self._purge(now)
            self._records.pop(key, None)
            record = ExchangeRecord(key, t1_filter=now, created_at=now, ttl_s=self.ttl_s)
            self._records[key] = record
            return record

    def find(self, originate_raw: int, now: Fraction, client_addr: str | None = None) -> ExchangeRecord | None:
        with self._lock:
            self._purge(now)
            if client_addr is not None:
                return self._records.get((client_addr, originate_raw))
            for record in self._records.values():
                if record.key[1] == originate_raw:
                    return record
            return None

    def discard(self, record: ExchangeRecord) -> None:
        with self._lock:
            if self._records.get(record.key) is record:
                del self._records[record.key]


@dataclass
class ThresholdFilter:
    """Stateful filter engine shared by the simulator and the UDP proxy."""

    config: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self) -> None:
        self.table = ExchangeTable(self.config.exchange_ttl_s)
        self._threshold = as_fraction(self.config.threshold_s)

    def _decision(self, verdict, reason, **kw) -> FilterDecision:
        return FilterDecision(verdict, reason, self._threshold, **kw)

    def note_request(self, request: SntpPacket, client_addr: str, filter_clock_now) -> FilterDecision:
        """Remember a client request. Requests are never dropped."""
        if request.mode != Mode.CLIENT:
            return self.evaluate_unsolicited(request, client_addr)
        self.table.upsert(client_addr, request.transmit_ts.raw, as_fraction(filter_clock_now))
        return self._decision(Verdict.PASS, Reason.CLIENT_REQUEST, client_addr=client_addr)

    def evaluate_reply(self, reply: SntpPacket, filter_clock_now, client_addr: str | None = None) -> FilterDecision:
        """Judge a server reply against its recorded request.

        A passing reply consumes its exchange; a dropped one leaves it open
        so the genuine reply can still get through.
        """
        if reply.mode != Mode.SERVER:
            return self.evaluate_unsolicited(reply, client_addr)
        now = as_fraction(filter_clock_now)
        record = self.table.find(reply.originate_ts.raw, now, client_addr)
        if record is None:
            return self._decision(Verdict.DROP, Reason.NO_EXCHANGE, client_addr=client_addr)
        if self.config.reference is Reference.REQUESTER:
            t1 = record.request_ts
            t4 = t1 + (now - record.t1_filter)
        else:
            t1, t4 = record.t1_filter, now
        offset, delay = compute_offset_delay(t1, reply.receive_ts.to_seconds(), reply.transmit_ts.to_seconds(), t4)
        combined = abs(offset) + max(delay, Fraction(0))
        over = combined > self._threshold
        decision = self._decision(
            Verdict.DROP if over else Verdict.PASS,
            Reason.OVER_THRESHOLD if over else Reason.WITHIN_THRESHOLD,
            offset_s=offset,
            delay_s=delay,
            combined_s=combined,
            client_addr=record.key[0],
        )
        if not over:
            self.table.discard(record)
        return decision

    def evaluate_unsolicited(self, packet: SntpPacket, client_addr: str | None = None) -> FilterDecision:
        if packet.mode == Mode.CLIENT:
            return self._decision(Verdict.PASS, Reason.CLIENT_REQUEST, client_addr=client_addr)
        if packet.mode == Mode.SERVER:
            return self._decision(Verdict.DROP, Reason.NO_EXCHANGE, client_addr=client_addr)
        return self._decision(Verdict.DROP, Reason.UNSOLICITED, client_addr=client_addr)

    def decode_error(self, client_addr: str | None = None) -> FilterDecision:
        return self._decision(Verdict.DROP, Reason.DECODE_ERROR, client_addr=client_addr)
