"""Live inline NTP filtering proxy.

Clients send their SNTP requests to the proxy, which forwards them
unchanged to one upstream server over a single socket. Upstream replies
are judged by :class:`~tempest.defense.ThresholdFilter` and forwarded
byte-for-byte on pass.

The proxy's clock is the filter's reference clock. By default that is the
host clock, which must be synchronized out-of-band.
"""

from __future__ import annotations

import asyncio
import logging
import time
from collections import Counter
from collections.abc import Callable
from dataclasses import dataclass, field
from fractions import Fraction

from .defense import FilterConfig, FilterDecision, Reference, ThresholdFilter, Verdict
from .ntp_codec import NTP_UNIX_DELTA, CodecError, Mode, decode

__all__ = ["ProxyRuntimeConfig", "ProxyDatapath", "NtpFilterProxy", "host_clock", "parse_endpoint", "serve"]

log = logging.getLogger(__name__)
decision_log = logging.getLogger("tempest.decisions")

Endpoint = tuple[str, int]


def host_clock() -> Fraction:
    """Host time as exact NTP-era seconds."""
    return Fraction(time.time_ns(), 10**9) + NTP_UNIX_DELTA


def parse_endpoint(text: str, default_port: int = 123) -> Endpoint:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host.strip("[]") or "0.0.0.0", int(port)


def _addr(endpoint) -> str:
    return f"{endpoint[0]}:{endpoint[1]}"


@dataclass(frozen=True)
class ProxyRuntimeConfig:
    upstream: Endpoint
    listen: Endpoint = ("0.0.0.0", 2100)
    threshold_s: float = 240.0
    log_path: str | None = None
    stats_interval_s: float = 60.0
    reference: Reference = Reference.REQUESTER

    def __post_init__(self) -> None:
        if tuple(self.listen) == tuple(self.upstream):
            raise ValueError("listen and upstream endpoints must differ")
        if not self.threshold_s > 0:
            raise ValueError("threshold_s must be positive")
        if not self.stats_interval_s > 0:
            raise ValueError("stats_interval_s must be positive")

    def filter_config(self) -> FilterConfig:
        return FilterConfig(threshold_s=self.threshold_s, proxy_port=self.listen[1], reference=self.reference)


@dataclass
class ProxyDatapath:
    """Socket-free packet handling. Reads the clock once per datagram."""

    engine: ThresholdFilter
    clock: Callable[[], Fraction] = host_clock
    on_decision: Callable[[FilterDecision], None] | None = None
    counters: Counter = field(default_factory=Counter)

    def __post_init__(self) -> None:
        self._clients: dict[str, Endpoint] = {}
        self._added_ns = 0

    def _emit(self, decision: FilterDecision) -> None:
        decision_log.info(decision.log_line())
        if self.on_decision is not None:
            self.on_decision(decision)

    def from_client(self, data: bytes, addr: Endpoint) -> bytes | None:
        """Returns the bytes to send upstream, or None to drop."""
        now = self.clock()
        client = _addr(addr)
        try:
            packet = decode(data)
        except CodecError:
            self.counters["decode_errors"] += 1
            self._emit(self.engine.decode_error(client))
            return None
        if packet.mode != Mode.CLIENT:
            self.counters["unsolicited_from_client"] += 1
            self._emit(self.engine.evaluate_unsolicited(packet, client))
            return None
        self._clients[client] = tuple(addr[:2])
        self.engine.note_request(packet, client, now)
        self.counters["requests_forwarded"] += 1
        return data

    def from_upstream(self, data: bytes) -> tuple[bytes, Endpoint] | None:
        """Returns ``(bytes, client endpoint)`` to forward, or None to drop."""
        start = time.perf_counter_ns()
        now = self.clock()
        try:
            packet = decode(data)
        except CodecError:
            self.counters["decode_errors"] += 1
            self._emit(self.engine.decode_error())
            return None
        decision = self.engine.evaluate_reply(packet, now)
        self._emit(decision)
        if decision.verdict is Verdict.DROP:
            self.counters[f"dropped_{decision.reason.value}"] += 1
            return None
        self.counters["replies_forwarded"] += 1
        self._added_ns += time.perf_counter_ns() - start
        return data, self._clients[decision.client_addr]

    def stats_line(self) -> str:
        forwarded = self.counters["replies_forwarded"]
        mean_us = self._added_ns / forwarded / 1000 if forwarded else 0.0
        fields = ",".join(f"{k}={v}" for k, v in sorted(self.counters.items()))
        return f"stats,{fields},mean_added_latency_us={mean_us:.1f}"


class _ClientSide(asyncio.DatagramProtocol):
    def __init__(self, proxy: NtpFilterProxy):
        self.proxy = proxy

    def datagram_received(self, data: bytes, addr) -> None:
        out = self.proxy.datapath.from_client(data, addr)
        if out is not None:
            self.proxy.upstream_transport.sendto(out)


class _UpstreamSide(asyncio.DatagramProtocol):
    def __init__(self, proxy: NtpFilterProxy):
        self.proxy = proxy

    def datagram_received(self, data: bytes, addr) -> None:
        out = self.proxy.datapath.from_upstream(data)
        if out is not None:
            self.proxy.client_transport.sendto(*out)

    def error_received(self, exc: Exception) -> None:
        log.warning("upstream socket error: %s", exc)


class NtpFilterProxy:
    """One listening socket for clients and one connected upstream socket."""

    def __init__(self, config: ProxyRuntimeConfig, clock: Callable[[], Fraction] = host_clock, on_decision=None):
        self.config = config
        self.datapath = ProxyDatapath(ThresholdFilter(config.filter_config()), clock, on_decision)
        self.client_transport: asyncio.DatagramTransport | None = None
        self.upstream_transport: asyncio.DatagramTransport | None = None

    @property
    def listen_address(self) -> Endpoint:
        return self.client_transport.get_extra_info("sockname")[:2]

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        self.client_transport, _ = await loop.create_datagram_endpoint(
            lambda: _ClientSide(self), local_addr=tuple(self.config.listen)
        )
        self.upstream_transport, _ = await loop.create_datagram_endpoint(
            lambda: _UpstreamSide(self), remote_addr=tuple(self.config.upstream)
        )
        log.info("proxy listening on %s, upstream %s", _addr(self.listen_address), _addr(self.config.upstream))

    def close(self) -> None:
        for transport in (self.client_transport, self.upstream_transport):
            if transport is not None:
                transport.close()
        decision_log.info(self.datapath.stats_line())

    async def serve_forever(self) -> None:
        await self.start()
        try:
            while True:
                await asyncio.sleep(self.config.stats_interval_s)
                decision_log.info(self.datapath.stats_line())
        finally:
            self.close()


def serve(config: ProxyRuntimeConfig) -> None:
    """Run until interrupted; counters are flushed on the way out."""
    if config.log_path:
        handler = logging.FileHandler(config.log_path)
        handler.setFormatter(logging.Formatter("%(message)s"))
        decision_log.addHandler(handler)
        decision_log.setLevel(logging.INFO)
        decision_log.propagate = False
    proxy = NtpFilterProxy(config)
    try:
        asyncio.run(proxy.serve_forever())
    except KeyboardInterrupt:
        pass
