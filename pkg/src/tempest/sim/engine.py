"""Deterministic discrete-event simulator.

Events run in ``(time, insertion order)`` order on an integer microsecond
grid. Every random draw comes from a generator derived from the scenario
seed and the name of the component drawing, so adding a node does not
perturb the draws of the others.

Packets travel between nodes as encoded bytes and are decoded on arrival.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..attacker import BroadcastFlood, DnsRedirect, RouteOverride, SlowDrift, SpoofedReply, flood_tick, on_observe, redirect
from ..defense import ThresholdFilter, Verdict
from ..irm_model import IrmError, KerberosResult, RmsClient, kerberos_gate
from ..ntp_codec import NTP_UNIX_DELTA, CodecError, Mode, NtpTimestamp, SntpPacket, decode, encode
from ..sync_client import Accept, Reject, ServerRole, SntpClient, stamp
from ..timekeeping import SimClock
from .report import MetricsReport
from .scenario import SERVING_ROLES, LinkSpec, NodeSpec, Role, ScenarioConfig

__all__ = ["Simulator", "run"]

log = logging.getLogger(__name__)

US = 1_000_000
LEGIT = "legit"
ATTACK = "attack"


def _t(us: int) -> Fraction:
    return Fraction(us, US)


def _us(seconds) -> int:
    return round(Fraction(seconds) * US)


@dataclass
class _Node:
    spec: NodeSpec
    clock: SimClock
    client: SntpClient | None = None
    rms: RmsClient | None = None
    crash_time: Fraction | None = None
    updates: list[dict] = field(default_factory=list)
    kerberos_first_failure: Fraction | None = None

    @property
    def id(self) -> str:
        return self.spec.id


class Simulator:
    """One run of one scenario. Not reusable; build a new one per run."""

    def __init__(self, scenario: ScenarioConfig, seed: int | None = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.epoch = scenario.epoch_unix + NTP_UNIX_DELTA
        self.end_us = _us(scenario.duration_s)
        self.now_us = 0
        self._queue: list = []
        self._seq = itertools.count()
        self.event_count = 0

        policies = {d.doc_id: d for d in scenario.documents}
        self.nodes: dict[str, _Node] = {}
        for spec in scenario.nodes:
            node = _Node(spec, spec.clock)
            if spec.sync is not None:
                node.client = SntpClient(spec.sync)
            if spec.irm is not None:
                node.rms = RmsClient(
                    policies,
                    principal=spec.irm.principal,
                    crash_threshold_s=spec.irm.crash_threshold_s,
                    installed_at=spec.clock.read(0),
                )
            self.nodes[spec.id] = node

        self.links: dict[tuple[str, str], LinkSpec] = {}
        for link in scenario.links:
            self.links[(link.src, link.dst)] = link
            if link.bidirectional:
                self.links[(link.dst, link.src)] = link

        filter_nodes = [n for n in scenario.nodes if n.role is Role.FILTER]
        self.filter_node = self.nodes[filter_nodes[0].id] if filter_nodes else None
        self.filter = ThresholdFilter(filter_nodes[0].filter) if filter_nodes else None

        self.observers: dict[str, list[_Node]] = defaultdict(list)
        self.overrides: list[RouteOverride] = []
        self.redirect_servers: set[str] = set()
        for node in self.nodes.values():
            attack = node.spec.attack
            if isinstance(attack, (SpoofedReply, SlowDrift)):
                self.observers[attack.target].append(node)
            elif isinstance(attack, DnsRedirect):
                self.overrides.append(redirect(attack))
                self.redirect_servers.add(attack.attacker_server)

        self._rngs: dict[str, np.random.Generator] = {}

        self.counts: Counter = Counter()
        self.by_origin: dict[str, Counter] = {LEGIT: Counter(), ATTACK: Counter()}
        self.rejected: Counter = Counter()
        self.filter_drops: Counter = Counter()
        self.filter_stats = {"passes": 0, "max_pass_combined_s": None, "min_drop_combined_s": None}
        self.kerberos_failures: list[dict] = []
        self.access: list[dict] = []
        self.irm_log: list[dict] = []
        self.timeline: list[dict] = []

    # -- plumbing -------------------------------------------------------

    def rng(self, name: str) -> np.random.Generator:
        gen = self._rngs.get(name)
        if gen is None:
            gen = np.random.default_rng([self.seed & (2**64 - 1), zlib.crc32(name.encode())])
            self._rngs[name] = gen
        return gen

    def schedule(self, at_us: int, handler, *args) -> None:
        if at_us < self.now_us:
            raise RuntimeError(f"causality violation: {at_us} < {self.now_us}")
        heapq.heappush(self._queue, (at_us, next(self._seq), handler, args))

    def true_now(self) -> Fraction:
        return _t(self.now_us)

    def reading(self, node: _Node) -> Fraction:
        return node.clock.read(self.true_now())

    def ntp_now(self, node: _Node) -> Fraction:
        return self.reading(node) + self.epoch

    def _count(self, key: str, origin: str, n: int = 1) -> None:
        self.counts[key] += n
        self.by_origin[origin][key] += n

    # -- transport --------------------------------------------------------

    def _latency_us(self, link: LinkSpec, src: str, dst: str) -> int:
        lat = link.latency
        if lat.min_us == lat.max_us:
            return lat.min_us
        return int(self.rng(f"link:{src}->{dst}").integers(lat.min_us, lat.max_us + 1))

    def _filter_on(self, link: LinkSpec) -> bool:
        return link.via_filter and self.filter is not None

    def send(self, src: str, dst: str, data: bytes, origin: str = LEGIT) -> None:
        self._count("packets_sent", origin)
        link = self.links.get((src, dst))
        if link is None:
            self._count("lost_by_link", origin)
            self.counts["lost_no_route"] += 1
            return
        if link.loss_rate and self.rng(f"loss:{src}->{dst}").random() < link.loss_rate:
            self._count("lost_by_link", origin)
            return
        if self._filter_on(link) and link.filter_at == src:
            if not self._filter_pass(data, src, dst, origin):
                return
        self.schedule(self.now_us + self._latency_us(link, src, dst), self._deliver, src, dst, data, origin)
        if origin == LEGIT:
            for attacker in self.observers.get(src, ()):
                tap = self.links.get((src, attacker.id))
                if tap is not None:
                    delay = self._latency_us(tap, src, attacker.id)
                    self.schedule(self.now_us + delay, self._observe, attacker, data)

    def _filter_pass(self, data: bytes, src: str, dst: str, origin: str) -> bool:
        flt = self.filter
        now = self.ntp_now(self.filter_node)
        try:
            packet = decode(data)
        except CodecError:
            decision = flt.decode_error(src)
        else:
            if packet.mode == Mode.CLIENT:
                decision = flt.note_request(packet, src, now)
            elif packet.mode == Mode.SERVER:
                decision = flt.evaluate_reply(packet, now, client_addr=dst)
            else:
                decision = flt.evaluate_unsolicited(packet, dst)
        if decision.verdict is Verdict.PASS:
            if packet.mode == Mode.SERVER:
                self.filter_stats["passes"] += 1
                best = self.filter_stats["max_pass_combined_s"]
                if best is None or decision.combined_s > best:
                    self.filter_stats["max_pass_combined_s"] = decision.combined_s
            return True
        self.filter_drops[decision.reason.value] += 1
        if decision.combined_s is not None:
            worst = self.filter_stats["min_drop_combined_s"]
            if worst is None or decision.combined_s < worst:
                self.filter_stats["min_drop_combined_s"] = decision.combined_s
        if not self.filter.config.enforcing:
            return True
        self._count("dropped_by_filter", origin)
        return False

    def _deliver(self, src: str, dst: str, data: bytes, origin: str) -> None:
        link = self.links[(src, dst)]
        if self._filter_on(link) and link.filter_at == dst:
            if not self._filter_pass(data, src, dst, origin):
                return
        node = self.nodes[dst]
        if not node.spec.is_up(self.true_now()):
            self._count("lost_by_link", origin)
            self.counts["lost_node_down"] += 1
            return
        self._count("delivered", origin)
        try:
            packet = decode(data)
        except CodecError:
            self.counts["decode_errors"] += 1
            return
        if packet.mode == Mode.CLIENT:
            if node.spec.role in SERVING_ROLES:
                self._serve(node, src, packet)
        elif packet.mode == Mode.SERVER:
            if node.client is not None:
                self._on_reply(node, packet, origin)
        elif node.client is not None:
            self._on_broadcast(node, packet, origin)

    # -- node behavior ----------------------------------------------------

    def _route(self, node: _Node, dest: str) -> str:
        external = node.client.policy.servers.get(ServerRole.EXTERNAL_SERVER)
        if dest == external:
            for override in self.overrides:
                if override.victim == node.id and override.active(self.true_now()):
                    return override.to_node
        return dest

    def _reachable(self, node: _Node):
        def check(dest: str) -> bool:
            target = self.nodes[dest]
            return (node.id, dest) in self.links and target.spec.is_up(self.true_now())

        return check

    def _poll(self, node: _Node) -> None:
        policy = node.client.policy
        self.schedule(self.now_us + _us(policy.poll_interval_s), self._poll, node)
        if not node.spec.is_up(self.true_now()):
            return
        request, pending = node.client.begin_poll(self.ntp_now(node), self.true_now(), self._reachable(node))
        if pending.destination is None:
            return
        self.counts["polls"] += 1
        self.send(node.id, self._route(node, pending.destination), encode(request))

    def _serve(self, node: _Node, requester: str, request: SntpPacket) -> None:
        now = stamp(self.ntp_now(node))
        stratum = 1 if node.spec.role is Role.EXTERNAL_SERVER else 2
        reply = SntpPacket(
            version=request.version,
            mode=Mode.SERVER,
            stratum=stratum,
            poll_exponent=request.poll_exponent,
            precision_exponent=-20,
            reference_id=b"GPS\x00" if stratum == 1 else b"\x7f\x00\x00\x01",
            reference_ts=NtpTimestamp(now.seconds, 0),
            originate_ts=request.transmit_ts,
            receive_ts=now,
            transmit_ts=now,
        )
        origin = ATTACK if node.id in self.redirect_servers else LEGIT
        self.send(node.id, requester, encode(reply), origin)

    def _on_reply(self, node: _Node, reply: SntpPacket, origin: str) -> None:
        self._count("replies_delivered", origin)
        result = node.client.handle_reply(reply, self.ntp_now(node), self.true_now())
        if isinstance(result, Reject):
            self.rejected[result.reason.value] += 1
            self.by_origin[origin]["rejected"] += 1
            return
        self._count("accepted", origin)
        self._apply(node, result, origin, "reply")

    def _on_broadcast(self, node: _Node, packet: SntpPacket, origin: str) -> None:
        result = node.client.on_broadcast(packet, self.ntp_now(node))
        if isinstance(result, Accept):
            self._count("broadcast_accepted", origin)
            self._apply(node, result, origin, "broadcast")
        else:
            self._count("broadcast_ignored", origin)

    def _apply(self, node: _Node, accepted: Accept, origin: str, via: str) -> None:
        old = self.reading(node)
        node.clock = node.clock.apply_correction(accepted.offset_s, self.true_now())
        node.updates.append(
            {
                "t": self.true_now(),
                "offset_s": accepted.offset_s,
                "delay_s": accepted.sample.delay_s,
                "origin": origin,
                "via": via,
            }
        )
        self._clock_changed(node, old)

    def _clock_changed(self, node: _Node, old: Fraction) -> None:
        new = self.reading(node)
        if node.rms is not None and new != old:
            was_crashed = node.rms.crashed
            node.rms.observe_time_change(old, new)
            if node.rms.crashed and not was_crashed:
                node.crash_time = self.true_now()
                log.debug("t=%s %s crashed (jump %s)", float(self.true_now()), node.id, float(new - old))
        self._kerberos_check(node)

    def _observe(self, attacker: _Node, data: bytes) -> None:
        try:
            packet = decode(data)
        except CodecError:
            return
        if packet.mode != Mode.CLIENT:
            return
        self.counts["observed_by_attackers"] += 1
        target = attacker.spec.attack.target
        for reply in on_observe(attacker.spec.attack, packet, self.true_now()):
            self._count("packets_injected", ATTACK)
            self.send(attacker.id, target, encode(reply), ATTACK)

    def _flood(self, attacker: _Node) -> None:
        attack: BroadcastFlood = attacker.spec.attack
        t = self.true_now()
        if attack.end_s is not None and t >= Fraction(attack.end_s):
            return
        self.schedule(self.now_us + _us(attack.tick_s), self._flood, attacker)
        packets = flood_tick(attack, self.ntp_now(attacker), attack.tick_s, self.rng(f"flood:{attacker.id}"))
        neighbours = [dst for (src, dst) in self.links if src == attacker.id]
        for packet in packets:
            data = encode(packet)
            for dst in neighbours:
                self._count("packets_injected", ATTACK)
                self.send(attacker.id, dst, data, ATTACK)

    def _clock_step(self, node: _Node, step: Fraction) -> None:
        old = self.reading(node)
        node.clock = node.clock.step(step, self.true_now())
        self._clock_changed(node, old)

    def _irm_action(self, node: _Node, action: str, doc_id: str | None) -> None:
        now = self.reading(node)
        entry = {"t": self.true_now(), "node": node.id, "action": action, "doc_id": doc_id}
        if action == "reinstall":
            node.rms.reinstall(now)
            entry["outcome"] = "reinstalled"
        elif action == "acquire":
            try:
                node.rms.acquire_license(doc_id, node.spec.irm.server_reachable(self.true_now()), now)
                entry["outcome"] = "acquired"
            except IrmError as exc:
                entry["outcome"] = type(exc).__name__
        else:
            entry["outcome"] = str(node.rms.open_document(doc_id, now))
        self.irm_log.append(entry)

    def _probe(self, node: _Node, doc_id: str, every_us: int) -> None:
        self.schedule(self.now_us + every_us, self._probe, node, doc_id, every_us)
        decision = node.rms.open_document(doc_id, self.reading(node))
        self.access.append({"t": self.true_now(), "node": node.id, "doc_id": doc_id, "outcome": str(decision)})

    def _kerberos_principals(self) -> list[_Node]:
        kerb = self.scenario.kerberos
        if kerb is None:
            return []
        if kerb.principals is not None:
            return [self.nodes[p] for p in kerb.principals]
        return [n for n in self.nodes.values() if n.spec.role in (Role.CLIENT, Role.DOMAIN_CONTROLLER)]

    def _kerberos_check(self, node: _Node) -> None:
        kerb = self.scenario.kerberos
        if kerb is None or node.id == kerb.authority or node not in self._principals:
            return
        authority = self.nodes[kerb.authority]
        mine, theirs = self.reading(node), self.reading(authority)
        if kerberos_gate(mine, theirs, kerb.max_skew_s) is KerberosResult.SKEW_TOO_LARGE:
            self.kerberos_failures.append({"t": self.true_now(), "node": node.id, "skew_s": mine - theirs})
            if node.kerberos_first_failure is None:
                node.kerberos_first_failure = self.true_now()

    def _kerberos_probe(self, every_us: int) -> None:
        self.schedule(self.now_us + every_us, self._kerberos_probe, every_us)
        for node in self._principals:
            self._kerberos_check(node)

    def _sample(self, every_us: int) -> None:
        self.schedule(self.now_us + every_us, self._sample, every_us)
        t = self.true_now()
        for node in self.nodes.values():
            self.timeline.append({"t": t, "node": node.id, "offset_s": self.reading(node) - t})

    # -- main loop --------------------------------------------------------

    def _seed_events(self) -> None:
        sc = self.scenario
        self._principals = self._kerberos_principals()
        for node in self.nodes.values():
            if node.client is not None:
                policy = node.client.policy
                first = policy.first_poll_s if policy.first_poll_s is not None else policy.poll_interval_s
                self.schedule(_us(first), self._poll, node)
            attack = node.spec.attack
            if isinstance(attack, BroadcastFlood):
                self.schedule(_us(attack.start_s), self._flood, node)
        for ev in sc.clock_events:
            self.schedule(_us(ev.at_s), self._clock_step, self.nodes[ev.node], ev.step_s)
        for ev in sc.irm_events:
            self.schedule(_us(ev.at_s), self._irm_action, self.nodes[ev.node], ev.action, ev.doc_id)
        for probe in sc.access_probes:
            self.schedule(_us(probe.start_s), self._probe, self.nodes[probe.node], probe.doc_id, _us(probe.every_s))
        if sc.kerberos is not None:
            self.schedule(0, self._kerberos_probe, _us(sc.kerberos.probe_interval_s))
        if sc.sample_interval_s is not None:
            self.schedule(0, self._sample, _us(sc.sample_interval_s))

    def run(self) -> MetricsReport:
        self._seed_events()
        queue = self._queue
        while queue and queue[0][0] <= self.end_us:
            at_us, _, handler, args = heapq.heappop(queue)
            self.now_us = at_us
            self.event_count += 1
            handler(*args)
        self.now_us = self.end_us
        return self._report()

    def _report(self) -> MetricsReport:
        end = self.true_now()
        for origin, counter in self.by_origin.items():
            counter["in_flight"] = (
                counter["packets_sent"] - counter["delivered"] - counter["lost_by_link"] - counter["dropped_by_filter"]
            )
        self.counts["in_flight"] = sum(c["in_flight"] for c in self.by_origin.values())
        nodes = {}
        for node in self.nodes.values():
            nodes[node.id] = {
                "role": node.spec.role.value,
                "final_offset_s": self.reading(node) - end,
                "crashed": bool(node.rms is not None and node.rms.crashed),
                "crash_time_s": node.crash_time,
                "accepted_updates": node.updates,
                "kerberos_first_failure_s": node.kerberos_first_failure,
            }
        return MetricsReport(
            scenario=self.scenario.name,
            seed=self.seed,
            duration_s=self.scenario.duration_s,
            event_count=self.event_count,
            nodes=nodes,
            counts=dict(self.counts),
            by_origin={k: dict(v) for k, v in self.by_origin.items()},
            rejected_by_reason=dict(self.rejected),
            filter_drops_by_reason=dict(self.filter_drops),
            filter_stats=dict(self.filter_stats),
            kerberos_failures=self.kerberos_failures,
            access=self.access,
            irm_events=self.irm_log,
            timeline=self.timeline,
        )


def run(scenario: ScenarioConfig, seed: int | None = None) -> MetricsReport:
    """Run ``scenario`` to completion. Same scenario and seed, same report."""
    return Simulator(scenario, seed).run()
