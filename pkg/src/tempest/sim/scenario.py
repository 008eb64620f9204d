"""Scenario files: JSON documents describing a simulated network.

See ``docs/scenario-schema.md`` in the repository for the field reference. :func:`validate`
reports every problem it can find; :meth:`ScenarioConfig.from_dict` refuses
to build from an invalid document.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

from ..attacker import AttackSpec, DnsRedirect, SlowDrift, SpoofedReply, attack_from_dict
from ..defense import FilterConfig
from ..irm_model import DocumentPolicy
from ..sync_client import ServerRole, SyncPolicy
from ..timekeeping import Discipline, SimClock, Slew, Step, as_fraction

__all__ = [
    "Role",
    "InvalidScenario",
    "ScenarioParseError",
    "LatencySpec",
    "LinkSpec",
    "IrmSpec",
    "NodeSpec",
    "ClockEvent",
    "IrmEvent",
    "AccessProbe",
    "KerberosSpec",
    "ScenarioConfig",
    "validate",
    "load_scenario",
    "bundled_scenarios",
    "bundled_path",
]

BUNDLED_DIR = Path(__file__).resolve().parent.parent / "scenarios"


class Role(str, enum.Enum):
    CLIENT = "client"
    DOMAIN_CONTROLLER = "domain_controller"
    EXTERNAL_SERVER = "external_server"
    ATTACKER = "attacker"
    FILTER = "filter"


SERVING_ROLES = (Role.DOMAIN_CONTROLLER, Role.EXTERNAL_SERVER)
SYNCING_ROLES = (Role.CLIENT, Role.DOMAIN_CONTROLLER)


class InvalidScenario(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid scenario: " + "; ".join(self.violations))


class ScenarioParseError(ValueError):
    """The file is not valid JSON. Carries line and column."""

    def __init__(self, path, err: json.JSONDecodeError):
        self.lineno, self.colno = err.lineno, err.colno
        super().__init__(f"{path}:{err.lineno}:{err.colno}: {err.msg}")


def _us(seconds) -> int:
    """Seconds to whole microseconds (simulation time grid)."""
    return round(as_fraction(seconds) * 1_000_000)


def _windows(raw) -> tuple[tuple[Fraction, Fraction], ...]:
    out = []
    for pair in raw or ():
        start, end = pair
        if as_fraction(end) < as_fraction(start):
            raise ValueError(f"window {pair} ends before it starts")
        out.append((as_fraction(start), as_fraction(end)))
    return tuple(out)


def _in_windows(windows, t: Fraction) -> bool:
    return any(start <= t < end for start, end in windows)


@dataclass(frozen=True)
class LatencySpec:
    """Bounded uniform one-way latency, in microseconds."""

    min_us: int
    max_us: int

    @classmethod
    def parse(cls, raw) -> LatencySpec:
        if isinstance(raw, dict):
            lo, hi = _us(raw["min"]), _us(raw["max"])
        else:
            lo = hi = _us(raw)
        if lo < 0 or hi < lo:
            raise ValueError(f"latency bounds must satisfy 0 <= min <= max, got {raw}")
        return cls(lo, hi)


@dataclass(frozen=True)
class LinkSpec:
    src: str
    dst: str
    latency: LatencySpec
    loss_rate: float = 0.0
    via_filter: bool = False
    bidirectional: bool = True
    # the filter is the gateway of this endpoint: it sees outbound packets
    # as they leave and inbound packets as they arrive
    filter_at: str | None = None

    @classmethod
    def parse(cls, raw: dict) -> LinkSpec:
        known = {"from", "to", "latency_s", "loss_rate", "via_filter", "bidirectional", "filter_at"}
        _no_extra(raw, known, f"link {raw.get('from')}->{raw.get('to')}")
        loss = float(raw.get("loss_rate", 0.0))
        if not 0.0 <= loss <= 1.0:
            raise ValueError(f"loss_rate {loss} outside [0, 1]")
        return cls(
            src=raw["from"],
            dst=raw["to"],
            latency=LatencySpec.parse(raw.get("latency_s", 0)),
            loss_rate=loss,
            via_filter=bool(raw.get("via_filter", False)),
            bidirectional=bool(raw.get("bidirectional", True)),
            filter_at=raw.get("filter_at", raw["from"] if raw.get("via_filter") else None),
        )


@dataclass(frozen=True)
class IrmSpec:
    principal: str = "user"
    crash_threshold_s: float = 7200.0
    online: tuple[tuple[Fraction, Fraction], ...] = ()

    def server_reachable(self, t: Fraction) -> bool:
        return _in_windows(self.online, t)


def _parse_discipline(raw) -> Discipline:
    if raw in (None, "step"):
        return Step()
    if raw == "slew":
        return Slew()
    if isinstance(raw, dict) and set(raw) == {"slew"}:
        return Slew(max_slew_ppm=float(raw["slew"]))
    raise ValueError(f"discipline must be 'step', 'slew' or {{'slew': ppm}}, got {raw!r}")


def _parse_clock(raw: dict | None) -> SimClock:
    raw = raw or {}
    _no_extra(raw, {"offset_s", "drift_ppm", "discipline"}, "clock")
    return SimClock(
        base_offset_s=as_fraction(raw.get("offset_s", 0)),
        drift_ppm=as_fraction(raw.get("drift_ppm", 0)),
        discipline=_parse_discipline(raw.get("discipline")),
    )


def _parse_sync(raw: dict) -> SyncPolicy:
    params = dict(raw)
    if "server_preference" in params:
        params["server_preference"] = tuple(ServerRole(r) for r in params["server_preference"])
    if "servers" in params:
        params["servers"] = {ServerRole(k): v for k, v in params["servers"].items()}
    return SyncPolicy(**params)


def _no_extra(raw: dict, known: set[str], where: str) -> None:
    extra = set(raw) - known
    if extra:
        raise ValueError(f"{where}: unknown field(s) {sorted(extra)}")


@dataclass(frozen=True)
class NodeSpec:
    id: str
    role: Role
    clock: SimClock = field(default_factory=SimClock)
    sync: SyncPolicy | None = None
    irm: IrmSpec | None = None
    attack: AttackSpec | None = None
    filter: FilterConfig | None = None
    offline: tuple[tuple[Fraction, Fraction], ...] = ()

    def is_up(self, t: Fraction) -> bool:
        return not _in_windows(self.offline, t)


@dataclass(frozen=True)
class ClockEvent:
    at_s: Fraction
    node: str
    step_s: Fraction


@dataclass(frozen=True)
class IrmEvent:
    at_s: Fraction
    node: str
    action: str
    doc_id: str | None = None


@dataclass(frozen=True)
class AccessProbe:
    node: str
    doc_id: str
    every_s: Fraction
    start_s: Fraction = Fraction(0)


@dataclass(frozen=True)
class KerberosSpec:
    authority: str
    probe_interval_s: Fraction = Fraction(600)
    principals: tuple[str, ...] | None = None
    max_skew_s: Fraction = Fraction(300)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    duration_s: Fraction
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...] = ()
    documents: tuple[DocumentPolicy, ...] = ()
    clock_events: tuple[ClockEvent, ...] = ()
    irm_events: tuple[IrmEvent, ...] = ()
    access_probes: tuple[AccessProbe, ...] = ()
    kerberos: KerberosSpec | None = None
    sample_interval_s: Fraction | None = None
    epoch_unix: int = 1_700_000_000
    description: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioConfig:
        problems = validate(data)
        if problems:
            raise InvalidScenario(problems)
        return _build(data)

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def with_seed(self, seed: int) -> ScenarioConfig:
        return replace(self, seed=int(seed))


_TOP_LEVEL = {
    "name",
    "description",
    "seed",
    "duration_s",
    "epoch_unix",
    "nodes",
    "links",
    "documents",
    "clock_events",
    "irm_events",
    "access_probes",
    "kerberos",
    "sample_interval_s",
}
_NODE_FIELDS = {"id", "role", "clock", "sync", "irm", "attack", "filter", "offline"}


def _parse_node(raw: dict) -> NodeSpec:
    _no_extra(raw, _NODE_FIELDS, f"node {raw.get('id')!r}")
    role = Role(raw["role"])
    irm = None
    if raw.get("irm") is not None:
        spec = dict(raw["irm"])
        _no_extra(spec, {"principal", "crash_threshold_s", "online"}, "irm")
        irm = IrmSpec(
            principal=spec.get("principal", "user"),
            crash_threshold_s=float(spec.get("crash_threshold_s", 7200.0)),
            online=_windows(spec.get("online")),
        )
    return NodeSpec(
        id=str(raw["id"]),
        role=role,
        clock=_parse_clock(raw.get("clock")),
        sync=_parse_sync(raw["sync"]) if raw.get("sync") is not None else None,
        irm=irm,
        attack=attack_from_dict(raw["attack"]) if raw.get("attack") is not None else None,
        filter=FilterConfig(**raw["filter"]) if raw.get("filter") is not None else (FilterConfig() if role is Role.FILTER else None),
        offline=_windows(raw.get("offline")),
    )


def _parse_document(raw: dict) -> DocumentPolicy:
    _no_extra(raw, {"doc_id", "not_before", "not_after", "rights", "principals"}, f"document {raw.get('doc_id')!r}")
    principals = raw.get("principals")
    return DocumentPolicy(
        doc_id=raw["doc_id"],
        not_before=as_fraction(raw["not_before"]),
        not_after=as_fraction(raw["not_after"]),
        rights=frozenset(raw.get("rights", ["read"])),
        principals=frozenset(principals) if principals is not None else None,
    )


def _attack_refs(attack: AttackSpec) -> list[tuple[str, str]]:
    if isinstance(attack, (SpoofedReply, SlowDrift)):
        return [("target", attack.target)]
    if isinstance(attack, DnsRedirect):
        return [("victim", attack.victim), ("attacker_server", attack.attacker_server)]
    return []


def validate(data: dict | ScenarioConfig) -> list[str]:
    """Every violated constraint, as human-readable strings. Empty means ok."""
    if isinstance(data, ScenarioConfig):
        return []
    problems: list[str] = []
    if not isinstance(data, dict):
        return ["scenario must be a JSON object"]
    extra = set(data) - _TOP_LEVEL
    if extra:
        problems.append(f"unknown top-level field(s) {sorted(extra)}")
    try:
        if not as_fraction(data.get("duration_s", 0)) > 0:
            problems.append("duration_s must be > 0")
    except (TypeError, ValueError):
        problems.append("duration_s must be a number")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        problems.append("seed must be an integer in [0, 2**64)")

    raw_nodes = data.get("nodes") or []
    if not raw_nodes:
        problems.append("nodes: at least one node is required")
    nodes: dict[str, NodeSpec] = {}
    for i, raw in enumerate(raw_nodes):
        node_id = raw.get("id") if isinstance(raw, dict) else None
        label = f"node[{i}]" + (f" {node_id!r}" if node_id else "")
        if not node_id:
            problems.append(f"{label}: missing id")
            continue
        if node_id in nodes:
            problems.append(f"duplicate node id {node_id!r}")
            continue
        try:
            nodes[node_id] = _parse_node(raw)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{label}: {exc}")
    ids = set(nodes)

    filters = [n for n in nodes.values() if n.role is Role.FILTER]
    if len(filters) > 1:
        problems.append("at most one filter node is supported")
    for n in nodes.values():
        if n.role is Role.ATTACKER and n.attack is None:
            problems.append(f"node {n.id!r}: attacker needs an attack")
        if n.role is not Role.ATTACKER and n.attack is not None:
            problems.append(f"node {n.id!r}: only attackers may carry an attack")
        if n.role is Role.DOMAIN_CONTROLLER and n.sync is None:
            problems.append(f"node {n.id!r}: domain controller needs a sync policy")
        if n.sync is not None:
            if n.role not in SYNCING_ROLES:
                problems.append(f"node {n.id!r}: role {n.role.value} does not sync")
            for role, target in n.sync.servers.items():
                if target not in ids:
                    problems.append(f"node {n.id!r}: sync server {role.value} -> unknown node {target!r}")
            if not n.sync.servers:
                problems.append(f"node {n.id!r}: sync policy lists no servers")
        if n.irm is not None and n.role is not Role.CLIENT:
            problems.append(f"node {n.id!r}: irm state is for clients only")
        if n.attack is not None:
            for what, ref in _attack_refs(n.attack):
                if ref not in ids:
                    problems.append(f"node {n.id!r}: attack {what} -> unknown node {ref!r}")

    links: list[LinkSpec] = []
    seen_links: set[tuple[str, str]] = set()
    for i, raw in enumerate(data.get("links") or []):
        try:
            link = LinkSpec.parse(raw)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"link[{i}]: {exc}")
            continue
        for end in (link.src, link.dst):
            if end not in ids:
                problems.append(f"link[{i}] {link.src}->{link.dst}: unknown node {end!r}")
        if link.src == link.dst:
            problems.append(f"link[{i}]: self-loop on {link.src!r}")
        if link.via_filter and not filters:
            problems.append(f"link[{i}] {link.src}->{link.dst}: via_filter but no filter node")
        if link.filter_at is not None and link.filter_at not in (link.src, link.dst):
            problems.append(f"link[{i}]: filter_at must be one of its endpoints")
        directions = [(link.src, link.dst)] + ([(link.dst, link.src)] if link.bidirectional else [])
        for d in directions:
            if d in seen_links:
                problems.append(f"link[{i}]: duplicate link {d[0]}->{d[1]}")
            seen_links.add(d)
        links.append(link)

    doc_ids = set()
    for i, raw in enumerate(data.get("documents") or []):
        try:
            doc = _parse_document(raw)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"document[{i}]: {exc}")
            continue
        if doc.doc_id in doc_ids:
            problems.append(f"duplicate document {doc.doc_id!r}")
        doc_ids.add(doc.doc_id)

    def need_irm(where: str, node_id) -> None:
        if node_id not in ids:
            problems.append(f"{where}: unknown node {node_id!r}")
        elif nodes[node_id].irm is None:
            problems.append(f"{where}: node {node_id!r} has no irm state")

    for i, raw in enumerate(data.get("clock_events") or []):
        if raw.get("node") not in ids:
            problems.append(f"clock_events[{i}]: unknown node {raw.get('node')!r}")
        if "step_s" not in raw or "at_s" not in raw:
            problems.append(f"clock_events[{i}]: needs at_s and step_s")
    for i, raw in enumerate(data.get("irm_events") or []):
        need_irm(f"irm_events[{i}]", raw.get("node"))
        action = raw.get("action")
        if action not in ("acquire", "open", "reinstall"):
            problems.append(f"irm_events[{i}]: action must be acquire, open or reinstall")
        elif action != "reinstall" and raw.get("doc_id") not in doc_ids:
            problems.append(f"irm_events[{i}]: unknown document {raw.get('doc_id')!r}")
    for i, raw in enumerate(data.get("access_probes") or []):
        need_irm(f"access_probes[{i}]", raw.get("node"))
        if raw.get("doc_id") not in doc_ids:
            problems.append(f"access_probes[{i}]: unknown document {raw.get('doc_id')!r}")
        if not as_fraction(raw.get("every_s", 0)) > 0:
            problems.append(f"access_probes[{i}]: every_s must be > 0")
    kerb = data.get("kerberos")
    if kerb is not None:
        if kerb.get("authority") not in ids:
            problems.append(f"kerberos: unknown authority {kerb.get('authority')!r}")
        for p in kerb.get("principals") or []:
            if p not in ids:
                problems.append(f"kerberos: unknown principal {p!r}")
        if not as_fraction(kerb.get("probe_interval_s", 600)) > 0:
            problems.append("kerberos: probe_interval_s must be > 0")
    interval = data.get("sample_interval_s")
    if interval is not None and not as_fraction(interval) > 0:
        problems.append("sample_interval_s must be > 0")
    return problems


def _build(data: dict) -> ScenarioConfig:
    kerb = data.get("kerberos")
    return ScenarioConfig(
        name=data.get("name", "scenario"),
        description=data.get("description", ""),
        seed=int(data.get("seed", 0)),
        duration_s=as_fraction(data["duration_s"]),
        epoch_unix=int(data.get("epoch_unix", 1_700_000_000)),
        nodes=tuple(_parse_node(n) for n in data["nodes"]),
        links=tuple(LinkSpec.parse(link) for link in data.get("links") or []),
        documents=tuple(_parse_document(d) for d in data.get("documents") or []),
        clock_events=tuple(
            ClockEvent(as_fraction(e["at_s"]), e["node"], as_fraction(e["step_s"])) for e in data.get("clock_events") or []
        ),
        irm_events=tuple(
            IrmEvent(as_fraction(e["at_s"]), e["node"], e["action"], e.get("doc_id")) for e in data.get("irm_events") or []
        ),
        access_probes=tuple(
            AccessProbe(e["node"], e["doc_id"], as_fraction(e["every_s"]), as_fraction(e.get("start_s", 0)))
            for e in data.get("access_probes") or []
        ),
        kerberos=KerberosSpec(
            authority=kerb["authority"],
            probe_interval_s=as_fraction(kerb.get("probe_interval_s", 600)),
            principals=tuple(kerb["principals"]) if kerb.get("principals") is not None else None,
            max_skew_s=as_fraction(kerb.get("max_skew_s", 300)),
        )
        if kerb
        else None,
        sample_interval_s=as_fraction(data["sample_interval_s"]) if data.get("sample_interval_s") is not None else None,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises:
        FileNotFoundError: the file does not exist.
        ScenarioParseError: the file is not valid JSON.
        InvalidScenario: the document violates the schema.
    """
    return ScenarioConfig.from_dict(read_scenario_json(path))


def read_scenario_json(path: str | Path) -> Any:
    path = Path(path)
    text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(path, exc) from None


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.json"))


def bundled_path(name: str) -> Path:
    path = BUNDLED_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario named {name!r}; have {bundled_scenarios()}")
    return path
