"""Run results and their JSON / CSV renderings."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any

__all__ = ["MetricsReport", "plain"]


def plain(value: Any) -> Any:
    """Recursively turn Fractions into floats and enums into their values."""
    if isinstance(value, Fraction):
        return float(value)
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    duration_s: Fraction
    event_count: int
    nodes: dict[str, dict]
    counts: dict[str, int]
    by_origin: dict[str, dict[str, int]]
    rejected_by_reason: dict[str, int]
    filter_drops_by_reason: dict[str, int]
    filter_stats: dict[str, Any]
    kerberos_failures: list[dict] = field(default_factory=list)
    access: list[dict] = field(default_factory=list)
    irm_events: list[dict] = field(default_factory=list)
    timeline: list[dict] = field(default_factory=list)

    def count(self, key: str, origin: str | None = None) -> int:
        source = self.counts if origin is None else self.by_origin.get(origin, {})
        return source.get(key, 0)

    def crashed_nodes(self) -> list[str]:
        return [nid for nid, n in self.nodes.items() if n["crashed"]]

    def first_crash_time(self) -> Fraction | None:
        times = [n["crash_time_s"] for n in self.nodes.values() if n["crash_time_s"] is not None]
        return min(times) if times else None

    def to_dict(self) -> dict:
        return plain(asdict(self))

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def to_csv(self) -> str:
        """Time series: sampled clock offsets, access outcomes, Kerberos failures."""
        rows = []
        for r in self.timeline:
            rows.append((r["t"], r["node"], "offset_s", float(r["offset_s"])))
        for r in self.access:
            rows.append((r["t"], r["node"], f"access:{r['doc_id']}", r["outcome"]))
        for r in self.kerberos_failures:
            rows.append((r["t"], r["node"], "kerberos_failure_skew_s", float(r["skew_s"])))
        for nid, n in self.nodes.items():
            for u in n["accepted_updates"]:
                rows.append((u["t"], nid, f"sync_update:{u['origin']}", float(u["offset_s"])))
            if n["crash_time_s"] is not None:
                rows.append((n["crash_time_s"], nid, "crash", ""))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("time_s", "node", "metric", "value"))
        for t, node, metric, value in rows:
            writer.writerow((f"{float(t):.6f}", node, metric, value))
        return buf.getvalue()
