"""Per-operation overhead model and cost records."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

OP_CLASSES = ("tee_init", "secure_comm", "blockchain_op", "semantic_proc")


class UnknownOpClass(ValueError):
    pass


@dataclass(frozen=True)
class OpCost:
    energy_pct: float
    memory_kb: float
    time_ms: float

    def __post_init__(self):
        if min(self.energy_pct, self.memory_kb, self.time_ms) < 0:
            raise ValueError("cost entries must be non-negative")


DEFAULT_COSTS = {
    "tee_init": OpCost(8.2, 12.5, 45),
    "secure_comm": OpCost(6.5, 8.3, 32),
    "blockchain_op": OpCost(15.3, 24.7, 320),
    "semantic_proc": OpCost(9.8, 16.2, 85),
}


@dataclass(frozen=True)
class CostModel:
    entries: dict

    @classmethod
    def default(cls) -> "CostModel":
        return cls(dict(DEFAULT_COSTS))

    def __getitem__(self, op_class: str) -> OpCost:
        try:
            return self.entries[op_class]
        except KeyError:
            raise UnknownOpClass(op_class) from None


@dataclass(frozen=True)
class CostRecord:
    time: float
    device_id: str
    op_class: str
    energy_pct: float
    memory_kb: float
    time_ms: float


class CostLedger:
    """Appends cost records and tracks per-device resident memory."""

    def __init__(self, model: CostModel):
        self.model = model
        self.records: list[CostRecord] = []
        self.counts: dict[str, int] = defaultdict(int)

    def account(self, time: float, device_id: str, op_class: str) -> CostRecord:
        c = self.model[op_class]
        rec = CostRecord(time, device_id, op_class, c.energy_pct, c.memory_kb, c.time_ms)
        self.records.append(rec)
        self.counts[op_class] += 1
        return rec

    def peak_memory(self) -> dict[str, float]:
        """Max over time of the summed footprint of ops resident on each device.

        An op is resident over [time, time + time_ms); ends sort before starts
        at the same instant.
        """
        edges: dict[str, list] = defaultdict(list)
        for r in self.records:
            start = round(r.time * 1e6)
            end = start + round(r.time_ms * 1e3)
            edges[r.device_id].append((start, 1, r.memory_kb))
            edges[r.device_id].append((end, 0, -r.memory_kb))
        peaks = {}
        for dev in sorted(edges):
            cur = peak = 0.0
            for _, _, delta in sorted(edges[dev]):
                cur += delta
                peak = max(peak, cur)
            peaks[dev] = round(peak, 6)
        return peaks


def cost_csv(records: Iterable[CostRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("device_id", "op_class", "energy_pct", "memory_kb", "time_ms"))
    for r in records:
        w.writerow((r.device_id, r.op_class, r.energy_pct, r.memory_kb, r.time_ms))
    return buf.getvalue()
