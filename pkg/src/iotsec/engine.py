"""Deterministic discrete-event loop with a canonical JSON-lines log."""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass
from typing import Any, Callable

ACTIONS = frozenset({
    "publish", "telemetry", "seal_block", "attest_challenge", "attack_step", "context_change",
    "firmware_rollout",
})


class UnknownAction(ValueError):
    pass


def to_us(t: float) -> int:
    return int(round(t * 1_000_000))


@dataclass(frozen=True, order=True)
class SimEvent:
    fire_at_us: int
    seq: int
    action: str

    @property
    def fire_at(self) -> float:
        return self.fire_at_us / 1_000_000


class Simulator:
    """Events fire in (fire_at, seq) order at a 1 us granularity."""

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0.0
        self._now_us = 0
        self._queue: list = []
        self._seq = 0
        self.log: list[dict] = []
        self.dispatched = 0

    def schedule(self, t: float, action: str, handler: Callable[..., Any], *args) -> SimEvent:
        if action not in ACTIONS:
            raise UnknownAction(action)
        us = to_us(t)
        if us < self._now_us:
            us = self._now_us
        ev = SimEvent(us, self._seq, action)
        self._seq += 1
        heapq.heappush(self._queue, (us, ev.seq, ev, handler, args))
        return ev

    def record(self, kind: str, actor: str, outcome: str, /, **detail) -> dict:
        rec = {"time": round(self.now, 6), "kind": kind,
               "actor": actor, "outcome": outcome}
        if detail:
            rec["detail"] = detail
        self.log.append(rec)
        return rec

    def run_until(self, t_end: float) -> list[dict]:
        end_us = to_us(t_end)
        q = self._queue
        while q and q[0][0] <= end_us:
            us, _, ev, handler, args = heapq.heappop(q)
            self._now_us = us
            self.now = us / 1_000_000
            self.dispatched += 1
            handler(*args)
        return self.log

    @property
    def pending(self) -> int:
        return len(self._queue)


def canonical_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def canonical_log(log: list[dict]) -> str:
    return "".join(canonical_line(r) + "\n" for r in log)


def log_digest(log: list[dict]) -> str:
    h = hashlib.sha256()
    for r in log:
        h.update(canonical_line(r).encode())
        h.update(b"\n")
    return h.hexdigest()
