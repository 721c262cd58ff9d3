"""Hash-chained audit ledger sealed by a fixed validator quorum.

Binary layout (all integers little-endian, digests raw 32 bytes)::

    event  := time_us u64 | kind u8 | id_len u16 | device_id utf8 | payload_digest[32]
    block  := index u32 | prev_hash[32] | events_hash[32] | sealed_at_us u64
              | block_hash[32] | n_events u32 | (event_len u32 | event) * n_events
    file   := (block_len u32 | block) *

events_hash = hash(concatenation of (event_len u32 | event)) and
block_hash  = hash(index u32 | prev_hash | events_hash | sealed_at_us u64).
"""

from __future__ import annotations

import enum
import json
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .crypto import hash as digest_of

ZERO = bytes(32)


class LedgerError(Exception):
    pass


class TimeRegression(LedgerError):
    pass


class EventKind(enum.IntEnum):
    ADMISSION = 1
    DENIAL = 2
    VERDICT = 3
    FIRMWARE_UPDATE = 4
    TAMPER = 5
    ATTACK_DETECTED = 6
    SEGMENT_CHANGE = 7


def to_us(t: float) -> int:
    return int(round(t * 1_000_000))


def canonical_body(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class AuditEvent:
    time: float
    kind: EventKind
    device_id: str
    payload_digest: bytes

    def encode(self) -> bytes:
        dev = self.device_id.encode()
        return (struct.pack("<QBH", to_us(self.time), int(self.kind), len(dev)) + dev
                + self.payload_digest)

    @classmethod
    def decode(cls, raw: bytes) -> "AuditEvent":
        t, kind, n = struct.unpack_from("<QBH", raw, 0)
        dev = raw[11:11 + n].decode()
        digest = raw[11 + n:]
        if len(digest) != 32:
            raise ValueError("bad event length")
        return cls(t / 1_000_000, EventKind(kind), dev, bytes(digest))


def make_event(time: float, kind: EventKind, device_id: str, body: dict | None = None) -> AuditEvent:
    body = {} if body is None else body
    return AuditEvent(time, EventKind(kind), device_id, digest_of(canonical_body(body)))


def events_digest(events: Sequence[AuditEvent]) -> bytes:
    parts = []
    for e in events:
        raw = e.encode()
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return digest_of(b"".join(parts))


def header_digest(index: int, prev_hash: bytes, events_hash: bytes, sealed_at_us: int) -> bytes:
    return digest_of(struct.pack("<I", index) + prev_hash + events_hash + struct.pack("<Q", sealed_at_us))


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    events: tuple[AuditEvent, ...]
    events_hash: bytes
    sealed_at: float
    block_hash: bytes

    @classmethod
    def seal(cls, index: int, prev_hash: bytes, events: Sequence[AuditEvent], sealed_at: float) -> "Block":
        eh = events_digest(events)
        return cls(index, prev_hash, tuple(events), eh, sealed_at,
                   header_digest(index, prev_hash, eh, to_us(sealed_at)))

    def encode(self) -> bytes:
        out = [struct.pack("<I", self.index), self.prev_hash, self.events_hash,
               struct.pack("<Q", to_us(self.sealed_at)), self.block_hash,
               struct.pack("<I", len(self.events))]
        for e in self.events:
            raw = e.encode()
            out.append(struct.pack("<I", len(raw)))
            out.append(raw)
        return b"".join(out)

    @classmethod
    def decode(cls, raw: bytes) -> "Block":
        index, = struct.unpack_from("<I", raw, 0)
        prev = raw[4:36]
        eh = raw[36:68]
        sealed_us, = struct.unpack_from("<Q", raw, 68)
        bh = raw[76:108]
        n, = struct.unpack_from("<I", raw, 108)
        pos = 112
        events = []
        for _ in range(n):
            ln, = struct.unpack_from("<I", raw, pos)
            pos += 4
            chunk = raw[pos:pos + ln]
            if len(chunk) != ln:
                raise ValueError("truncated event")
            events.append(AuditEvent.decode(chunk))
            pos += ln
        if pos != len(raw) or len(bh) != 32:
            raise ValueError("block length mismatch")
        return cls(index, bytes(prev), tuple(events), bytes(eh), sealed_us / 1_000_000, bytes(bh))


@dataclass(frozen=True)
class ConsensusParams:
    block_interval: float = 2.0
    capacity: int = 300
    validators: int = 4
    rtt: float = 0.05

    def __post_init__(self):
        if self.block_interval <= 0:
            raise ValueError("block interval must be > 0")
        if self.capacity < 1:
            raise ValueError("block capacity must be >= 1")
        if self.validators < 1:
            raise ValueError("need at least one validator")
        if self.rtt < 0:
            raise ValueError("rtt must be >= 0")

    @property
    def quorum(self) -> int:
        return math.ceil(2 * self.validators / 3)

    @property
    def commit_delay(self) -> float:
        # two quorum rounds: propose/vote then commit
        return 2 * self.rtt


@dataclass(frozen=True)
class Receipt:
    enqueued_at: float


class SealQueue:
    """Pending FIFO shared by the hashing ledger and the counting load model.

    Entries are ``[enqueued_at, count, items]``; a seal takes up to C
    events from the head, splitting an entry if needed.
    """

    def __init__(self, params: ConsensusParams):
        self.params = params
        self._pending: deque[list] = deque()
        self.pending_count = 0
        self.last_enqueued = float("-inf")
        self.latency_sum = 0.0
        self.committed_count = 0
        self.latencies: list[tuple[float, int]] = []  # (latency, weight)

    def push(self, t: float, count: int = 1, items: list | None = None) -> None:
        if t < self.last_enqueued:
            raise TimeRegression(f"{t} < {self.last_enqueued}")
        self.last_enqueued = t
        if count <= 0:
            return
        self._pending.append([t, count, items])
        self.pending_count += count

    def take(self, now: float) -> list[tuple[float, int, list | None]]:
        cap = self.params.capacity
        commit_at = now + self.params.commit_delay
        out = []
        while cap and self._pending:
            head = self._pending[0]
            n = min(cap, head[1])
            if n == head[1]:
                self._pending.popleft()
                items = head[2]
            else:
                items = head[2][:n] if head[2] is not None else None
                head[1] -= n
                if head[2] is not None:
                    head[2] = head[2][n:]
            cap -= n
            self.pending_count -= n
            latency = commit_at - head[0]
            self.latency_sum += latency * n
            self.committed_count += n
            self.latencies.append((latency, n))
            out.append((head[0], n, items))
        return out

    @property
    def mean_latency(self) -> float:
        return self.latency_sum / self.committed_count if self.committed_count else 0.0

    def percentile(self, q: float) -> float:
        return weighted_percentile(self.latencies, q)


def weighted_percentile(pairs: Iterable[tuple[float, int]], q: float) -> float:
    data = sorted(pairs)
    total = sum(w for _, w in data)
    if not total:
        return 0.0
    rank = math.ceil(q * total)
    acc = 0
    for value, w in data:
        acc += w
        if acc >= rank:
            return value
    return data[-1][0]


class AuditLedger:
    """Event-level ledger: appends, seals hashed blocks and keeps the chain."""

    def __init__(self, params: ConsensusParams | None = None):
        self.params = params or ConsensusParams()
        self.queue = SealQueue(self.params)
        self.blocks: list[Block] = []
        self.appended = 0

    @property
    def pending(self) -> int:
        return self.queue.pending_count

    def pending_events(self) -> list[AuditEvent]:
        out = []
        for _, _, items in self.queue._pending:
            out.extend(items)
        return out

    def committed_events(self) -> list[AuditEvent]:
        return [e for b in self.blocks for e in b.events]

    def append_event(self, event: AuditEvent) -> Receipt:
        self.queue.push(event.time, 1, [event])
        self.appended += 1
        return Receipt(event.time)

    def seal_block(self, now: float) -> Block | None:
        taken = self.queue.take(now)
        if not taken:
            return None
        events = [e for _, _, items in taken for e in items]
        prev = self.blocks[-1].block_hash if self.blocks else ZERO
        block = Block.seal(len(self.blocks), prev, events, now)
        self.blocks.append(block)
        return block

    def commit_time(self, block: Block) -> float:
        return block.sealed_at + self.params.commit_delay


append_event = AuditLedger.append_event
seal_block = AuditLedger.seal_block


@dataclass(frozen=True)
class ChainVerdict:
    first_bad_index: int | None = None

    @property
    def ok(self) -> bool:
        return self.first_bad_index is None

    def __str__(self):
        return "Ok" if self.ok else f"FirstBadIndex({self.first_bad_index})"


def verify_chain(blocks: Sequence[Block | bytes | None]) -> ChainVerdict:
    """Recompute hashes and linkage from block 0; report the lowest bad index.

    Entries that could not be decoded (raw bytes or None) count as bad.
    """
    prev = ZERO
    for i, b in enumerate(blocks):
        if not isinstance(b, Block):
            return ChainVerdict(i)
        if b.index != i or b.prev_hash != prev:
            return ChainVerdict(i)
        if events_digest(b.events) != b.events_hash:
            return ChainVerdict(i)
        if header_digest(b.index, b.prev_hash, b.events_hash, to_us(b.sealed_at)) != b.block_hash:
            return ChainVerdict(i)
        prev = b.block_hash
    return ChainVerdict(None)


def encode_chain(blocks: Iterable[Block]) -> bytes:
    out = []
    for b in blocks:
        raw = b.encode()
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
    return b"".join(out)


def decode_chain(data: bytes) -> list[Block | bytes]:
    """Parse a chain file; undecodable records are returned as raw bytes."""
    out: list[Block | bytes] = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            out.append(data[pos:])
            break
        ln, = struct.unpack_from("<I", data, pos)
        pos += 4
        raw = data[pos:pos + ln]
        pos += ln
        if len(raw) != ln:
            # declared length runs past the end of the file
            out.append(bytes(raw))
            break
        try:
            out.append(Block.decode(raw))
        except (ValueError, struct.error, UnicodeDecodeError):
            out.append(bytes(raw))
    return out


def write_chain(path, blocks: Iterable[Block]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_chain(blocks))


def read_chain(path) -> list[Block | bytes]:
    with open(path, "rb") as fh:
        return decode_chain(fh.read())


# ---------------------------------------------------------------------------
# capacity model

def utilization(params: ConsensusParams, n_devices: int, lam: float) -> float:
    return n_devices * lam * params.block_interval / params.capacity


def saturation_point(params: ConsensusParams, lam: float) -> tuple[float, float]:
    """(N_sat, N_knee): N_sat = C / (T_b * lam); knee where 1 + rho/(2(1-rho)) = 2."""
    if lam <= 0:
        raise ValueError("per-device event rate must be > 0")
    n_sat = params.capacity / (params.block_interval * lam)
    return n_sat, n_sat * 2.0 / 3.0


def analytic_latency(params: ConsensusParams, rho: float) -> float:
    if rho >= 1:
        return math.inf
    return params.block_interval / 2 * (1 + rho / (2 * (1 - rho))) + params.commit_delay
