"""Zero-trust control plane.

Attestation gate with a single-use nonce ledger, admission into coarse
segments, per-device risk scoring from behavioural telemetry, tiered
authorization and segment-to-segment forwarding rules.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from . import crypto
from .crypto import SymmetricKey

QUARANTINE = "quarantine"
CHANNELS = ("msg_rate_hz", "payload_bytes", "duty_cycle")


class ZeroTrustError(Exception):
    pass


class UnknownDevice(ZeroTrustError):
    pass


class ReplayedNonce(ZeroTrustError):
    pass


class RuleError(ZeroTrustError):
    pass


@dataclass(frozen=True)
class AttestationEvidence:
    device_id: str
    firmware_version: int
    measurement: bytes
    nonce: bytes
    tag: bytes = field(repr=False)

    def body(self) -> bytes:
        return (crypto.lp(self.device_id.encode()) + struct.pack("<Q", self.firmware_version)
                + crypto.lp(self.measurement) + crypto.lp(self.nonce))


@dataclass(frozen=True)
class AttestResult:
    passed: bool
    reason: str | None = None

    def __bool__(self):
        return self.passed


PASS = AttestResult(True)


@dataclass(frozen=True)
class SegmentAssignment:
    segment_id: str
    granted_at: float


@dataclass(frozen=True)
class Denied:
    reason: str


class NonceLedger:
    """Plane-issued challenge nonces; each is consumed at first use."""

    def __init__(self, owner: bytes = b"zt-plane", lifetime: float = 30.0):
        self._counter = crypto.NonceCounter(owner, 0xA7)
        self.lifetime = lifetime
        self._outstanding: dict[bytes, tuple[str, float]] = {}
        self._consumed: set[bytes] = set()
        self.passes: list[bytes] = []

    def issue(self, device_id: str, now: float = 0.0) -> bytes:
        nonce = self._counter.next()
        self._outstanding[nonce] = (device_id, now + self.lifetime)
        return nonce

    def consume(self, nonce: bytes, now: float | None = None) -> str:
        """Burn ``nonce``; returns fresh, consumed, unknown or expired."""
        nonce = bytes(nonce)
        if nonce in self._consumed:
            return "consumed"
        entry = self._outstanding.pop(nonce, None)
        self._consumed.add(nonce)
        if entry is None:
            return "unknown"
        if now is not None and now > entry[1]:
            return "expired"
        return "fresh"

    def is_consumed(self, nonce: bytes) -> bool:
        return bytes(nonce) in self._consumed

    @property
    def issued(self) -> int:
        return self._counter.issued


def verify_attestation(evidence: AttestationEvidence, issued_nonce: bytes, golden_registry,
                       key_registry: Mapping[str, SymmetricKey], nonce_ledger: NonceLedger,
                       now: float | None = None, require_measurement: bool = True) -> AttestResult:
    """Check evidence against a challenge nonce.

    ``require_measurement=False`` models verifiers for devices without a
    measured-boot root of trust: only the tag and nonce are checked.
    """
    key = key_registry.get(evidence.device_id)
    if key is None:
        nonce_ledger.consume(issued_nonce, now)
        raise UnknownDevice(evidence.device_id)
    # the presented nonce and the challenge are both burnt by this call
    replayed = nonce_ledger.is_consumed(evidence.nonce) and bytes(evidence.nonce) != bytes(issued_nonce)
    status = nonce_ledger.consume(issued_nonce, now)
    if replayed or status == "consumed":
        raise ReplayedNonce(evidence.nonce.hex())
    if status != "fresh":
        return AttestResult(False, f"{status}_nonce")
    if bytes(evidence.nonce) != bytes(issued_nonce):
        return AttestResult(False, "nonce_mismatch")
    if not crypto.verify_mac(key, evidence.body(), evidence.tag):
        return AttestResult(False, "bad_tag")
    if require_measurement:
        golden = golden_registry.expected(evidence.device_id, evidence.firmware_version)
        if golden is None or golden != evidence.measurement:
            return AttestResult(False, "measurement_mismatch")
    nonce_ledger.passes.append(bytes(issued_nonce))
    return PASS


def segment_name(device_class: str, compliant: bool) -> str:
    return f"{device_class}:{'compliant' if compliant else 'noncompliant'}"


def admit_device(attest_result: AttestResult, device_class: str, compliance_flag: bool,
                 now: float = 0.0) -> SegmentAssignment | Denied:
    if not attest_result.passed:
        return Denied(attest_result.reason or "attestation_failed")
    cls = getattr(device_class, "value", device_class)
    return SegmentAssignment(segment_name(cls, compliance_flag), now)


# ---------------------------------------------------------------------------
# continuous authentication

class Tier(str, enum.Enum):
    FULL = "Full"
    RESTRICTED = "Restricted"
    QUARANTINED = "Quarantined"


TIER_ORDER = {Tier.FULL: 0, Tier.RESTRICTED: 1, Tier.QUARANTINED: 2}


@dataclass(frozen=True)
class RiskParams:
    alpha: float = 0.3
    restricted_at: float = 0.25
    quarantine_at: float = 0.6
    warmup: int = 20
    decay: float = 0.05
    sigma_floor: float = 1e-9


DEFAULT_RISK = RiskParams()


def classify_tier(r: float, params: RiskParams = DEFAULT_RISK) -> Tier:
    if r < params.restricted_at:
        return Tier.FULL
    if r < params.quarantine_at:
        return Tier.RESTRICTED
    return Tier.QUARANTINED


@dataclass(frozen=True)
class Baseline:
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0  # sum of squared deviations during warm-up, EW variance after

    def sigma(self, warmup: int) -> float:
        if self.n == 0:
            return 0.0
        if self.n < warmup:
            return math.sqrt(self.m2 / self.n)
        return math.sqrt(self.m2)


@dataclass(frozen=True)
class TelemetryRecord:
    device_id: str
    time: float
    channel: str
    value: float


@dataclass(frozen=True)
class RiskState:
    r: float = 0.0
    baselines: Mapping[str, Baseline] = field(default_factory=dict)
    tier: Tier = Tier.FULL
    last_time: float = float("-inf")

    def warmed(self, channel: str, params: RiskParams = DEFAULT_RISK) -> bool:
        b = self.baselines.get(channel)
        return b is not None and b.n >= params.warmup


def anomaly(z: float) -> float:
    return min(1.0, max(0.0, (z - 1.0) / 3.0))


def update_risk(state: RiskState, record: TelemetryRecord, params: RiskParams = DEFAULT_RISK) -> RiskState:
    if record.channel not in CHANNELS:
        raise ValueError(f"unknown telemetry channel {record.channel!r}")
    if record.time < state.last_time:
        raise ValueError("telemetry time went backwards")
    v = float(record.value)
    base = state.baselines.get(record.channel, Baseline())
    baselines = dict(state.baselines)
    if base.n < params.warmup:
        # Welford fit; r is left alone during warm-up
        n = base.n + 1
        delta = v - base.mean
        mean = base.mean + delta / n
        m2 = base.m2 + delta * (v - mean)
        if n == params.warmup:
            # switch to the exponentially weighted variance representation
            m2 = max(m2 / n, params.sigma_floor ** 2)
        baselines[record.channel] = Baseline(n, mean, m2)
        return RiskState(state.r, baselines, state.tier, record.time)
    sigma = max(math.sqrt(base.m2), params.sigma_floor)
    z = abs(v - base.mean) / sigma
    r = (1.0 - params.alpha) * state.r + params.alpha * anomaly(z)
    r = min(1.0, max(0.0, r))
    if state.tier is Tier.FULL:
        d = params.decay
        diff = v - base.mean
        mean = base.mean + d * diff
        var = (1.0 - d) * (base.m2 + d * diff * diff)
        baselines[record.channel] = Baseline(base.n + 1, mean, max(var, params.sigma_floor ** 2))
    return RiskState(r, baselines, classify_tier(r, params), record.time)


def relieve_risk(state: RiskState, params: RiskParams = DEFAULT_RISK) -> RiskState:
    """Successful re-authentication halves the score."""
    r = state.r / 2.0
    return replace(state, r=r, tier=classify_tier(r, params))


# ---------------------------------------------------------------------------
# authorization and segmentation

class Decision(str, enum.Enum):
    DENY = "deny"
    STEP_UP = "step_up"
    ALLOW = "allow"


DECISION_RANK = {Decision.DENY: 0, Decision.STEP_UP: 1, Decision.ALLOW: 2}


@dataclass(frozen=True)
class AccessRequest:
    device_id: str
    action: str
    sensitivity: str = "normal"


def authorize(request: AccessRequest, tier: Tier, policy_verdict: str) -> Decision:
    verdict = getattr(policy_verdict, "value", policy_verdict)
    if verdict == "deny" or tier is Tier.QUARANTINED:
        return Decision.DENY
    if tier is Tier.RESTRICTED:
        return Decision.STEP_UP
    if request.sensitivity == "sensitive" and verdict == "step_up":
        return Decision.STEP_UP
    return Decision.ALLOW


@dataclass(frozen=True)
class GatewayRule:
    src_segment: str
    dst_segment: str
    topic_prefix: str

    def __post_init__(self):
        if self.src_segment == QUARANTINE:
            raise RuleError("the quarantine segment has no outbound rules")


@dataclass(frozen=True)
class Message:
    src_segment: str
    dst_segment: str
    topic: str


class Route(str, enum.Enum):
    DELIVER = "deliver"
    BLOCKED = "blocked"


def matching_rule(message: Message, gateway_rules: Iterable[GatewayRule]) -> GatewayRule | None:
    for rule in gateway_rules:
        if (rule.src_segment == message.src_segment and rule.dst_segment == message.dst_segment
                and message.topic.startswith(rule.topic_prefix)):
            return rule
    return None


def enforce_segmentation(message: Message, gateway_rules: Iterable[GatewayRule]) -> Route:
    if message.src_segment == QUARANTINE:
        return Route.BLOCKED
    if message.src_segment == message.dst_segment:
        return Route.DELIVER
    if matching_rule(message, gateway_rules) is not None:
        return Route.DELIVER
    return Route.BLOCKED


def parse_gateway_rules(text: str) -> list[GatewayRule]:
    """``src>dst@prefix`` items separated by ``;``."""
    rules = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            route, prefix = item.split("@", 1)
            src, dst = route.split(">", 1)
        except ValueError:
            raise RuleError(f"bad gateway rule {item!r}; expected src>dst@prefix") from None
        rules.append(GatewayRule(src.strip(), dst.strip(), prefix.strip()))
    return rules


# ---------------------------------------------------------------------------
# the plane

class ZeroTrustPlane:
    """Single logical authority holding registries, nonces, segments and risk."""

    def __init__(self, key_registry: Mapping[str, SymmetricKey], golden_registry,
                 gateway_rules: Iterable[GatewayRule] = (), params: RiskParams = DEFAULT_RISK,
                 master: SymmetricKey | None = None, nonce_lifetime: float = 30.0):
        self.key_registry = key_registry
        self.golden = golden_registry
        self.rules = list(gateway_rules)
        self.params = params
        self.nonces = NonceLedger(lifetime=nonce_lifetime)
        self.master = master or crypto.derive_key(bytes(16), b"plane-master")
        self.segments: dict[str, SegmentAssignment] = {}
        self.risk: dict[str, RiskState] = {}
        self.quarantined: set[str] = set()
        self.session_keys: dict[str, SymmetricKey] = {}
        self._epochs: dict[str, int] = {}

    def issue_nonce(self, device_id: str, now: float = 0.0) -> bytes:
        return self.nonces.issue(device_id, now)

    def verify(self, evidence: AttestationEvidence, issued_nonce: bytes, now: float | None = None,
               require_measurement: bool = True) -> AttestResult:
        return verify_attestation(evidence, issued_nonce, self.golden, self.key_registry, self.nonces,
                                  now=now, require_measurement=require_measurement)

    def admit(self, device_id: str, result: AttestResult, device_class: str, compliant: bool,
              now: float) -> SegmentAssignment | Denied:
        outcome = admit_device(result, device_class, compliant, now)
        if isinstance(outcome, SegmentAssignment):
            self.segments[device_id] = outcome
            self.risk.setdefault(device_id, RiskState())
            self.rotate_session(device_id)
        return outcome

    def is_admitted(self, device_id: str) -> bool:
        return device_id in self.segments

    def segment_of(self, device_id: str) -> str | None:
        seg = self.segments.get(device_id)
        return seg.segment_id if seg else None

    def rotate_session(self, device_id: str) -> SymmetricKey:
        epoch = self._epochs.get(device_id, -1) + 1
        self._epochs[device_id] = epoch
        label = device_id.encode() + b"session"
        if epoch:
            label += b"/" + str(epoch).encode()
        key = crypto.derive_key(self.master, label)
        self.session_keys[device_id] = key
        return key

    def quarantine(self, device_id: str, now: float) -> str | None:
        """Move a device to the quarantine segment; sticky for the rest of the run."""
        previous = self.segment_of(device_id)
        self.quarantined.add(device_id)
        if previous is not None:
            self.segments[device_id] = SegmentAssignment(QUARANTINE, now)
        return previous

    def tier_of(self, device_id: str) -> Tier:
        if device_id in self.quarantined:
            return Tier.QUARANTINED
        state = self.risk.get(device_id)
        return state.tier if state else Tier.FULL

    def observe(self, record: TelemetryRecord) -> RiskState:
        state = update_risk(self.risk.get(record.device_id, RiskState()), record, self.params)
        self.risk[record.device_id] = state
        return state

    def route(self, src_segment: str, dst_segment: str, topic: str) -> tuple[Route, GatewayRule | None]:
        msg = Message(src_segment, dst_segment, topic)
        route = enforce_segmentation(msg, self.rules)
        rule = None
        if route is Route.DELIVER and src_segment != dst_segment:
            rule = matching_rule(msg, self.rules)
        return route, rule


def reauthenticate(device, plane: ZeroTrustPlane, now: float = 0.0,
                   require_measurement: bool = True) -> bool:
    """Fresh challenge; pass halves the risk score and rotates the session key."""
    from .device import DeviceError, generate_attestation

    nonce = plane.issue_nonce(device.device_id, now)
    try:
        evidence = generate_attestation(device, nonce)
    except DeviceError as exc:
        plane.nonces.consume(nonce, now)
        result = AttestResult(False, type(exc).__name__)
    else:
        try:
            result = plane.verify(evidence, nonce, now=now, require_measurement=require_measurement)
        except ZeroTrustError as exc:
            result = AttestResult(False, type(exc).__name__)
    if result.passed and device.device_id not in plane.quarantined:
        state = plane.risk.get(device.device_id, RiskState())
        plane.risk[device.device_id] = relieve_risk(state, plane.params)
        plane.rotate_session(device.device_id)
        return True
    plane.quarantine(device.device_id, now)
    return False


RISK_FIELDS = ("sim_time", "device_id", "r", "tier")


def risk_trace_csv(rows: Iterable[tuple[float, str, float, str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RISK_FIELDS)
    for t, dev, r, tier in rows:
        w.writerow((f"{t:.6f}", dev, f"{r:.6f}", tier))
    return buf.getvalue()
