"""Simulated deployment: fleet, control plane, broker, middleware and ledger.

The world owns the event loop and records every security-relevant step
in the canonical log.  Defense toggles switch whole mechanisms on or off;
the attestation gate (tag + nonce check) is always present.
"""

from __future__ import annotations

import random
import struct
from collections import defaultdict
from dataclasses import dataclass

from . import crypto
from .config import ScenarioConfig, Toggles
from .costs import CostLedger
from .crypto import AuthFailure, SymmetricKey
from .device import (BadSignature, Device, DeviceError, InvalidLifecycle, Lifecycle, Manufacturer,
                     RollbackRejected, TamperedDevice, apply_firmware_update, generate_attestation,
                     provision_device, secure_boot, tamper_event)
from .engine import Simulator
from .ledger import AuditLedger, EventKind, make_event, verify_chain
from .semantic import Annotator, ContextSnapshot, Reading, TripleStore, evaluate_policy, load_policy, request_triples
from .zerotrust import (QUARANTINE, AccessRequest, AttestResult, Decision, Denied, ReplayedNonce, Route,
                        SegmentAssignment, TelemetryRecord, Tier, UnknownDevice, ZeroTrustPlane, authorize,
                        matching_rule, parse_gateway_rules, reauthenticate)

ROLE = {"sensor": "Sensor", "actuator": "Actuator", "gateway": "Gateway"}
REQUEST_KIND = {"report": "TelemetryRequest", "actuate": "ActuationRequest", "read": "ReadRequest"}
SENSITIVITY = {"report": "normal", "read": "normal", "actuate": "sensitive"}
SIG_ALG = "mac-ascon-hash256"

# behaviour baselines per class: (msg_rate_hz, payload_bytes, duty_cycle)
BASELINE = {
    "sensor": (0.1, 64.0, 0.05),
    "actuator": (0.02, 32.0, 0.10),
    "gateway": (0.5, 512.0, 0.40),
}
NOISE = 0.05


@dataclass
class PublishOutcome:
    msg_id: int
    status: str
    delivered: int = 0


class World:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.t: Toggles = cfg.toggles
        self.sim = Simulator(cfg.seed)
        self.costs = CostLedger(cfg.costs)
        master = SymmetricKey(crypto.hash(b"fleet-master/" + str(cfg.seed).encode())[:16])
        self.manufacturer = Manufacturer(master)
        self.ontology, self.rules = load_policy(cfg.policy)
        gw_rules = parse_gateway_rules(cfg.gateway_rules) if self.t.microsegmentation else []
        plane_master = crypto.derive_key(master, b"plane")
        self.plane = ZeroTrustPlane(self.manufacturer.key_registry, self.manufacturer.golden, gw_rules,
                                    cfg.risk, plane_master, cfg.nonce_lifetime)
        self.all_rules = parse_gateway_rules(cfg.gateway_rules)
        self.ledger = AuditLedger(cfg.ledger_params) if self.t.ledger else None
        self.devices: dict[str, Device] = {}
        self.classes: dict[str, str] = {}
        self.compliant: dict[str, bool] = {}
        self.home: dict[str, str] = {}
        self.actuators_of: dict[str, list[str]] = defaultdict(list)
        self.faulted: list[str] = []
        self.subscribers: dict[str, list[str]] = {}
        self.offline: set[str] = set()
        self.captured: dict[str, object] = {}
        self.behaviour: dict[str, tuple[float, float, tuple]] = {}
        self.tamper_next: dict[str, str] = {}
        self.tamper_results: dict[str, tuple[int, int]] = {}
        self.phase: dict[str, float] = {}
        self.threat_level = "low"
        self.store = TripleStore()
        self.annotator = Annotator(self.ontology, self.classes)
        self.risk_trace: list[tuple[float, str, float, str]] = []
        self.recorded_version: dict[str, int] = {}
        self._audit_bodies: dict[int, tuple[str, dict]] = {}
        self._msg = 0
        self._attempt = 0
        self._req = 0
        self._nonces: dict[str, crypto.NonceCounter] = {}
        self._noise: dict[str, random.Random] = {}
        self._payload_rng: dict[str, random.Random] = {}
        self.release_version = cfg.rollout_version

    # -- randomness: named sub-streams of the run seed, independent of toggles
    def stream(self, name: str) -> random.Random:
        return random.Random(f"{self.cfg.seed}/{name}")

    @property
    def now(self) -> float:
        return self.sim.now

    def record(self, kind, actor, outcome, /, **detail):
        return self.sim.record(kind, actor, outcome, **detail)

    # ------------------------------------------------------------------ fleet
    def build_fleet(self) -> None:
        cfg = self.cfg
        n = cfg.fleet_count
        rng = self.stream("fleet")
        mix = dict(cfg.class_mix)
        counts = {c: int(round(n * mix.get(c, 0.0))) for c in ("sensor", "actuator")}
        counts["actuator"] = min(counts["actuator"], n - counts["sensor"])
        counts["gateway"] = n - counts["sensor"] - counts["actuator"]
        classes = ["gateway"] * counts["gateway"] + ["sensor"] * counts["sensor"] + ["actuator"] * counts["actuator"]
        rng.shuffle(classes)
        ids = [f"dev-{i:05d}" for i in range(1, n + 1)]
        gateways = [d for d, c in zip(ids, classes) if c == "gateway"]
        others = [d for d, c in zip(ids, classes) if c != "gateway"]
        k_nc = int(round(cfg.noncompliant_fraction * n))
        noncompliant = set(rng.sample(others, min(k_nc, len(others))))
        sensors = [d for d, c in zip(ids, classes) if c == "sensor"]
        pool = [d for d in sensors if d not in noncompliant] or others
        faults = rng.sample(pool, min(cfg.boot_faults, len(pool)))
        releases = {}
        for i, (dev_id, cls) in enumerate(zip(ids, classes)):
            if cls not in releases:
                releases[cls] = self.manufacturer.release(cls, cfg.initial_version)
            dev = provision_device(self.manufacturer, dev_id, cls, releases[cls],
                                   stages=cfg.boot_stages, tee=self.t.tee)
            dev.on_audit = self._device_audit
            self.devices[dev_id] = dev
            self.classes[dev_id] = cls
            self.compliant[dev_id] = dev_id not in noncompliant
            if cls != "gateway" and gateways:
                gw = gateways[others.index(dev_id) % len(gateways)]
                self.home[dev_id] = gw
                self.subscribers[f"telemetry/{gw}/{dev_id}"] = [gw]
                if cls == "actuator":
                    self.actuators_of[gw].append(dev_id)
            self.subscribers[f"command/{dev_id}"] = [dev_id]
            self.subscribers[f"state/{dev_id}"] = [dev_id]
            self._nonces[dev_id] = crypto.NonceCounter(dev_id.encode(), 0)
            self._noise[dev_id] = self.stream(f"noise/{dev_id}")
            self._payload_rng[dev_id] = self.stream(f"payload/{dev_id}")
            self.record("provision", dev_id, "ok", **{"class": cls, "key_store": dev.key_store,
                        "sig_alg": SIG_ALG, "compliant": self.compliant[dev_id],
                        "version": dev.current_version})
        for dev_id in faults:
            dev = self.devices[dev_id]
            dev.corrupt_stage(min(1, len(dev.stages) - 1))
            self.faulted.append(dev_id)
            self.record("fault_injected", dev_id, "boot_stage_corrupted")

    def eligible(self, cls: str, exclude: set[str]) -> list[str]:
        return [d for d in self.devices if self.classes[d] == cls and self.compliant[d]
                and d not in self.faulted and d not in exclude]

    # -------------------------------------------------------------- lifecycle
    def schedule_lifecycle(self) -> None:
        cfg = self.cfg
        sim = self.sim
        phase_rng = self.stream("phase")
        for i, dev_id in enumerate(self.devices):
            sim.schedule(0.001 * (i + 1), "attest_challenge", self.admit_flow, dev_id)
        for dev_id in self.devices:
            start = 1.0 + phase_rng.uniform(0.0, cfg.telemetry_period)
            self.phase[dev_id] = start
            sim.schedule(start, "telemetry", self.tick, dev_id)
        for gw in sorted(self.actuators_of):
            start = 5.0 + phase_rng.uniform(0.0, cfg.command_period)
            sim.schedule(start, "publish", self.command_tick, gw)
        for t, level in cfg.threat_schedule:
            if t <= cfg.duration:
                sim.schedule(t, "context_change", self.context_change, level)
        if cfg.rollout_at <= cfg.duration:
            sim.schedule(cfg.rollout_at, "firmware_rollout", self.rollout_plan)
        if self.ledger is not None:
            tb = cfg.ledger_params.block_interval
            k = 1
            while k * tb <= cfg.duration:
                sim.schedule(k * tb, "seal_block", self.seal)
                k += 1

    def admit_flow(self, dev_id: str) -> None:
        dev = self.devices[dev_id]
        report = secure_boot(dev, self.manufacturer.golden)
        if report.measured:
            self.costs.account(self.now, dev_id, "tee_init")
        self.record("boot", dev_id, dev.lifecycle.value, measured=report.measured, match=report.match)
        nonce = self.plane.issue_nonce(dev_id, self.now)
        evidence = generate_attestation(dev, nonce)
        self.captured[dev_id] = evidence  # passive eavesdropper keeps a copy
        self.attest(dev_id, evidence, nonce, self.classes[dev_id], self.compliant[dev_id],
                    source="device", purpose="admission")

    def attest(self, claimed_id: str, evidence, nonce: bytes, cls: str, compliant: bool,
               source: str, purpose: str) -> SegmentAssignment | Denied:
        self._attempt += 1
        attempt = self._attempt
        try:
            result = self.plane.verify(evidence, nonce, now=self.now, require_measurement=self.t.tee)
            outcome = "pass" if result.passed else result.reason
        except ReplayedNonce:
            result, outcome = AttestResult(False, "replayed_nonce"), "replayed_nonce"
        except UnknownDevice:
            result, outcome = AttestResult(False, "unknown_device"), "unknown_device"
        self.record("attest", claimed_id, outcome, nonce=evidence.nonce.hex(), challenge=nonce.hex(),
                    source=source, purpose=purpose, attempt=attempt)
        admitted = self.plane.admit(claimed_id, result, cls, compliant, self.now)
        if isinstance(admitted, SegmentAssignment):
            rec = self.record("admit", claimed_id, admitted.segment_id, attempt=attempt)
            self.audit(EventKind.ADMISSION, claimed_id, {"segment": admitted.segment_id,
                       "version": evidence.firmware_version}, rec)
        else:
            rec = self.record("admit", claimed_id, "denied", attempt=attempt, reason=admitted.reason)
            self.audit(EventKind.DENIAL, claimed_id, {"reason": admitted.reason}, rec)
        return admitted

    # -------------------------------------------------------------- telemetry
    def behaviour_values(self, dev_id: str) -> tuple[float, float, float]:
        base = BASELINE[self.classes.get(dev_id, "sensor")]
        rng = self._noise[dev_id]
        vals = [b * (1.0 + NOISE * rng.gauss(0.0, 1.0)) for b in base]
        over = self.behaviour.get(dev_id)
        if over is not None:
            start, end, add = over
            if start <= self.now <= end:
                vals = [v + a for v, a in zip(vals, add)]
        return tuple(vals)

    def tick(self, dev_id: str) -> None:
        if dev_id in self.offline:
            return
        dev = self.devices[dev_id]
        if dev.lifecycle is Lifecycle.TAMPERED_ZEROIZED:
            return
        values = self.behaviour_values(dev_id)
        payload = self._payload_rng[dev_id].randbytes(self.cfg.payload_bytes)
        if self.t.continuous_auth and self.plane.is_admitted(dev_id) and dev_id not in self.plane.quarantined:
            self.evaluate_risk(dev_id, values)
        if self.classes[dev_id] == "sensor" and dev_id in self.home:
            self.publish(dev_id, f"telemetry/{self.home[dev_id]}/{dev_id}", payload, "report",
                         reading=values[1])
        self.sim.schedule(self.now + self.cfg.telemetry_period, "telemetry", self.tick, dev_id)

    def evaluate_risk(self, dev_id: str, values) -> None:
        state = None
        for channel, value in zip(("msg_rate_hz", "payload_bytes", "duty_cycle"), values):
            state = self.plane.observe(TelemetryRecord(dev_id, self.now, channel, value))
        self.record("risk", dev_id, state.tier.value, r=round(state.r, 6))
        self.risk_trace.append((self.now, dev_id, state.r, state.tier.value))
        if state.tier is Tier.QUARANTINED:
            rec = self.record("attack_detected", dev_id, "quarantine", r=round(state.r, 6))
            self.audit(EventKind.ATTACK_DETECTED, dev_id, {"r": round(state.r, 6)}, rec)
            self.quarantine(dev_id, "risk")

    def quarantine(self, dev_id: str, reason: str) -> None:
        if dev_id in self.plane.quarantined:
            return
        previous = self.plane.quarantine(dev_id, self.now)
        rec = self.record("segment_change", dev_id, QUARANTINE, previous=previous, reason=reason)
        self.audit(EventKind.SEGMENT_CHANGE, dev_id, {"from": previous, "to": QUARANTINE}, rec)

    def command_tick(self, gw: str) -> None:
        if gw not in self.offline and self.devices[gw].lifecycle is not Lifecycle.TAMPERED_ZEROIZED:
            for act in self.actuators_of[gw]:
                payload = self._payload_rng[gw].randbytes(16)
                self.publish(gw, f"command/{act}", payload, "actuate")
        self.sim.schedule(self.now + self.cfg.command_period, "publish", self.command_tick, gw)

    def context_change(self, level: str) -> None:
        self.threat_level = level
        self.record("context_change", "harness", level)

    # ---------------------------------------------------------------- broker
    def context(self, dev_id: str) -> ContextSnapshot:
        return ContextSnapshot(self.now, self.threat_level, self.cfg.location_zone,
                               self.plane.tier_of(dev_id).value)

    def host_of(self, dev_id: str) -> str:
        return self.home.get(dev_id, dev_id)

    def decide(self, src: str, action: str, msg_id: int, origin: str) -> Decision:
        sensitivity = SENSITIVITY[action]
        tier = self.plane.tier_of(src)
        if self.t.semantic_policy:
            self._req += 1
            triples = request_triples(f"req:{self._req}", REQUEST_KIND[action], src,
                                      ROLE.get(self.classes.get(src, ""), "Unknown"))
            verdict = evaluate_policy(self.rules, triples, self.context(src), self.ontology)
            self.costs.account(self.now, self.host_of(src), "semantic_proc")
            effect, matched, policy = verdict.effect, list(verdict.matched_rule_ids), "semantic"
        else:
            effect, matched, policy = "allow", [], "none"
        decision = authorize(AccessRequest(src, action, sensitivity), tier, effect)
        rec = self.record("authorize", src, decision.value, msg=msg_id, action=action,
                          sensitivity=sensitivity, verdict=effect, matched=matched, policy=policy,
                          origin=origin)
        if decision is Decision.STEP_UP:
            passed = self.step_up(src)
            decision = Decision.ALLOW if passed else Decision.DENY
        if decision is Decision.DENY or sensitivity == "sensitive":
            self.audit(EventKind.VERDICT, src, {"msg": msg_id, "action": action,
                       "decision": decision.value}, rec)
        return decision

    def step_up(self, dev_id: str) -> bool:
        dev = self.devices.get(dev_id)
        self._attempt += 1
        if dev is None:
            ok = False
        else:
            ok = reauthenticate(dev, self.plane, self.now, require_measurement=self.t.tee)
        self.record("reauth", dev_id, "pass" if ok else "fail", attempt=self._attempt)
        if not ok:
            self.quarantine_after_reauth(dev_id)
        return ok

    def quarantine_after_reauth(self, dev_id: str) -> None:
        # reauthenticate already moved the device; log the change once
        rec = self.record("segment_change", dev_id, QUARANTINE, previous=None, reason="reauth_failed")
        self.audit(EventKind.SEGMENT_CHANGE, dev_id, {"to": QUARANTINE, "reason": "reauth"}, rec)

    def publish(self, src: str, topic: str, payload: bytes, action: str, origin: str = "device",
                reading: float | None = None) -> PublishOutcome:
        self._msg += 1
        msg_id = self._msg
        if not self.plane.is_admitted(src):
            self.record("publish", src, "dropped_sdp", msg=msg_id, topic=topic, origin=origin)
            return PublishOutcome(msg_id, "dropped_sdp")
        decision = self.decide(src, action, msg_id, origin)
        if decision is not Decision.ALLOW:
            self.record("publish", src, "denied", msg=msg_id, topic=topic, origin=origin)
            return PublishOutcome(msg_id, "denied")
        key = self.plane.session_keys[src]
        counter = self._nonces.get(src)
        if counter is None:
            counter = self._nonces[src] = crypto.NonceCounter(src.encode(), 0)
        ad = topic.encode()
        sealed = crypto.aead_encrypt(key, counter.next(), ad, payload)
        ciphertext = sealed.ciphertext
        tampered_by = self.tamper_next.pop(src, None)
        if tampered_by is not None:
            bit = self.stream(f"tamper/{msg_id}").randrange(max(1, len(ciphertext)) * 8)
            buf = bytearray(ciphertext)
            if buf:
                buf[bit // 8] ^= 1 << (bit % 8)
            ciphertext = bytes(buf)
            self.record("attack_step", tampered_by, "tampered", msg=msg_id, bit=bit)
        self.record("publish", src, "sent", msg=msg_id, topic=topic, origin=origin)
        src_seg = self.plane.segment_of(src)
        delivered = 0
        for dst in self.subscribers.get(topic, ()):
            if not self.plane.is_admitted(dst) or dst in self.offline:
                self.record("deliver", dst, "blocked_sdp", msg=msg_id, src=src)
                continue
            dst_seg = self.plane.segment_of(dst)
            rule = matching_rule_for(self.all_rules, src_seg, dst_seg, topic)
            if self.t.microsegmentation:
                route, rule = self.plane.route(src_seg, dst_seg, topic)
                if route is Route.BLOCKED:
                    self.record("deliver", dst, "blocked", msg=msg_id, src=src, src_segment=src_seg,
                                dst_segment=dst_seg)
                    continue
            self.costs.account(self.now, src, "secure_comm")
            self.costs.account(self.now, dst, "secure_comm")
            latency = self.cfg.costs["secure_comm"].time_ms
            try:
                crypto.aead_decrypt(key, sealed.nonce, ad, ciphertext, sealed.tag)
            except AuthFailure:
                self.record("deliver", dst, "auth_failure", msg=msg_id, src=src, src_segment=src_seg,
                            dst_segment=dst_seg)
                continue
            annotated = False
            if (self.t.semantic_policy and reading is not None and self.classes.get(dst) == "gateway"):
                self.store.extend(self.annotator.annotate(Reading(src, "payload_bytes", reading, self.now)))
                self.costs.account(self.now, dst, "semantic_proc")
                latency += self.cfg.costs["semantic_proc"].time_ms
                annotated = True
            delivered += 1
            self.record("deliver", dst, "delivered", msg=msg_id, src=src, src_segment=src_seg,
                        dst_segment=dst_seg, rule=None if rule is None else rule_label(rule),
                        annotated=annotated, completed_at=round(self.now + latency / 1000.0, 6))
        if tampered_by is not None:
            self.tamper_results[tampered_by] = (msg_id, delivered)
        return PublishOutcome(msg_id, "sent", delivered)

    # -------------------------------------------------------------- firmware
    def rollout_plan(self) -> None:
        targets = list(self.devices)
        waves = self.cfg.rollout_waves
        size = -(-len(targets) // waves)
        for w in range(waves):
            chunk = targets[w * size:(w + 1) * size]
            if chunk:
                at = self.now + w * self.cfg.rollout_spacing
                self.sim.schedule(at, "firmware_rollout", self.rollout_wave, w, chunk)

    def rollout_wave(self, wave: int, targets: list[str]) -> None:
        self.record("rollout", "update-service", "wave", wave=wave, version=self.release_version,
                    targets=len(targets), fleet=len(self.devices))
        for dev_id in targets:
            image = self.manufacturer.release(self.classes[dev_id], self.release_version)
            self.offer_update(dev_id, image, source="update-service", wave=wave)

    def offer_update(self, dev_id: str, image, source: str, wave: int | None = None) -> str:
        dev = self.devices[dev_id]
        before = dev.current_version
        detail = dict(previous=before, offered=image.version, source=source)
        if wave is not None:
            detail["wave"] = wave
        if not self.plane.is_admitted(dev_id) or dev.lifecycle is not Lifecycle.OPERATIONAL \
                or dev_id in self.offline:
            self.record("firmware_update", dev_id, "unreachable", **detail)
            return "unreachable"
        if self.ledger is not None:
            floor = self.recorded_version.get(dev_id)
            if floor is not None and image.version < floor:
                rec = self.record("firmware_update", dev_id, "blocked_by_ledger", floor=floor, **detail)
                self.audit(EventKind.FIRMWARE_UPDATE, dev_id, {"offered": image.version,
                           "result": "blocked"}, rec)
                return "blocked_by_ledger"
        try:
            apply_firmware_update(dev, image, self.manufacturer)
            outcome = "accepted"
        except RollbackRejected:
            outcome = "rollback_rejected"
        except BadSignature:
            outcome = "bad_signature"
        except (InvalidLifecycle, TamperedDevice):
            outcome = "unreachable"
        rec = self.record("firmware_update", dev_id, outcome, version=dev.current_version,
                          tag_ok=outcome != "bad_signature", **detail)
        if outcome != "unreachable":
            self.audit(EventKind.FIRMWARE_UPDATE, dev_id, {"from": before, "to": dev.current_version,
                       "result": outcome}, rec)
        return outcome

    # ---------------------------------------------------------------- ledger
    def audit(self, kind: EventKind, dev_id: str, body: dict, rec: dict | None = None) -> None:
        if self.ledger is None:
            return
        body = dict(body, device=dev_id, kind=int(kind))
        event = make_event(self.now, kind, dev_id, body)
        self.ledger.append_event(event)
        self._audit_bodies[id(event)] = (dev_id, body)
        self.costs.account(self.now, dev_id, "blockchain_op")
        if rec is not None:
            rec.setdefault("detail", {})["audit"] = True

    def _device_audit(self, kind: str, device: Device, detail: dict) -> None:
        if kind == "tamper":
            rec = self.record("tamper", device.device_id, "zeroized")
            self.audit(EventKind.TAMPER, device.device_id, {"lifecycle": device.lifecycle.value}, rec)

    def seal(self) -> None:
        block = self.ledger.seal_block(self.now)
        if block is None:
            return
        for e in block.events:
            dev_id, body = self._audit_bodies.pop(id(e))
            if e.kind is EventKind.ADMISSION:
                version = body["version"]
            elif e.kind is EventKind.FIRMWARE_UPDATE and body.get("result") == "accepted":
                version = body["to"]
            else:
                continue
            self.recorded_version[dev_id] = max(self.recorded_version.get(dev_id, 0), version)
        self.record("ledger_seal", "ledger", "sealed", index=block.index, events=len(block.events))

    def finish(self) -> None:
        if self.ledger is not None:
            verdict = verify_chain(self.ledger.blocks)
            self.record("ledger_verify", "ledger", "ok" if verdict.ok else "bad",
                        blocks=len(self.ledger.blocks), first_bad=verdict.first_bad_index,
                        pending=self.ledger.pending)


def rule_label(rule) -> str:
    return f"{rule.src_segment}>{rule.dst_segment}@{rule.topic_prefix}"


def matching_rule_for(rules, src_seg, dst_seg, topic):
    if src_seg is None or dst_seg is None or src_seg == dst_seg:
        return None
    from .zerotrust import Message
    return matching_rule(Message(src_seg, dst_seg, topic), rules)
