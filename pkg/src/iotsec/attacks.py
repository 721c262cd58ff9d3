"""Attack injection.

Each attack schedules concrete steps against the simulated world and then
reads the result back out of the world's state: whether a forged identity
got admitted, whether a message reached its victim, whether an old image
was installed.  Nothing here knows which defenses are switched on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

from .crypto import SymmetricKey
from .device import ZERO_DIGEST, forge_attestation
from .zerotrust import SegmentAssignment

KINDS = ("replay_attestation", "forged_attestation", "firmware_rollback", "lateral_movement",
         "data_tamper", "rogue_device")


class UnknownAttackKind(ValueError):
    pass


@dataclass(frozen=True)
class AttackScenario:
    attack_id: str
    kind: str
    start: float
    weight: int
    target: str = "sensor"
    variant: str = "default"
    params: dict = field(default_factory=dict)


def load_attack_suite(path: str | None = "default") -> list[AttackScenario]:
    if path == "none":
        return []
    if path in (None, "default"):
        text = resources.files("iotsec.data").joinpath("attacks.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    suite = []
    seen = set()
    for item in raw["attacks"]:
        sc = AttackScenario(item["id"], item["kind"], float(item["start"]), int(item["weight"]),
                            item.get("target", "sensor"), item.get("variant", "default"),
                            dict(item.get("params", {})))
        if sc.kind not in KINDS:
            raise UnknownAttackKind(sc.kind)
        if sc.attack_id in seen:
            raise ValueError(f"duplicate attack id {sc.attack_id}")
        if sc.weight < 0:
            raise ValueError(f"attack {sc.attack_id}: negative weight")
        seen.add(sc.attack_id)
        suite.append(sc)
    return suite


class Campaign:
    """Runs a suite against one world and collects the outcomes."""

    def __init__(self, world, suite: list[AttackScenario]):
        self.world = world
        self.suite = suite
        self.used: set[str] = set()
        self.rng = world.stream("attack-targets")
        self.outcomes: dict[str, str] = {}

    # -- target selection is independent of the defense configuration
    def pick(self, cls: str, pred=None) -> str:
        pool = [d for d in self.world.eligible(cls, self.used) if pred is None or pred(d)]
        if not pool:
            raise ValueError(f"no eligible {cls} left for attack targeting")
        choice = pool[self.rng.randrange(len(pool))]
        self.used.add(choice)
        return choice

    def inject_all(self) -> None:
        for sc in self.suite:
            inject_attack(self, sc)

    def conclude(self, sc: AttackScenario, succeeded: bool, target: str, **evidence) -> None:
        outcome = "succeeded" if succeeded else "mitigated"
        self.outcomes[sc.attack_id] = outcome
        self.world.record("attack", sc.attack_id, outcome, kind=sc.kind, variant=sc.variant,
                          weight=sc.weight, target=target, evidence=evidence)

    def launched(self, sc: AttackScenario, target: str) -> None:
        self.world.record("attack", sc.attack_id, "launched", kind=sc.kind, variant=sc.variant,
                          weight=sc.weight, target=target)

    def at(self, t: float, fn, *args) -> None:
        self.world.sim.schedule(t, "attack_step", fn, *args)

    def attacker_key(self, sc: AttackScenario) -> SymmetricKey:
        return SymmetricKey(self.world.stream(f"attack-key/{sc.attack_id}").randbytes(16))


def inject_attack(campaign: Campaign, sc: AttackScenario) -> None:
    handler = HANDLERS.get(sc.kind)
    if handler is None:
        raise UnknownAttackKind(sc.kind)
    handler(campaign, sc)


def resistance_score(outcomes: dict[str, str], suite: list[AttackScenario]) -> float:
    total = sum(sc.weight for sc in suite)
    if not total:
        return 100.0
    mitigated = sum(sc.weight for sc in suite if outcomes.get(sc.attack_id) == "mitigated")
    return 100.0 * mitigated / total


# ---------------------------------------------------------------------------
# attack kinds

def _replay(c: Campaign, sc: AttackScenario) -> None:
    w = c.world
    target = c.pick(sc.target)

    def step():
        c.launched(sc, target)
        evidence = w.captured.get(target)
        if evidence is None:
            c.conclude(sc, False, target, reason="nothing_captured")
            return
        nonce = w.plane.issue_nonce(target, w.now)
        res = w.attest(target, evidence, nonce, w.classes[target], w.compliant[target],
                       source="attacker", purpose="admission")
        c.conclude(sc, isinstance(res, SegmentAssignment), target, admission=_label(res))

    c.at(sc.start, step)


def _forge_and_attest(c: Campaign, sc: AttackScenario, target: str, key: SymmetricKey):
    w = c.world
    dev = w.devices[target]
    version = dev.current_version
    measurement = w.manufacturer.golden.expected(target, version) or ZERO_DIGEST
    if not w.t.tee:
        # the attacker replays what an unmeasured device reports
        measurement = ZERO_DIGEST
    nonce = w.plane.issue_nonce(target, w.now)
    evidence = forge_attestation(key, target, version, measurement, nonce)
    return w.attest(target, evidence, nonce, w.classes[target], w.compliant[target],
                    source="attacker", purpose="admission")


def _forged(c: Campaign, sc: AttackScenario) -> None:
    w = c.world
    target = c.pick(sc.target)
    fallback = c.attacker_key(sc)

    if sc.variant != "extracted_key":
        def step():
            c.launched(sc, target)
            res = _forge_and_attest(c, sc, target, fallback)
            c.conclude(sc, isinstance(res, SegmentAssignment), target, admission=_label(res))

        c.at(sc.start, step)
        return

    state = {}
    n_msgs = int(sc.params.get("messages", 3))
    gap = float(sc.params.get("gap", 5.0))

    def extract():
        c.launched(sc, target)
        key = w.devices[target].physical_extract()
        state["key"] = key
        w.record("attack_step", sc.attack_id, "key_extracted" if key is not None else "extraction_failed",
                 target=target)

    def clone_admission():
        key = state.get("key") or fallback
        res = _forge_and_attest(c, sc, target, key)
        state["admitted"] = isinstance(res, SegmentAssignment)
        state["delivered"] = 0
        if not state["admitted"]:
            c.conclude(sc, False, target, admission=_label(res))
            return
        for i in range(n_msgs):
            c.at(w.now + gap * (i + 1), clone_publish)
        c.at(w.now + gap * (n_msgs + 1), finish)

    def clone_publish():
        gw = w.home.get(target)
        payload = w.stream(f"clone/{sc.attack_id}/{w.now}").randbytes(w.cfg.payload_bytes)
        out = w.publish(target, f"telemetry/{gw}/{target}", payload, "report", origin="clone")
        state["delivered"] += out.delivered

    def finish():
        c.conclude(sc, state["delivered"] > 0, target, admission="segment", delivered=state["delivered"])

    c.at(sc.start, extract)
    c.at(sc.start + gap, clone_admission)


def _rogue(c: Campaign, sc: AttackScenario) -> None:
    w = c.world
    gw = c.pick("gateway")
    rogue = f"rogue-{sc.attack_id}"
    topic = f"telemetry/{gw}/{rogue}"
    n_msgs = int(sc.params.get("messages", 3))
    state = {"delivered": 0}

    def send(first: bool):
        if first:
            c.launched(sc, gw)
            w.subscribers[topic] = [gw]
        payload = w.stream(f"rogue/{sc.attack_id}/{w.now}").randbytes(w.cfg.payload_bytes)
        state["delivered"] += w.publish(rogue, topic, payload, "report", origin="rogue").delivered

    for i in range(n_msgs):
        c.at(sc.start + 2.0 * i, send, i == 0)
    c.at(sc.start + 2.0 * n_msgs, lambda: c.conclude(sc, state["delivered"] > 0, gw,
                                                      delivered=state["delivered"]))


def _tamper(c: Campaign, sc: AttackScenario) -> None:
    w = c.world
    target = c.pick(sc.target)

    def arm():
        c.launched(sc, target)
        w.tamper_next[target] = sc.attack_id

    def finish():
        res = w.tamper_results.get(sc.attack_id)
        if res is None:
            w.tamper_next.pop(target, None)
            c.conclude(sc, False, target, reason="no_traffic")
            return
        msg_id, delivered = res
        c.conclude(sc, delivered > 0, target, msg=msg_id, delivered=delivered)

    c.at(sc.start, arm)
    c.at(sc.start + w.cfg.telemetry_period + 1.0, finish)


def _rollback(c: Campaign, sc: AttackScenario) -> None:
    w = c.world
    target = c.pick(sc.target)
    old = int(sc.params.get("version", w.cfg.initial_version))

    def step():
        c.launched(sc, target)
        dev = w.devices[target]
        before = dev.current_version
        image = w.manufacturer.release(w.classes[target], old)  # genuine but outdated release
        outcome = w.offer_update(target, image, source="attacker")
        downgraded = outcome == "accepted" and dev.current_version < before
        c.conclude(sc, downgraded, target, result=outcome, before=before, after=dev.current_version)

    c.at(sc.start, step)


def _lateral(c: Campaign, sc: AttackScenario) -> None:
    variant = sc.variant
    if variant == "actuator_hijack":
        _hijack(c, sc)
    elif variant == "noisy_scan":
        _scan(c, sc)
    elif variant == "stealthy_insider":
        _insider(c, sc)
    else:
        raise UnknownAttackKind(f"lateral_movement/{variant}")


def _send_commands(c: Campaign, sc: AttackScenario, src: str, victim: str, times, label_target: str):
    w = c.world
    state = {"delivered": 0}

    def send(first: bool):
        if first:
            c.launched(sc, label_target)
        payload = w.stream(f"cmd/{sc.attack_id}/{w.now}").randbytes(16)
        state["delivered"] += w.publish(src, f"command/{victim}", payload, "actuate", origin="attacker").delivered

    for i, t in enumerate(times):
        c.at(t, send, i == 0)
    c.at(times[-1] + 1.0, lambda: c.conclude(sc, state["delivered"] > 0, label_target, victim=victim,
                                             delivered=state["delivered"]))


def _hijack(c: Campaign, sc: AttackScenario) -> None:
    src = c.pick(sc.target)
    victim = c.pick("actuator")
    n = int(sc.params.get("messages", 3))
    _send_commands(c, sc, src, victim, [sc.start + 2.0 * i for i in range(n)], src)


def _insider(c: Campaign, sc: AttackScenario) -> None:
    w = c.world
    gw = c.pick("gateway", lambda g: any(w.compliant[a] and a not in w.faulted and a not in c.used
                                         for a in w.actuators_of.get(g, ())))
    victim = next(a for a in w.actuators_of[gw] if w.compliant[a] and a not in c.used)
    c.used.add(victim)
    n = int(sc.params.get("messages", 3))
    gap = float(sc.params.get("gap", 10.0))
    _send_commands(c, sc, gw, victim, [sc.start + gap * i for i in range(n)], gw)


def _scan(c: Campaign, sc: AttackScenario) -> None:
    w = c.world
    src = c.pick(sc.target)
    probes = int(sc.params.get("probes", 20))
    need = int(sc.params.get("success_threshold", 15))
    rate_boost = tuple(sc.params.get("behaviour", (1.0, 2000.0, 0.5)))
    pool = [d for d in w.devices if w.classes[d] != w.classes[src] and w.compliant[d]
            and d not in w.faulted and d not in c.used]
    victims = [pool[c.rng.randrange(len(pool))] for _ in range(probes)]
    period = w.cfg.telemetry_period
    phase = w.phase[src]
    # begin just after one of the source's own telemetry samples
    k = max(0, math.ceil((sc.start - phase) / period))
    t0 = phase + k * period + 0.5
    state = {"delivered": 0}

    def probe(i: int):
        if i == 0:
            c.launched(sc, src)
            w.behaviour[src] = (t0, t0 + probes, rate_boost)
        payload = w.stream(f"scan/{sc.attack_id}/{i}").randbytes(16)
        state["delivered"] += w.publish(src, f"state/{victims[i]}", payload, "read", origin="attacker").delivered

    for i in range(probes):
        c.at(t0 + i, probe, i)
    c.at(t0 + probes + 0.5, lambda: c.conclude(sc, state["delivered"] >= need, src,
                                               delivered=state["delivered"], probes=probes))


def _label(res) -> str:
    return "segment" if isinstance(res, SegmentAssignment) else "denied"


HANDLERS = {
    "replay_attestation": _replay,
    "forged_attestation": _forged,
    "rogue_device": _rogue,
    "data_tamper": _tamper,
    "firmware_rollback": _rollback,
    "lateral_movement": _lateral,
}
