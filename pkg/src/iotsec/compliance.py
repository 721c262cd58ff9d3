"""Weighted control checklist scored from the canonical event log.

Each predicate takes the list of log records (dicts with time, kind,
actor, outcome and optional detail) and returns True when the control
holds.  Predicates never look at simulator state.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Iterable, Sequence

CATEGORIES = ("identity_access", "data_protection", "attack_resistance", "update_management", "monitoring")
PQ_SIGNATURES = {"ml-dsa-44", "ml-dsa-65", "ml-dsa-87", "slh-dsa-128s", "falcon-512"}


@dataclass(frozen=True)
class Control:
    control_id: str
    category: str
    weight: int
    predicate: str
    text: str = ""


@dataclass(frozen=True)
class ComplianceResult:
    total: float
    per_category: dict
    passed: dict

    def rows(self, checklist: Sequence[Control]) -> list[tuple]:
        return [(c.control_id, c.category, c.weight, self.passed[c.control_id]) for c in checklist]


class ChecklistError(ValueError):
    pass


def _d(rec: dict) -> dict:
    return rec.get("detail", {})


def _by_kind(log: Iterable[dict], kind: str) -> list[dict]:
    return [r for r in log if r["kind"] == kind]


def _admitted_ids(log) -> set[str]:
    return {r["actor"] for r in log if r["kind"] == "admit" and r["outcome"] != "denied"}


# ---------------------------------------------------------------------------
# predicates

def unique_identities(log) -> bool:
    provisioned = [r["actor"] for r in _by_kind(log, "provision")]
    if not provisioned or len(provisioned) != len(set(provisioned)):
        return False
    return _admitted_ids(log) <= set(provisioned)


def hardware_keys(log) -> bool:
    recs = _by_kind(log, "provision")
    return bool(recs) and all(_d(r).get("key_store") == "hardware" for r in recs)


def replay_rejected(log) -> bool:
    seen: set[str] = set()
    for r in _by_kind(log, "attest"):
        d = _d(r)
        nonces = {d.get("nonce"), d.get("challenge")}
        if r["outcome"] == "pass" and nonces & seen:
            return False
        seen |= nonces
    return True


def invalid_evidence_denied(log) -> bool:
    verdicts = {}
    for r in _by_kind(log, "attest"):
        verdicts[_d(r)["attempt"]] = r["outcome"]
    for r in _by_kind(log, "admit"):
        attempt = _d(r).get("attempt")
        passed = verdicts.get(attempt) == "pass"
        if passed != (r["outcome"] != "denied"):
            return False
    return True


def continuous_auth_coverage(log) -> bool:
    admitted = _admitted_ids(log)
    scored = {r["actor"] for r in _by_kind(log, "risk")}
    return bool(admitted) and admitted <= scored


def operator_mfa(log) -> bool:
    recs = _by_kind(log, "operator_auth")
    return bool(recs) and all(r["outcome"] == "mfa_pass" for r in recs)


def authenticated_delivery(log) -> bool:
    sent = {}
    failed = set()
    for r in log:
        if r["kind"] == "publish" and r["outcome"] == "sent":
            sent[_d(r)["msg"]] = r["actor"]
        elif r["kind"] == "deliver" and r["outcome"] == "auth_failure":
            failed.add(_d(r)["msg"])
    for r in _by_kind(log, "deliver"):
        if r["outcome"] != "delivered":
            continue
        d = _d(r)
        if sent.get(d["msg"]) != d["src"] or d["msg"] in failed:
            return False
    return True


def tamper_rejected(log) -> bool:
    tampered = {_d(r)["msg"] for r in log if r["kind"] == "attack_step" and r["outcome"] == "tampered"}
    rejected = set()
    for r in _by_kind(log, "deliver"):
        msg = _d(r).get("msg")
        if msg in tampered:
            if r["outcome"] == "delivered":
                return False
            if r["outcome"] == "auth_failure":
                rejected.add(msg)
    # a tampered message that was never routed to anyone was not tested
    routed = {_d(r)["msg"] for r in _by_kind(log, "deliver") if _d(r).get("msg") in tampered
              and r["outcome"] not in ("blocked", "blocked_sdp")}
    return routed <= rejected


def ledger_verified(log) -> bool:
    checks = _by_kind(log, "ledger_verify")
    seals = _by_kind(log, "ledger_seal")
    return bool(checks) and bool(seals) and all(r["outcome"] == "ok" for r in checks)


def pq_signatures(log) -> bool:
    recs = _by_kind(log, "provision")
    return bool(recs) and all(_d(r).get("sig_alg") in PQ_SIGNATURES for r in recs)


def segment_rules(log) -> bool:
    for r in _by_kind(log, "deliver"):
        if r["outcome"] != "delivered":
            continue
        d = _d(r)
        if d["src_segment"] != d["dst_segment"] and not d.get("rule"):
            return False
    return True


def sdp_hiding(log) -> bool:
    admitted: set[str] = set()
    for r in log:
        kind = r["kind"]
        if kind == "admit" and r["outcome"] != "denied":
            admitted.add(r["actor"])
        elif kind == "deliver" and r["outcome"] == "delivered":
            d = _d(r)
            if d["src"] not in admitted or r["actor"] not in admitted:
                return False
            if d["src_segment"] == "quarantine":
                return False
    return True


def default_deny(log) -> bool:
    recs = _by_kind(log, "authorize")
    if not recs:
        return False
    for r in recs:
        d = _d(r)
        if d.get("policy") != "semantic":
            return False
        if not d.get("matched") and d.get("verdict") != "deny":
            return False
    return True


def authentic_firmware(log) -> bool:
    return all(_d(r).get("tag_ok") for r in _by_kind(log, "firmware_update") if r["outcome"] == "accepted")


def no_downgrade(log) -> bool:
    installed: dict[str, int] = {}
    for r in _by_kind(log, "provision"):
        installed[r["actor"]] = _d(r).get("version", 0)
    for r in _by_kind(log, "firmware_update"):
        if r["outcome"] != "accepted":
            continue
        d = _d(r)
        if d["offered"] < installed.get(r["actor"], 0):
            return False
        installed[r["actor"]] = d["offered"]
    return True


def staged_rollout(log) -> bool:
    waves = _by_kind(log, "rollout")
    if len({_d(r)["wave"] for r in waves}) < 2:
        return False
    first = min(waves, key=lambda r: (r["time"], _d(r)["wave"]))
    d = _d(first)
    return d["targets"] <= 0.25 * d["fleet"]


def ledger_anchored_updates(log) -> bool:
    accepted = [r for r in _by_kind(log, "firmware_update") if r["outcome"] == "accepted"]
    return bool(accepted) and all(_d(r).get("audit") for r in accepted)


def fleet_update_coverage(log) -> bool:
    releases = {_d(r)["version"] for r in _by_kind(log, "rollout")}
    if not releases:
        return False
    target = max(releases)
    updated = {r["actor"] for r in _by_kind(log, "firmware_update")
               if r["outcome"] == "accepted" and _d(r)["offered"] == target}
    provisioned = {r["actor"] for r in _by_kind(log, "provision")}
    return provisioned <= updated


def audit_trail_complete(log) -> bool:
    last = float("-inf")
    for r in log:
        if r["time"] < last:
            return False
        last = r["time"]
    launched = {r["actor"] for r in _by_kind(log, "attack") if r["outcome"] == "launched"}
    ended = {r["actor"] for r in _by_kind(log, "attack") if r["outcome"] in ("mitigated", "succeeded")}
    return launched <= ended


def anomaly_detection(log) -> bool:
    return any(r["kind"] == "attack_detected" for r in log)


PREDICATES: dict[str, Callable[[list], bool]] = {
    f.__name__: f for f in (
        unique_identities, hardware_keys, replay_rejected, invalid_evidence_denied,
        continuous_auth_coverage, operator_mfa, authenticated_delivery, tamper_rejected,
        ledger_verified, pq_signatures, segment_rules, sdp_hiding, default_deny,
        authentic_firmware, no_downgrade, staged_rollout, ledger_anchored_updates,
        fleet_update_coverage, audit_trail_complete, anomaly_detection,
    )
}


# ---------------------------------------------------------------------------

def parse_checklist(data: dict) -> list[Control]:
    controls = []
    ids = set()
    for item in data["controls"]:
        c = Control(item["id"], item["category"], int(item["weight"]), item["predicate"], item.get("text", ""))
        if c.category not in CATEGORIES:
            raise ChecklistError(f"{c.control_id}: unknown category {c.category!r}")
        if c.predicate not in PREDICATES:
            raise ChecklistError(f"{c.control_id}: unknown predicate {c.predicate!r}")
        if c.control_id in ids:
            raise ChecklistError(f"duplicate control id {c.control_id}")
        if c.weight < 0:
            raise ChecklistError(f"{c.control_id}: negative weight")
        ids.add(c.control_id)
        controls.append(c)
    if sum(c.weight for c in controls) != 100:
        raise ChecklistError("control weights must sum to 100")
    return controls


def load_checklist(path: str | None = "default") -> list[Control]:
    if path in (None, "default"):
        text = resources.files("iotsec.data").joinpath("checklist.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return parse_checklist(json.loads(text))


def compliance_score(log, checklist: Sequence[Control]) -> ComplianceResult:
    """Total = sum of weights of passing controls; categories normalised by their own weight."""
    log = getattr(log, "log", log)
    passed = {c.control_id: bool(PREDICATES[c.predicate](log)) for c in checklist}
    total = sum(c.weight for c in checklist if passed[c.control_id])
    cat_weight = defaultdict(int)
    cat_pass = defaultdict(int)
    for c in checklist:
        cat_weight[c.category] += c.weight
        if passed[c.control_id]:
            cat_pass[c.category] += c.weight
    per_category = {cat: (100.0 * cat_pass[cat] / cat_weight[cat]) for cat in CATEGORIES if cat_weight[cat]}
    return ComplianceResult(float(total), per_category, passed)


def compliance_csv(result: ComplianceResult, checklist: Sequence[Control]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("control_id", "category", "weight", "pass"))
    for row in result.rows(checklist):
        w.writerow((row[0], row[1], row[2], "true" if row[3] else "false"))
    return buf.getvalue()
