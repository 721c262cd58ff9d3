import copy
import json

import pytest

from iotsec.compliance import (CATEGORIES, PREDICATES, ChecklistError, compliance_csv, compliance_score,
                               load_checklist, parse_checklist)

CHECKLIST = load_checklist("default")


def rec(t, kind, actor, outcome, **detail):
    r = {"time": t, "kind": kind, "actor": actor, "outcome": outcome}
    if detail:
        r["detail"] = detail
    return r


def all_pass_log():
    log = []
    for i, d in enumerate(("d1", "d2", "d3", "d4")):
        log.append(rec(0.0, "provision", d, "ok", key_store="hardware", sig_alg="ml-dsa-44", version=1))
    log.append(rec(0.1, "operator_auth", "op", "mfa_pass"))
    for i, d in enumerate(("d1", "d2", "d3", "d4")):
        log.append(rec(0.2, "attest", d, "pass", nonce=f"n{i}", challenge=f"n{i}", attempt=i + 1))
        log.append(rec(0.2, "admit", d, "sensor:compliant", attempt=i + 1))
    for d in ("d1", "d2", "d3", "d4"):
        log.append(rec(0.3, "risk", d, "Full", r=0.0))
    log.append(rec(0.4, "attest", "x", "bad_tag", nonce="nx", challenge="nx", attempt=5))
    log.append(rec(0.4, "admit", "x", "denied", attempt=5))
    log.append(rec(1.0, "authorize", "d1", "allow", policy="semantic", matched=["r1"], verdict="allow"))
    log.append(rec(1.0, "publish", "d1", "sent", msg=1))
    log.append(rec(1.0, "deliver", "d2", "delivered", msg=1, src="d1", src_segment="a", dst_segment="b",
                   rule="a>b@t/"))
    log.append(rec(2.0, "attack", "A1", "launched"))
    log.append(rec(2.0, "publish", "d1", "sent", msg=2))
    log.append(rec(2.0, "attack_step", "A1", "tampered", msg=2))
    log.append(rec(2.0, "deliver", "d2", "auth_failure", msg=2, src="d1"))
    log.append(rec(2.1, "attack_detected", "d3", "quarantine"))
    log.append(rec(2.2, "attack", "A1", "mitigated"))
    log.append(rec(3.0, "rollout", "svc", "wave", wave=0, targets=1, fleet=4, version=2))
    log.append(rec(3.0, "firmware_update", "d1", "accepted", offered=2, version=2, tag_ok=True, audit=True))
    log.append(rec(4.0, "rollout", "svc", "wave", wave=1, targets=3, fleet=4, version=2))
    for d in ("d2", "d3", "d4"):
        log.append(rec(4.0, "firmware_update", d, "accepted", offered=2, version=2, tag_ok=True, audit=True))
    log.append(rec(5.0, "ledger_seal", "ledger", "sealed"))
    log.append(rec(5.0, "ledger_verify", "ledger", "ok"))
    return log


def test_default_checklist_shape():
    assert len(CHECKLIST) == 20
    assert sum(c.weight for c in CHECKLIST) == 100
    assert {c.category for c in CHECKLIST} == set(CATEGORIES)


def test_synthetic_all_pass_scores_100():
    res = compliance_score(all_pass_log(), CHECKLIST)
    assert res.total == 100.0
    assert all(res.passed.values())
    assert set(res.per_category.values()) == {100.0}


@pytest.mark.parametrize("predicate", sorted(PREDICATES))
def test_each_predicate_can_fail(predicate):
    # removing or corrupting the evidence a predicate relies on flips it
    log = all_pass_log()
    breakers = {
        "unique_identities": lambda l: l.append(rec(9, "provision", "d1", "ok")),
        "hardware_keys": lambda l: l[0]["detail"].update(key_store="software"),
        "replay_rejected": lambda l: l.append(rec(9, "attest", "d2", "pass", nonce="n0", challenge="n0", attempt=9)),
        "invalid_evidence_denied": lambda l: l.append(rec(9, "admit", "x", "sensor:compliant", attempt=5)),
        "continuous_auth_coverage": lambda l: l.remove(next(r for r in l if r["kind"] == "risk")),
        "operator_mfa": lambda l: l.append(rec(9, "operator_auth", "op", "password_only")),
        "authenticated_delivery": lambda l: l.append(rec(9, "deliver", "d2", "delivered", msg=77, src="d1",
                                                         src_segment="a", dst_segment="a")),
        "tamper_rejected": lambda l: l.append(rec(9, "deliver", "d3", "delivered", msg=2, src="d1",
                                                  src_segment="a", dst_segment="a")),
        "ledger_verified": lambda l: l.append(rec(9, "ledger_verify", "ledger", "bad")),
        "pq_signatures": lambda l: l[1]["detail"].update(sig_alg="mac-ascon-hash256"),
        "segment_rules": lambda l: next(r for r in l if r["kind"] == "deliver")["detail"].update(rule=None),
        "sdp_hiding": lambda l: next(r for r in l if r["kind"] == "deliver")["detail"].update(src_segment="quarantine"),
        "default_deny": lambda l: l.append(rec(9, "authorize", "d1", "allow", policy="none", matched=[])),
        "authentic_firmware": lambda l: l.append(rec(9, "firmware_update", "d1", "accepted", offered=3,
                                                     tag_ok=False, audit=True)),
        "no_downgrade": lambda l: l.append(rec(9, "firmware_update", "d1", "accepted", offered=1,
                                               tag_ok=True, audit=True)),
        "staged_rollout": lambda l: [l.remove(r) for r in [r for r in l if r["kind"] == "rollout"][1:]],
        "ledger_anchored_updates": lambda l: next(r for r in l if r["kind"] == "firmware_update")["detail"].pop("audit"),
        "fleet_update_coverage": lambda l: l.append(rec(9, "provision", "d9", "ok", key_store="hardware",
                                                        sig_alg="ml-dsa-44", version=1)),
        "audit_trail_complete": lambda l: l.append(rec(0.0, "context_change", "harness", "low")),
        "anomaly_detection": lambda l: l.remove(next(r for r in l if r["kind"] == "attack_detected")),
    }
    assert PREDICATES[predicate](log)
    breakers[predicate](log)
    assert not PREDICATES[predicate](log)


def test_scorer_is_pure():
    log = all_pass_log()
    snapshot = copy.deepcopy(log)
    a = compliance_score(log, CHECKLIST)
    assert log == snapshot
    assert compliance_score(log, CHECKLIST) == a


def test_scores_from_logs_not_constants(proposed_run, perimeter_run, cloud_run):
    for run, want in ((proposed_run, 82.0), (perimeter_run, 65.0), (cloud_run, 78.0)):
        rescored = compliance_score(json.loads(json.dumps(run.report.log)), CHECKLIST)
        assert rescored.total == run.report.compliance_total == want
        assert rescored.total == sum(c.weight for c in CHECKLIST if rescored.passed[c.control_id])


def test_checklist_validation():
    good = json.loads(json.dumps({"controls": [
        {"id": "A", "category": "monitoring", "weight": 100, "predicate": "anomaly_detection"}]}))
    assert parse_checklist(good)[0].weight == 100
    for bad in ({"id": "A", "category": "nope", "weight": 100, "predicate": "anomaly_detection"},
                {"id": "A", "category": "monitoring", "weight": 100, "predicate": "magic"},
                {"id": "A", "category": "monitoring", "weight": 90, "predicate": "anomaly_detection"}):
        with pytest.raises(ChecklistError):
            parse_checklist({"controls": [bad]})


def test_compliance_csv():
    res = compliance_score(all_pass_log(), CHECKLIST)
    lines = compliance_csv(res, CHECKLIST).splitlines()
    assert lines[0] == "control_id,category,weight,pass"
    assert lines[1] == "IA-1,identity_access,7,true"
    assert len(lines) == 21
