import pytest

from iotsec.crypto import SymmetricKey, derive_key, hash as digest, mac, verify_mac
from iotsec.device import (BadFirmwareTag, BadSignature, DeviceError, DuplicateId, FirmwareImage,
                           InvalidLifecycle, Lifecycle, Manufacturer, RollbackRejected, TamperedDevice,
                           ZERO_DIGEST, apply_firmware_update, census_csv, chain_measurements,
                           forge_attestation, generate_attestation, provision_device, release_digest,
                           secure_boot, stage_digests, tamper_event)

MASTER = SymmetricKey(bytes(range(16)))


def fresh(tee=True, stages=3, device_id="dev-1", cls="sensor"):
    man = Manufacturer(MASTER)
    dev = provision_device(man, device_id, cls, man.release(cls, 1), stages=stages, tee=tee)
    return man, dev


def test_provision_contract():
    man, dev = fresh()
    assert dev.lifecycle is Lifecycle.PROVISIONED
    assert dev.current_version == 1
    assert man.key_registry["dev-1"] == derive_key(MASTER, b"dev-1")
    assert ("dev-1", 1) in man.golden


def test_duplicate_id():
    man, _ = fresh()
    with pytest.raises(DuplicateId):
        provision_device(man, "dev-1", "sensor", man.release("sensor", 1))


def test_bad_firmware_tag():
    man = Manufacturer(MASTER)
    good = man.release("sensor", 1)
    bad = FirmwareImage(good.version, good.payload_digest, bytes(32))
    with pytest.raises(BadFirmwareTag):
        provision_device(man, "d", "sensor", bad)
    # the tag is a MAC over version || digest under the signing key
    assert verify_mac(man.firmware_key, good.signed_body(), good.auth_tag)


def test_boot_golden_path():
    man, dev = fresh()
    rep = secure_boot(dev, man.golden)
    assert rep.match and rep.measured
    assert dev.lifecycle is Lifecycle.OPERATIONAL
    assert [m.stage_index for m in rep.measurements] == [0, 1, 2]


def test_chain_by_hand_two_stages():
    man, dev = fresh(stages=2)
    d0, d1 = dev.stages
    m0 = digest(ZERO_DIGEST + d0)
    m1 = digest(m0 + d1)
    assert chain_measurements([d0, d1]) == [m0, m1]
    assert man.golden.expected("dev-1", 1) == m1
    dev.corrupt_stage(0)
    rep = secure_boot(dev, man.golden)
    assert not rep.match
    assert rep.final_measurement == digest(digest(ZERO_DIGEST + dev.stages[0]) + d1)
    assert dev.lifecycle is Lifecycle.RECOVERY


def test_stage_count_bounds():
    with pytest.raises(ValueError):
        stage_digests("sensor", bytes(32), 0)
    with pytest.raises(ValueError):
        stage_digests("sensor", bytes(32), 9)
    assert len(stage_digests("sensor", bytes(32), 8)) == 8


def test_attestation_construction():
    man, dev = fresh()
    secure_boot(dev, man.golden)
    ev1 = generate_attestation(dev, bytes(16))
    ev2 = generate_attestation(dev, b"\x01" + bytes(15))
    key = man.key_registry["dev-1"]
    assert verify_mac(key, ev1.body(), ev1.tag)
    assert ev1.tag != ev2.tag
    assert ev1.measurement == man.golden.expected("dev-1", 1)
    assert forge_attestation(key, "dev-1", 1, ev1.measurement, bytes(16)).tag == ev1.tag


def test_recovery_attestation_has_non_golden_measurement():
    man, dev = fresh()
    dev.corrupt_stage(1)
    secure_boot(dev, man.golden)
    ev = generate_attestation(dev, bytes(16))
    assert ev.measurement != man.golden.expected("dev-1", 1)


def test_attest_before_boot_rejected():
    _, dev = fresh()
    with pytest.raises(InvalidLifecycle):
        generate_attestation(dev, bytes(16))


def test_update_accept_and_golden_moves():
    man, dev = fresh()
    secure_boot(dev, man.golden)
    res = apply_firmware_update(dev, man.release("sensor", 2), man)
    assert res.accepted and dev.current_version == 2
    assert dev.final_measurement == man.golden.expected("dev-1", 2)
    assert secure_boot(dev, man.golden).match


def test_update_rollback_rejected():
    man, dev = fresh()
    secure_boot(dev, man.golden)
    apply_firmware_update(dev, man.release("sensor", 2), man)
    with pytest.raises(RollbackRejected):
        apply_firmware_update(dev, man.release("sensor", 1), man)
    with pytest.raises(RollbackRejected):
        apply_firmware_update(dev, man.release("sensor", 2), man)
    assert dev.current_version == 2


def test_update_bad_signature_leaves_state():
    man, dev = fresh()
    secure_boot(dev, man.golden)
    im = man.release("sensor", 3)
    bad = FirmwareImage(3, im.payload_digest, bytes(a ^ 1 for a in im.auth_tag))
    before = dev.state
    with pytest.raises(BadSignature):
        apply_firmware_update(dev, bad, man)
    assert dev.state == before


def test_update_signed_by_other_key_rejected():
    man, dev = fresh()
    secure_boot(dev, man.golden)
    other = SymmetricKey(bytes(16))
    forged = FirmwareImage(3, release_digest("sensor", 3),
                           mac(other, (3).to_bytes(8, "little") + release_digest("sensor", 3)))
    with pytest.raises(BadSignature):
        apply_firmware_update(dev, forged, man)


def test_no_tee_device_has_no_rollback_counter():
    man, dev = fresh(tee=False)
    rep = secure_boot(dev, man.golden)
    assert not rep.measured and dev.final_measurement == ZERO_DIGEST
    apply_firmware_update(dev, man.release("sensor", 2), man)
    assert apply_firmware_update(dev, man.release("sensor", 1), man).accepted
    assert dev.current_version == 1
    assert dev.key_store == "flash"
    assert dev.physical_extract() == man.key_registry["dev-1"]


def test_tee_physical_extract_zeroizes():
    man, dev = fresh()
    secure_boot(dev, man.golden)
    assert dev.physical_extract() is None
    assert dev.lifecycle is Lifecycle.TAMPERED_ZEROIZED


def test_tamper_absorbing():
    man, dev = fresh()
    secure_boot(dev, man.golden)
    events = []
    dev.on_audit = lambda kind, d, detail: events.append(kind)
    st = tamper_event(dev)
    assert st.lifecycle is Lifecycle.TAMPERED_ZEROIZED
    assert dev._secure.erased
    assert events == ["tamper"]
    with pytest.raises(TamperedDevice):
        generate_attestation(dev, bytes(16))
    with pytest.raises(TamperedDevice):
        secure_boot(dev, man.golden)
    with pytest.raises(TamperedDevice):
        apply_firmware_update(dev, man.release("sensor", 2), man)
    tamper_event(dev)
    assert events == ["tamper"]


def test_census_csv():
    man, dev = fresh()
    secure_boot(dev, man.golden)
    assert census_csv([dev]).splitlines() == ["device_id,class,lifecycle,version", "dev-1,sensor,operational,1"]


# --- exhaustive small-model enumeration -----------------------------------

ALLOWED = {
    ("provisioned", "operational"), ("provisioned", "recovery"),
    ("operational", "recovery"), ("recovery", "operational"),
    ("provisioned", "tampered_zeroized"), ("operational", "tampered_zeroized"),
    ("recovery", "tampered_zeroized"),
}


def _snapshot(dev):
    return (dev.lifecycle, dev.current_version, dev.final_measurement, list(dev.stages), dev._secure._key)


def _restore(dev, snap):
    dev.lifecycle, dev.current_version, dev.final_measurement, stages, dev._secure._key = snap
    dev.stages = list(stages)


def _ops(man):
    def boot(d):
        secure_boot(d, man.golden)

    def attest(d):
        generate_attestation(d, bytes(16))

    def upgrade(d):
        apply_firmware_update(d, man.release("sensor", d.current_version + 1), man)

    def downgrade(d):
        apply_firmware_update(d, man.release("sensor", max(d.current_version - 1, 0)), man)

    def badtag(d):
        im = man.release("sensor", d.current_version + 1)
        apply_firmware_update(d, FirmwareImage(im.version, im.payload_digest, bytes(32)), man)

    def corrupt(d):
        d.corrupt_stage(0)

    def tamper(d):
        tamper_event(d)

    return [boot, attest, upgrade, downgrade, badtag, corrupt, tamper]


def test_lifecycle_enumeration_up_to_six_ops():
    man, dev = fresh()
    ops = _ops(man)
    seen_transitions = set()
    visited = 0

    def walk(depth):
        nonlocal visited
        if depth == 6:
            return
        for op in ops:
            snap = _snapshot(dev)
            before = dev.lifecycle.value
            try:
                op(dev)
            except (DeviceError, ValueError):
                assert _snapshot(dev)[:3] == snap[:3]
            visited += 1
            after = dev.lifecycle.value
            if after != before:
                assert (before, after) in ALLOWED, (before, after)
                seen_transitions.add((before, after))
            assert dev.current_version >= snap[1]
            if dev.lifecycle is Lifecycle.OPERATIONAL:
                assert dev.final_measurement == man.golden.expected(dev.device_id, dev.current_version)
            if dev.lifecycle is Lifecycle.TAMPERED_ZEROIZED:
                assert dev._secure.erased
            walk(depth + 1)
            _restore(dev, snap)

    walk(0)
    assert visited == sum(7 ** k for k in range(1, 7))
    assert {("provisioned", "operational"), ("operational", "recovery"),
            ("recovery", "operational"), ("operational", "tampered_zeroized")} <= seen_transitions
