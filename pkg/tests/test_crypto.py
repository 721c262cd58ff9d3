import importlib.util
import os
import random
import time

import pytest

from iotsec import crypto
from iotsec.crypto import (AuthFailure, EmptyLabel, NonceCounter, SymmetricKey, aead_decrypt,
                           aead_encrypt, derive_key, lp, mac, verify_mac)

from conftest import KAT_DIR, parse_kat

AEAD_KAT = parse_kat(os.path.join(KAT_DIR, "LWC_AEAD_KAT_128_128.txt"))
HASH_KAT = parse_kat(os.path.join(KAT_DIR, "LWC_HASH_KAT_256.txt"))
REF_PATH = os.path.join(os.path.dirname(__file__), "..", "examples", "spec_operations",
                        "r004__meichlseder__pyascon__ascon.py")


def _reference():
    if not os.path.exists(REF_PATH):
        pytest.skip("reference implementation not present")
    spec = importlib.util.spec_from_file_location("ascon_ref", REF_PATH)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def test_kat_files_complete():
    assert len(AEAD_KAT) == 33 * 33
    assert len(HASH_KAT) == 1025


def test_aead_kat_first_entry():
    e = AEAD_KAT[0]
    sealed = aead_encrypt(e["Key"], e["Nonce"], e["AD"], e["PT"])
    assert sealed.ciphertext + sealed.tag == bytes.fromhex("E355159F292911F794CB1432A0103A8A")


def test_aead_kat_all_entries():
    for e in AEAD_KAT:
        sealed = aead_encrypt(e["Key"], e["Nonce"], e["AD"], e["PT"])
        assert sealed.ciphertext + sealed.tag == e["CT"], e["Count"]
        n = len(e["PT"])
        assert aead_decrypt(e["Key"], e["Nonce"], e["AD"], e["CT"][:n], e["CT"][n:]) == e["PT"]


def test_aead_kat_64_byte_plaintext():
    # same key and nonce, 64-byte message built like the KAT messages
    key = bytes(range(16))
    pt = bytes(range(32))
    entry = next(e for e in AEAD_KAT if e["PT"] == pt and e["AD"] == bytes(range(32)))
    sealed = aead_encrypt(key, key, bytes(range(32)), pt)
    assert sealed.ciphertext + sealed.tag == entry["CT"]


def test_hash_kat_all_entries():
    for e in HASH_KAT:
        assert crypto.hash(e["Msg"]) == e["MD"], e["Count"]


def test_hash_empty_message():
    assert crypto.hash(b"").hex().upper() == HASH_KAT[0]["MD"].hex().upper()
    assert crypto.hash(b"").hex().startswith("0b3be585")


def test_hash_matches_reference_on_random_inputs():
    ref = _reference()
    rng = random.Random("hash-ref")
    for _ in range(200):
        msg = rng.randbytes(rng.randrange(0, 300))
        assert crypto.hash(msg) == ref.ascon_hash(msg)


def test_hash_determinism_and_extension():
    rng = random.Random(7)
    for _ in range(200):
        x = rng.randbytes(rng.randrange(0, 64))
        assert crypto.hash(x) == crypto.hash(x)
        assert crypto.hash(x) != crypto.hash(x + b"\x00")
        assert len(crypto.hash(x)) == 32


def test_roundtrip_1000_random():
    rng = random.Random("roundtrip")
    for _ in range(1000):
        k, n = rng.randbytes(16), rng.randbytes(16)
        ad, m = rng.randbytes(rng.randrange(40)), rng.randbytes(rng.randrange(80))
        s = aead_encrypt(k, n, ad, m)
        assert len(s.ciphertext) == len(m) and len(s.tag) == 16
        assert aead_decrypt(k, n, ad, s.ciphertext, s.tag) == m


def test_exhaustive_bit_flips_16_byte_message():
    k, n, ad, m = bytes(16), bytes(range(16)), b"hdr", bytes(range(100, 116))
    s = aead_encrypt(k, n, ad, m)
    blob = s.ciphertext + s.tag
    for bit in range(len(blob) * 8):
        bad = bytearray(blob)
        bad[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(AuthFailure):
            aead_decrypt(k, n, ad, bytes(bad[:16]), bytes(bad[16:]))


def test_wrong_key_nonce_or_ad_fails():
    k = bytes(16)
    s = aead_encrypt(k, bytes(16), b"a", b"hello world")
    with pytest.raises(AuthFailure):
        aead_decrypt(b"\x01" + bytes(15), bytes(16), b"a", s.ciphertext, s.tag)
    with pytest.raises(AuthFailure):
        aead_decrypt(k, b"\x01" + bytes(15), b"a", s.ciphertext, s.tag)
    with pytest.raises(AuthFailure):
        aead_decrypt(k, bytes(16), b"b", s.ciphertext, s.tag)


def test_bad_lengths_rejected():
    with pytest.raises(ValueError):
        aead_encrypt(bytes(15), bytes(16), b"", b"")
    with pytest.raises(ValueError):
        aead_encrypt(bytes(16), bytes(12), b"", b"")
    with pytest.raises(ValueError):
        SymmetricKey(bytes(17))


def test_key_repr_redacted():
    k = SymmetricKey(bytes(range(16)))
    assert "000102" not in repr(k)
    assert "redacted" in repr(k)


def test_derive_key_definition():
    m = SymmetricKey(bytes(range(16)))
    expected = crypto.hash(lp(m.raw) + lp(b"device-0001") + b"kdf-v1")[:16]
    assert derive_key(m, b"device-0001").raw == expected
    assert derive_key(m, b"device-0001") == derive_key(m, b"device-0001")
    assert derive_key(m, b"device-0001") != derive_key(m, b"device-0002")
    assert derive_key(m, b"x") != derive_key(SymmetricKey(bytes(16)), b"x")


def test_derive_key_empty_label():
    with pytest.raises(EmptyLabel):
        derive_key(bytes(16), b"")


def test_mac_definition_and_verify():
    k, k2 = bytes(range(16)), bytes(16)
    m = b"firmware v2"
    assert mac(k, m) == crypto.hash(lp(k) + lp(m) + b"mac-v1")
    assert verify_mac(k, m, mac(k, m))
    assert not verify_mac(k, m + b"\x00", mac(k, m))
    assert not verify_mac(k2, m, mac(k, m))


def test_length_prefix_separates_fields():
    k = bytes(16)
    # the same concatenated bytes split differently give different keys
    assert derive_key(k, b"ab") != derive_key(k, b"a")
    assert mac(k, b"") != mac(bytes(15) + b"\x01", b"")


def test_nonce_counter_layout_and_uniqueness():
    nc = NonceCounter(b"deviceAB", 1)
    seen = {nc.next() for _ in range(1000)}
    assert len(seen) == 1000
    first = NonceCounter(b"deviceAB", 1).next()
    assert first == b"deviceAB" + b"\x01" + bytes(7)
    assert NonceCounter(b"deviceAB", 2).next() != first
    assert len(NonceCounter(b"a much longer owner name", 0).next()) == 16


def test_kat_runtime_under_five_seconds():
    t = time.perf_counter()
    for e in AEAD_KAT:
        aead_encrypt(e["Key"], e["Nonce"], e["AD"], e["PT"])
    for e in HASH_KAT:
        crypto.hash(e["Msg"])
    assert time.perf_counter() - t < 5.0


def test_accelerated_permutation_matches_reference():
    if not crypto.ACCELERATED:
        pytest.skip("compiled permutation not available")
    rng = random.Random("perm")
    for _ in range(2000):
        words = [rng.getrandbits(64) for _ in range(5)]
        rounds = rng.choice((6, 8, 12))
        assert tuple(crypto._permute(*words, rounds)) == crypto._permute_py(*words, rounds)


def test_pure_python_path_passes_kats(monkeypatch):
    monkeypatch.setattr(crypto, "_permute", crypto._permute_py)
    monkeypatch.setattr(crypto, "_HASH_S0", crypto._permute_py(crypto._HASH_IV, 0, 0, 0, 0, 12))
    for e in AEAD_KAT[::37]:
        sealed = aead_encrypt(e["Key"], e["Nonce"], e["AD"], e["PT"])
        assert sealed.ciphertext + sealed.tag == e["CT"]
    for e in HASH_KAT[::41]:
        assert crypto.hash(e["Msg"]) == e["MD"]
