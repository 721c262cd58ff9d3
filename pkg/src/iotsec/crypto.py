"""Lightweight symmetric primitives built on the Ascon permutation.

* Ascon-128 AEAD (Ascon v1.2 parameter set: 128-bit key/nonce/tag,
  64-bit rate, 12/6 rounds).
* Ascon-Hash256 (NIST SP 800-232), 32-byte digests.
* A key-derivation function and a MAC, both defined as length-prefixed,
  domain-separated Ascon-Hash256 encodings.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import hmac
import os
import struct
from dataclasses import dataclass, field

__all__ = [
    "KEY_SIZE",
    "NONCE_SIZE",
    "TAG_SIZE",
    "DIGEST_SIZE",
    "CryptoError",
    "AuthFailure",
    "EmptyLabel",
    "SymmetricKey",
    "AeadSealed",
    "NonceCounter",
    "aead_encrypt",
    "aead_decrypt",
    "hash",
    "derive_key",
    "mac",
    "verify_mac",
    "lp",
]

KEY_SIZE = 16
NONCE_SIZE = 16
TAG_SIZE = 16
DIGEST_SIZE = 32

_M = 0xFFFFFFFFFFFFFFFF
_RC = tuple(0xF0 - r * 0x10 + r for r in range(12))


class CryptoError(Exception):
    pass


class AuthFailure(CryptoError):
    """Tag verification failed; no plaintext is released."""


class EmptyLabel(CryptoError):
    pass


@dataclass(frozen=True)
class SymmetricKey:
    """16 opaque key bytes.  ``repr`` never shows the material."""

    raw: bytes = field(repr=False)

    def __post_init__(self):
        if not isinstance(self.raw, (bytes, bytearray)) or len(self.raw) != KEY_SIZE:
            raise ValueError(f"SymmetricKey needs exactly {KEY_SIZE} bytes")
        object.__setattr__(self, "raw", bytes(self.raw))

    def __repr__(self):
        return "SymmetricKey(<redacted>)"


@dataclass(frozen=True)
class AeadSealed:
    nonce: bytes
    ciphertext: bytes
    tag: bytes


def _key_bytes(key) -> bytes:
    raw = key.raw if isinstance(key, SymmetricKey) else bytes(key)
    if len(raw) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")
    return raw


def _permute_py(x0, x1, x2, x3, x4, rounds, _rc=_RC, M=_M):
    """Ascon permutation p^rounds on five 64-bit words (reference version)."""
    for c in _rc[12 - rounds:]:
        x2 ^= c
        # substitution layer (bitsliced 5-bit s-box)
        x0 ^= x4
        x4 ^= x3
        x2 ^= x1
        t0 = ~x0 & x1
        t1 = ~x1 & x2
        t2 = ~x2 & x3
        t3 = ~x3 & x4
        t4 = ~x4 & x0
        x0 ^= t1
        x1 ^= t2
        x2 ^= t3
        x3 ^= t4
        x4 ^= t0
        x1 ^= x0
        x0 ^= x4
        x3 ^= x2
        x2 ^= M
        # linear diffusion layer
        x0 ^= (((x0 >> 19) | (x0 << 45)) ^ ((x0 >> 28) | (x0 << 36))) & M
        x1 ^= (((x1 >> 61) | (x1 << 3)) ^ ((x1 >> 39) | (x1 << 25))) & M
        x2 ^= (((x2 >> 1) | (x2 << 63)) ^ ((x2 >> 6) | (x2 << 58))) & M
        x3 ^= (((x3 >> 10) | (x3 << 54)) ^ ((x3 >> 17) | (x3 << 47))) & M
        x4 ^= (((x4 >> 7) | (x4 << 57)) ^ ((x4 >> 41) | (x4 << 23))) & M
    return x0, x1, x2, x3, x4


def _load_accelerated():
    if os.environ.get("IOTSEC_PURE_PYTHON"):
        return None
    try:
        from ._accel import permute
    except ImportError:
        return None
    return permute


_permute = _load_accelerated() or _permute_py
ACCELERATED = _permute is not _permute_py


# ---------------------------------------------------------------------------
# Ascon-128 AEAD (big-endian word loading)

_AEAD_IV = 0x80400C0600000000
_FROM_BE = int.from_bytes


def _aead_init(key: bytes, nonce: bytes, ad: bytes):
    k0 = _FROM_BE(key[:8], "big")
    k1 = _FROM_BE(key[8:], "big")
    s = _permute(_AEAD_IV, k0, k1, _FROM_BE(nonce[:8], "big"), _FROM_BE(nonce[8:], "big"), 12)
    x0, x1, x2, x3, x4 = s
    x3 ^= k0
    x4 ^= k1
    if ad:
        padded = ad + b"\x80" + b"\x00" * (7 - len(ad) % 8)
        for i in range(0, len(padded), 8):
            x0 ^= _FROM_BE(padded[i:i + 8], "big")
            x0, x1, x2, x3, x4 = _permute(x0, x1, x2, x3, x4, 6)
    x4 ^= 1
    return k0, k1, x0, x1, x2, x3, x4


def _aead_final(k0, k1, x0, x1, x2, x3, x4) -> bytes:
    x1 ^= k0
    x2 ^= k1
    x0, x1, x2, x3, x4 = _permute(x0, x1, x2, x3, x4, 12)
    return ((x3 ^ k0) << 64 | (x4 ^ k1)).to_bytes(16, "big")


def _check_nonce(nonce: bytes) -> bytes:
    nonce = bytes(nonce)
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    return nonce


def aead_encrypt(key, nonce: bytes, ad: bytes, plaintext: bytes) -> AeadSealed:
    """Seal ``plaintext`` with Ascon-128; ciphertext length equals plaintext length."""
    nonce = _check_nonce(nonce)
    k0, k1, x0, x1, x2, x3, x4 = _aead_init(_key_bytes(key), nonce, bytes(ad))
    pt = bytes(plaintext)
    out = bytearray()
    full = len(pt) - len(pt) % 8
    for i in range(0, full, 8):
        x0 ^= _FROM_BE(pt[i:i + 8], "big")
        out += x0.to_bytes(8, "big")
        x0, x1, x2, x3, x4 = _permute(x0, x1, x2, x3, x4, 6)
    rem = len(pt) - full
    x0 ^= _FROM_BE(pt[full:] + b"\x80" + b"\x00" * (7 - rem), "big")
    if rem:
        out += (x0 >> (64 - 8 * rem)).to_bytes(rem, "big")
    tag = _aead_final(k0, k1, x0, x1, x2, x3, x4)
    return AeadSealed(nonce, bytes(out), tag)


def aead_decrypt(key, nonce: bytes, ad: bytes, ciphertext: bytes, tag: bytes) -> bytes:
    """Open an Ascon-128 sealing or raise :class:`AuthFailure`."""
    nonce = _check_nonce(nonce)
    if len(tag) != TAG_SIZE:
        raise AuthFailure("bad tag length")
    k0, k1, x0, x1, x2, x3, x4 = _aead_init(_key_bytes(key), nonce, bytes(ad))
    ct = bytes(ciphertext)
    out = bytearray()
    full = len(ct) - len(ct) % 8
    for i in range(0, full, 8):
        c = _FROM_BE(ct[i:i + 8], "big")
        out += (x0 ^ c).to_bytes(8, "big")
        x0 = c
        x0, x1, x2, x3, x4 = _permute(x0, x1, x2, x3, x4, 6)
    rem = len(ct) - full
    if rem:
        shift = 64 - 8 * rem
        c = _FROM_BE(ct[full:], "big")
        p = (x0 >> shift) ^ c
        out += p.to_bytes(rem, "big")
        x0 ^= (p << shift) ^ (0x80 << (shift - 8))
    else:
        x0 ^= 0x80 << 56
    expected = _aead_final(k0, k1, x0, x1, x2, x3, x4)
    if not hmac.compare_digest(expected, bytes(tag)):
        raise AuthFailure("tag mismatch")
    return bytes(out)


# ---------------------------------------------------------------------------
# Ascon-Hash256 (SP 800-232, little-endian word loading)

_HASH_IV = int.from_bytes(bytes([0x02, 0x00, 0xCC, 0x00, 0x01, 0x08, 0x00, 0x00]), "little")
_HASH_S0 = _permute(_HASH_IV, 0, 0, 0, 0, 12)


def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the primitive's name
    """Ascon-Hash256 digest (32 bytes)."""
    data = bytes(data)
    x0, x1, x2, x3, x4 = _HASH_S0
    padded = data + b"\x01" + b"\x00" * (7 - len(data) % 8)
    frm = int.from_bytes
    p = _permute
    for i in range(0, len(padded), 8):
        x0 ^= frm(padded[i:i + 8], "little")
        x0, x1, x2, x3, x4 = p(x0, x1, x2, x3, x4, 12)
    out = [x0.to_bytes(8, "little")]
    for _ in range(3):
        x0, x1, x2, x3, x4 = p(x0, x1, x2, x3, x4, 12)
        out.append(x0.to_bytes(8, "little"))
    return b"".join(out)


# ---------------------------------------------------------------------------
# derived constructions

def lp(data: bytes) -> bytes:
    """4-byte little-endian length prefix followed by ``data``."""
    return struct.pack("<I", len(data)) + data


def derive_key(master, label: bytes) -> SymmetricKey:
    if not label:
        raise EmptyLabel("derive_key needs a non-empty label")
    if isinstance(label, str):
        label = label.encode()
    digest = hash(lp(_key_bytes(master)) + lp(bytes(label)) + b"kdf-v1")
    return SymmetricKey(digest[:KEY_SIZE])


def mac(key, message: bytes) -> bytes:
    """32-byte keyed tag: hash(len(key)||key||len(msg)||msg||"mac-v1")."""
    return hash(lp(_key_bytes(key)) + lp(bytes(message)) + b"mac-v1")


def verify_mac(key, message: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac(key, message), bytes(tag))


class NonceCounter:
    """Counter-based 16-byte nonces for one (key owner, direction) stream.

    Layout: 8-byte owner tag, 1-byte direction, 7-byte big-endian counter.
    """

    def __init__(self, owner: bytes, direction: int):
        if len(owner) != 8:
            owner = hash(owner)[:8]
        self._prefix = bytes(owner) + bytes([direction & 0xFF])
        self._counter = 0

    def next(self) -> bytes:
        value = self._counter
        if value >= 1 << 56:
            raise OverflowError("nonce space exhausted")
        self._counter += 1
        return self._prefix + value.to_bytes(7, "big")

    @property
    def issued(self) -> int:
        return self._counter
