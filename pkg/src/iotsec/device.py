"""Simulated IoT endpoint with a secure/non-secure split.

The secure side owns the root key and the boot measurement logic.  The
non-secure side only sees lifecycle state, the firmware version and the
final measurement.  Devices built without a TEE keep their key in plain
flash (readable by an attacker with physical access), skip measured boot
and have no anti-rollback counter.
"""

from __future__ import annotations

import csv
import enum
import functools
import io
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import crypto
from .crypto import SymmetricKey, derive_key, hash as digest_of, mac, verify_mac
from .zerotrust import AttestationEvidence

ZERO_DIGEST = bytes(32)
DEFAULT_STAGES = 3
MAX_STAGES = 8


class DeviceClass(str, enum.Enum):
    SENSOR = "sensor"
    ACTUATOR = "actuator"
    GATEWAY = "gateway"


class Lifecycle(str, enum.Enum):
    PROVISIONED = "provisioned"
    BOOTED = "booted"
    OPERATIONAL = "operational"
    RECOVERY = "recovery"
    TAMPERED_ZEROIZED = "tampered_zeroized"


class DeviceError(Exception):
    pass


class DuplicateId(DeviceError):
    pass


class BadFirmwareTag(DeviceError):
    pass


class TamperedDevice(DeviceError):
    pass


class BadSignature(DeviceError):
    pass


class RollbackRejected(DeviceError):
    pass


class InvalidLifecycle(DeviceError):
    pass


# ---------------------------------------------------------------------------
# firmware and measurements

@dataclass(frozen=True)
class FirmwareImage:
    version: int
    payload_digest: bytes
    auth_tag: bytes

    def signed_body(self) -> bytes:
        return firmware_body(self.version, self.payload_digest)


def firmware_body(version: int, payload_digest: bytes) -> bytes:
    return struct.pack("<Q", version) + payload_digest


def sign_firmware(manufacturer_key: SymmetricKey, version: int, payload_digest: bytes) -> FirmwareImage:
    if version < 0:
        raise ValueError("firmware version is unsigned")
    return FirmwareImage(version, payload_digest, mac(manufacturer_key, firmware_body(version, payload_digest)))


def release_digest(device_class: str, version: int) -> bytes:
    """Digest of the application image shipped for (class, version)."""
    return digest_of(f"app/{device_class}/v{version}".encode())


@functools.lru_cache(maxsize=None)
def _platform_stages(device_class: str, stages: int) -> tuple[bytes, ...]:
    return tuple(digest_of(f"stage{i}/{device_class}".encode()) for i in range(stages - 1))


def stage_digests(device_class: str, payload_digest: bytes, stages: int) -> list[bytes]:
    """Boot stage digests: ``stages - 1`` fixed platform stages then the application."""
    if not 1 <= stages <= MAX_STAGES:
        raise ValueError(f"boot stage count must be in 1..{MAX_STAGES}")
    return list(_platform_stages(device_class, stages)) + [payload_digest]


def chain_measurements(digests: Iterable[bytes]) -> list[bytes]:
    """m_i = hash(m_{i-1} || d_i), m_{-1} = 32 zero bytes."""
    return list(_chain(tuple(digests)))


@functools.lru_cache(maxsize=4096)
def _chain(digests: tuple[bytes, ...]) -> tuple[bytes, ...]:
    out = []
    m = ZERO_DIGEST
    for d in digests:
        m = digest_of(m + d)
        out.append(m)
    return tuple(out)


@dataclass(frozen=True)
class BootMeasurement:
    stage_index: int
    digest: bytes


@dataclass(frozen=True)
class BootReport:
    device_id: str
    measured: bool
    match: bool
    measurements: tuple[BootMeasurement, ...]
    final_measurement: bytes
    lifecycle: Lifecycle


class GoldenRegistry:
    """Verifier-side expected final measurement per (device_id, version)."""

    def __init__(self):
        self._values: dict[tuple[str, int], bytes] = {}

    def register(self, device_id: str, version: int, measurement: bytes) -> None:
        self._values[(device_id, version)] = measurement

    def expected(self, device_id: str, version: int) -> bytes | None:
        return self._values.get((device_id, version))

    def __contains__(self, key) -> bool:
        return key in self._values

    def __len__(self):
        return len(self._values)


@dataclass
class DeviceState:
    lifecycle: Lifecycle
    current_version: int
    final_measurement: bytes


# ---------------------------------------------------------------------------
# device

class _SecureWorld:
    """Secure-side key slot; the only holder of the root key."""

    __slots__ = ("_key", "hardware")

    def __init__(self, key: SymmetricKey, hardware: bool):
        self._key = key
        self.hardware = hardware

    def sign(self, body: bytes) -> bytes:
        if self._key is None:
            raise TamperedDevice("key material erased")
        return mac(self._key, body)

    def extract(self) -> SymmetricKey | None:
        """Physical read-out attempt; only plain flash gives up the key."""
        if self.hardware:
            return None
        return self._key

    def zeroize(self) -> None:
        self._key = None

    @property
    def erased(self) -> bool:
        return self._key is None


class Device:
    def __init__(self, device_id: str, device_class: DeviceClass, root_key: SymmetricKey,
                 firmware: FirmwareImage, stages: int = DEFAULT_STAGES, tee: bool = True):
        self.device_id = device_id
        self.device_class = DeviceClass(device_class)
        self.tee = tee
        self.rollback_protection = tee
        self.stages = stage_digests(self.device_class.value, firmware.payload_digest, stages)
        self.current_version = firmware.version
        self.lifecycle = Lifecycle.PROVISIONED
        self.final_measurement = ZERO_DIGEST
        self.on_audit: Callable[[str, "Device", dict], None] | None = None
        self._secure = _SecureWorld(root_key, hardware=tee)

    def __repr__(self):
        return f"Device({self.device_id!r}, {self.device_class.value}, {self.lifecycle.value}, v{self.current_version})"

    @property
    def state(self) -> DeviceState:
        return DeviceState(self.lifecycle, self.current_version, self.final_measurement)

    @property
    def key_store(self) -> str:
        return "hardware" if self._secure.hardware else "flash"

    @property
    def zeroized(self) -> bool:
        return self.lifecycle is Lifecycle.TAMPERED_ZEROIZED

    def corrupt_stage(self, index: int) -> None:
        """Fault injection: flip the stored image of one boot stage."""
        d = bytearray(self.stages[index])
        d[0] ^= 0x01
        self.stages[index] = bytes(d)

    def physical_extract(self) -> SymmetricKey | None:
        """Attacker with physical access.  TEE parts detect the probe and zeroize."""
        if self.tee:
            tamper_event(self)
            return None
        return self._secure.extract()

    def _emit(self, kind: str, **detail) -> None:
        if self.on_audit is not None:
            self.on_audit(kind, self, detail)


def _require_not_tampered(device: Device) -> None:
    if device.lifecycle is Lifecycle.TAMPERED_ZEROIZED:
        raise TamperedDevice(device.device_id)


class Manufacturer:
    """Provisioning authority: master secret, firmware signing key, issued ids."""

    def __init__(self, master: SymmetricKey, firmware_key: SymmetricKey | None = None):
        self.master = master
        self.firmware_key = firmware_key or derive_key(master, b"firmware-signing")
        self.golden = GoldenRegistry()
        self.key_registry: dict[str, SymmetricKey] = {}
        self._golden_cache: dict[tuple, bytes] = {}
        self._releases: dict[tuple[str, int], FirmwareImage] = {}

    def root_key(self, device_id: str) -> SymmetricKey:
        return derive_key(self.master, device_id.encode())

    def sign(self, version: int, payload_digest: bytes) -> FirmwareImage:
        return sign_firmware(self.firmware_key, version, payload_digest)

    def release(self, device_class: str, version: int) -> FirmwareImage:
        key = (device_class, version)
        if key not in self._releases:
            self._releases[key] = self.sign(version, release_digest(device_class, version))
        return self._releases[key]

    def register_golden(self, device: Device, version: int, payload_digest: bytes) -> bytes:
        key = (device.device_class.value, payload_digest, len(device.stages))
        value = self._golden_cache.get(key)
        if value is None:
            value = chain_measurements(stage_digests(*key))[-1]
            self._golden_cache[key] = value
        self.golden.register(device.device_id, version, value)
        return value

    def provision(self, device_id: str, device_class, firmware: FirmwareImage,
                  stages: int = DEFAULT_STAGES, tee: bool = True) -> Device:
        return provision_device(self, device_id, device_class, firmware, stages=stages, tee=tee)


def provision_device(manufacturer: Manufacturer, device_id: str, device_class,
                     initial_firmware: FirmwareImage, stages: int = DEFAULT_STAGES,
                     tee: bool = True) -> Device:
    if device_id in manufacturer.key_registry:
        raise DuplicateId(device_id)
    if not verify_mac(manufacturer.firmware_key, initial_firmware.signed_body(), initial_firmware.auth_tag):
        raise BadFirmwareTag(device_id)
    key = manufacturer.root_key(device_id)
    device = Device(device_id, DeviceClass(device_class), key, initial_firmware, stages=stages, tee=tee)
    manufacturer.key_registry[device_id] = key
    manufacturer.register_golden(device, initial_firmware.version, initial_firmware.payload_digest)
    return device


def secure_boot(device: Device, golden: GoldenRegistry) -> BootReport:
    _require_not_tampered(device)
    if device.lifecycle not in (Lifecycle.PROVISIONED, Lifecycle.OPERATIONAL, Lifecycle.RECOVERY):
        raise InvalidLifecycle(f"cannot boot from {device.lifecycle.value}")
    if not device.tee:
        # no root of trust: nothing is measured, boot always proceeds
        device.lifecycle = Lifecycle.OPERATIONAL
        device.final_measurement = ZERO_DIGEST
        return BootReport(device.device_id, False, True, (), ZERO_DIGEST, device.lifecycle)
    chain = chain_measurements(device.stages)
    measurements = tuple(BootMeasurement(i, d) for i, d in enumerate(device.stages))
    final = chain[-1]
    device.lifecycle = Lifecycle.BOOTED
    device.final_measurement = final
    ok = golden.expected(device.device_id, device.current_version) == final
    device.lifecycle = Lifecycle.OPERATIONAL if ok else Lifecycle.RECOVERY
    return BootReport(device.device_id, True, ok, measurements, final, device.lifecycle)


def evidence_body(device_id: str, version: int, measurement: bytes, nonce: bytes) -> bytes:
    return AttestationEvidence(device_id, version, measurement, bytes(nonce), b"").body()


def generate_attestation(device: Device, nonce: bytes) -> AttestationEvidence:
    _require_not_tampered(device)
    if device.lifecycle not in (Lifecycle.OPERATIONAL, Lifecycle.RECOVERY):
        raise InvalidLifecycle(f"cannot attest from {device.lifecycle.value}")
    if len(nonce) != crypto.NONCE_SIZE:
        raise ValueError("attestation nonce must be 16 bytes")
    body = evidence_body(device.device_id, device.current_version, device.final_measurement, nonce)
    return AttestationEvidence(device.device_id, device.current_version, device.final_measurement,
                               bytes(nonce), device._secure.sign(body))


def forge_attestation(key: SymmetricKey, device_id: str, version: int, measurement: bytes,
                      nonce: bytes) -> AttestationEvidence:
    """Evidence built outside any device, e.g. by an attacker holding ``key``."""
    body = evidence_body(device_id, version, measurement, nonce)
    return AttestationEvidence(device_id, version, measurement, bytes(nonce), mac(key, body))


@dataclass(frozen=True)
class UpdateResult:
    accepted: bool
    previous_version: int
    version: int


def apply_firmware_update(device: Device, image: FirmwareImage, manufacturer: Manufacturer) -> UpdateResult:
    _require_not_tampered(device)
    if device.lifecycle is not Lifecycle.OPERATIONAL:
        raise InvalidLifecycle(f"updates need an operational device, got {device.lifecycle.value}")
    if not verify_mac(manufacturer.firmware_key, image.signed_body(), image.auth_tag):
        raise BadSignature(device.device_id)
    if device.rollback_protection and image.version <= device.current_version:
        raise RollbackRejected(f"{device.device_id}: v{image.version} <= v{device.current_version}")
    previous = device.current_version
    stages = list(device.stages)
    stages[-1] = image.payload_digest
    golden = manufacturer.register_golden(device, image.version, image.payload_digest)
    device.stages = stages
    device.current_version = image.version
    if device.tee:
        device.final_measurement = chain_measurements(stages)[-1]
        if device.final_measurement != golden:
            device.lifecycle = Lifecycle.RECOVERY
    return UpdateResult(True, previous, image.version)


def tamper_event(device: Device) -> DeviceState:
    already = device.lifecycle is Lifecycle.TAMPERED_ZEROIZED
    device._secure.zeroize()
    device.lifecycle = Lifecycle.TAMPERED_ZEROIZED
    device.final_measurement = ZERO_DIGEST
    if not already:
        device._emit("tamper")
    return device.state


# ---------------------------------------------------------------------------
# census export

CENSUS_FIELDS = ("device_id", "class", "lifecycle", "version")


def census_rows(devices: Iterable[Device]) -> list[tuple[str, str, str, int]]:
    return [(d.device_id, d.device_class.value, d.lifecycle.value, d.current_version) for d in devices]


def census_csv(devices: Iterable[Device]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CENSUS_FIELDS)
    w.writerows(census_rows(devices))
    return buf.getvalue()
