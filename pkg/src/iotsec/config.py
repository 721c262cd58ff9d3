"""Scenario configuration: strict ``section.key = value`` text files."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources

from .costs import DEFAULT_COSTS, OP_CLASSES, CostModel, OpCost
from .ledger import ConsensusParams
from .zerotrust import RiskParams, RuleError, parse_gateway_rules

TOGGLES = ("tee", "microsegmentation", "continuous_auth", "ledger", "semantic_policy")

MODES = {
    "proposed": dict(tee=True, microsegmentation=True, continuous_auth=True, ledger=True, semantic_policy=True),
    "perimeter": dict(tee=False, microsegmentation=False, continuous_auth=False, ledger=False, semantic_policy=False),
    "cloud": dict(tee=False, microsegmentation=False, continuous_auth=True, ledger=True, semantic_policy=True),
}
MODE_ALIASES = {"cloud_centric": "cloud", "cloud-centric": "cloud"}
CLASSES = ("sensor", "actuator", "gateway")
THREATS = ("low", "elevated", "high")

DEFAULT_RULES = (
    "sensor:compliant>gateway:compliant@telemetry/;"
    "sensor:noncompliant>gateway:compliant@telemetry/;"
    "actuator:compliant>gateway:compliant@telemetry/;"
    "actuator:noncompliant>gateway:compliant@telemetry/;"
    "gateway:compliant>actuator:compliant@command/;"
    "gateway:compliant>actuator:noncompliant@command/"
)


class ConfigError(Exception):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


@dataclass(frozen=True)
class Toggles:
    tee: bool = True
    microsegmentation: bool = True
    continuous_auth: bool = True
    ledger: bool = True
    semantic_policy: bool = True

    @classmethod
    def for_mode(cls, mode: str) -> "Toggles":
        return cls(**MODES[mode])

    def label(self) -> str:
        return "".join(k[0].upper() if getattr(self, k) else "-" for k in TOGGLES)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 20240917
    duration: float = 400.0
    mode: str = "proposed"
    toggles: Toggles = field(default_factory=Toggles)

    fleet_count: int = 200
    class_mix: tuple = (("sensor", 0.60), ("actuator", 0.25), ("gateway", 0.15))
    boot_stages: int = 3
    initial_version: int = 1
    noncompliant_fraction: float = 0.10
    boot_faults: int = 2

    telemetry_period: float = 10.0
    payload_bytes: int = 64
    command_period: float = 60.0
    rollout_at: float = 150.0
    rollout_version: int = 2
    rollout_waves: int = 1
    rollout_spacing: float = 30.0
    threat_schedule: tuple = ((300.0, "elevated"), (370.0, "low"))
    location_zone: str = "plant-1"

    ledger_params: ConsensusParams = field(default_factory=ConsensusParams)
    lam: float = 0.02
    burst: int = 150

    sweep_min: int = 500
    sweep_max: int = 10000
    sweep_step: int = 500
    sweep_slots: int = 20000

    costs: CostModel = field(default_factory=CostModel.default)
    risk: RiskParams = field(default_factory=RiskParams)
    gateway_rules: str = DEFAULT_RULES
    nonce_lifetime: float = 30.0

    checklist: str = "default"
    attacks: str = "default"
    policy: str = "default"

    hardware_labels: tuple = (("proposed", "Medium"), ("perimeter", "Low"), ("cloud", "High"))
    complexity_labels: tuple = (("proposed", "High"), ("perimeter", "Low"), ("cloud", "Medium"))

    def with_mode(self, mode: str) -> "ScenarioConfig":
        mode = MODE_ALIASES.get(mode, mode)
        if mode not in MODES:
            raise ConfigError("run.mode", f"unknown mode {mode!r}")
        return replace(self, mode=mode, toggles=Toggles.for_mode(mode))

    def with_toggles(self, **changes) -> "ScenarioConfig":
        return replace(self, toggles=replace(self.toggles, **changes))


# ---------------------------------------------------------------------------
# value parsers

def _int(key, text, lo=None, hi=None):
    try:
        v = int(text, 0)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {text!r}") from None
    _range(key, v, lo, hi)
    return v


def _float(key, text, lo=None, hi=None, open_lo=False):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {text!r}") from None
    if v != v or v in (float("inf"), float("-inf")):
        raise ConfigError(key, "must be finite")
    if open_lo and lo is not None and v <= lo:
        raise ConfigError(key, f"must be > {lo:g}")
    _range(key, v, None if open_lo else lo, hi)
    return v


def _range(key, v, lo, hi):
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be ≥ {lo:g}")
    if hi is not None and v > hi:
        raise ConfigError(key, f"must be ≤ {hi:g}")


def _bool(key, text):
    t = text.lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ConfigError(key, f"expected on/off, got {text!r}")


def _pairs(key, text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise ConfigError(key, f"expected name:value items, got {item!r}")
        a, b = item.split(":", 1)
        out.append((a.strip(), b.strip()))
    return out


def _mix(key, text):
    out = []
    for name, val in _pairs(key, text):
        if name not in CLASSES:
            raise ConfigError(key, f"unknown device class {name!r}")
        out.append((name, _float(key, val, lo=0.0)))
    total = sum(v for _, v in out)
    if total <= 0:
        raise ConfigError(key, "class mix must have positive total weight")
    have = dict(out)
    return tuple((c, have.get(c, 0.0) / total) for c in CLASSES)


def _threats(key, text):
    out = []
    for t, level in _pairs(key, text):
        if level not in THREATS:
            raise ConfigError(key, f"unknown threat level {level!r}")
        out.append((_float(key, t, lo=0.0), level))
    return tuple(sorted(out))


def _cost(key, text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(key, "expected energy_pct,memory_kb,time_ms")
    vals = [_float(key, p, lo=0.0) for p in parts]
    return OpCost(*vals)


def _labels(key, text):
    out = dict(_pairs(key, text))
    for m in out:
        if MODE_ALIASES.get(m, m) not in MODES:
            raise ConfigError(key, f"unknown mode {m!r}")
    return tuple((MODE_ALIASES.get(m, m), v) for m, v in out.items())


def _path(key, text, base_dir):
    if text in ("default", "none"):
        return text
    path = text if os.path.isabs(text) or base_dir is None else os.path.join(base_dir, text)
    if not os.path.exists(path):
        raise ConfigError(key, f"file not found: {path}")
    return path


# key -> handler(cfg_updates, key, value, ctx)
def _set(name, conv):
    def handler(upd, key, text, ctx):
        upd[name] = conv(key, text)
    return handler


def _set_ledger(name, conv):
    def handler(upd, key, text, ctx):
        upd.setdefault("_ledger", {})[name] = conv(key, text)
    return handler


def _set_risk(name, conv):
    def handler(upd, key, text, ctx):
        upd.setdefault("_risk", {})[name] = conv(key, text)
    return handler


def _set_toggle(name):
    def handler(upd, key, text, ctx):
        upd.setdefault("_toggles", {})[name] = _bool(key, text)
    return handler


def _set_cost(name):
    def handler(upd, key, text, ctx):
        upd.setdefault("_costs", {})[name] = _cost(key, text)
    return handler


def _set_path(name):
    def handler(upd, key, text, ctx):
        upd[name] = _path(key, text, ctx.get("base_dir"))
    return handler


def _mode(key, text):
    m = MODE_ALIASES.get(text, text)
    if m not in MODES:
        raise ConfigError(key, f"unknown mode {text!r}; expected proposed, perimeter or cloud")
    return m


def _rules(key, text):
    try:
        parse_gateway_rules(text)
    except RuleError as exc:
        raise ConfigError(key, str(exc)) from None
    return text


KEYS = {
    "run.seed": _set("seed", lambda k, v: _int(k, v, 0, 2 ** 64 - 1)),
    "run.duration": _set("duration", lambda k, v: _float(k, v, 0.0, open_lo=True)),
    "run.mode": _set("mode", _mode),
    "fleet.count": _set("fleet_count", lambda k, v: _int(k, v, 1, 100000)),
    "fleet.mix": _set("class_mix", _mix),
    "fleet.boot_stages": _set("boot_stages", lambda k, v: _int(k, v, 1, 8)),
    "fleet.initial_version": _set("initial_version", lambda k, v: _int(k, v, 0)),
    "fleet.noncompliant_fraction": _set("noncompliant_fraction", lambda k, v: _float(k, v, 0.0, 1.0)),
    "fleet.boot_faults": _set("boot_faults", lambda k, v: _int(k, v, 0)),
    "workload.telemetry_period": _set("telemetry_period", lambda k, v: _float(k, v, 0.0, open_lo=True)),
    "workload.payload_bytes": _set("payload_bytes", lambda k, v: _int(k, v, 0, 65536)),
    "workload.command_period": _set("command_period", lambda k, v: _float(k, v, 0.0, open_lo=True)),
    "workload.rollout_at": _set("rollout_at", lambda k, v: _float(k, v, 0.0)),
    "workload.rollout_version": _set("rollout_version", lambda k, v: _int(k, v, 0)),
    "workload.rollout_waves": _set("rollout_waves", lambda k, v: _int(k, v, 1, 100)),
    "workload.rollout_spacing": _set("rollout_spacing", lambda k, v: _float(k, v, 0.0)),
    "workload.threat_schedule": _set("threat_schedule", _threats),
    "workload.location_zone": _set("location_zone", lambda k, v: v),
    "ledger.block_interval": _set_ledger("block_interval", lambda k, v: _float(k, v, 0.0, open_lo=True)),
    "ledger.capacity": _set_ledger("capacity", lambda k, v: _int(k, v, 1)),
    "ledger.validators": _set_ledger("validators", lambda k, v: _int(k, v, 1, 1000)),
    "ledger.rtt": _set_ledger("rtt", lambda k, v: _float(k, v, 0.0)),
    "ledger.lambda": _set("lam", lambda k, v: _float(k, v, 0.0, open_lo=True)),
    "ledger.burst": _set("burst", lambda k, v: _int(k, v, 1)),
    "sweep.min": _set("sweep_min", lambda k, v: _int(k, v, 1)),
    "sweep.max": _set("sweep_max", lambda k, v: _int(k, v, 1)),
    "sweep.step": _set("sweep_step", lambda k, v: _int(k, v, 1)),
    "sweep.slots": _set("sweep_slots", lambda k, v: _int(k, v, 10)),
    "zt.alpha": _set_risk("alpha", lambda k, v: _float(k, v, 0.0, 1.0, open_lo=True)),
    "zt.restricted_at": _set_risk("restricted_at", lambda k, v: _float(k, v, 0.0, 1.0)),
    "zt.quarantine_at": _set_risk("quarantine_at", lambda k, v: _float(k, v, 0.0, 1.0)),
    "zt.warmup": _set_risk("warmup", lambda k, v: _int(k, v, 2)),
    "zt.decay": _set_risk("decay", lambda k, v: _float(k, v, 0.0, 1.0)),
    "zt.gateway_rules": _set("gateway_rules", _rules),
    "zt.nonce_lifetime": _set("nonce_lifetime", lambda k, v: _float(k, v, 0.0, open_lo=True)),
    "files.checklist": _set_path("checklist"),
    "files.attacks": _set_path("attacks"),
    "files.policy": _set_path("policy"),
    "labels.hardware": _set("hardware_labels", _labels),
    "labels.complexity": _set("complexity_labels", _labels),
}
for _t in TOGGLES:
    KEYS[f"mode.{_t}"] = _set_toggle(_t)
for _c in OP_CLASSES:
    KEYS[f"cost.{_c}"] = _set_cost(_c)


def parse_config_text(text: str, base_dir: str | None = None) -> ScenarioConfig:
    updates: dict = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen.add(key)
        KEYS[key](updates, key, value, {"base_dir": base_dir})
    return build_config(updates)


def build_config(updates: dict) -> ScenarioConfig:
    base = ScenarioConfig()
    ledger = updates.pop("_ledger", {})
    risk = updates.pop("_risk", {})
    toggles = updates.pop("_toggles", {})
    costs = updates.pop("_costs", {})
    mode = updates.get("mode", base.mode)
    try:
        updates["ledger_params"] = replace(base.ledger_params, **ledger)
    except ValueError as exc:
        raise ConfigError("ledger", str(exc)) from None
    updates["risk"] = replace(base.risk, **risk)
    updates["toggles"] = replace(Toggles.for_mode(mode), **toggles)
    updates["costs"] = CostModel({**DEFAULT_COSTS, **costs})
    cfg = replace(base, **updates)
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    if not isinstance(cfg.fleet_count, int) or cfg.fleet_count < 1:
        raise ConfigError("fleet.count", "must be ≥ 1")
    if cfg.mode not in MODES:
        raise ConfigError("run.mode", f"unknown mode {cfg.mode!r}")
    if cfg.seed is None or not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("run.seed", "must be an unsigned 64-bit integer")
    if cfg.duration <= 0:
        raise ConfigError("run.duration", "must be > 0")
    if not 1 <= cfg.boot_stages <= 8:
        raise ConfigError("fleet.boot_stages", "must be in 1..8")
    if cfg.boot_faults > cfg.fleet_count:
        raise ConfigError("fleet.boot_faults", "more faults than devices")
    if cfg.risk.restricted_at > cfg.risk.quarantine_at:
        raise ConfigError("zt.restricted_at", "must not exceed zt.quarantine_at")
    if cfg.sweep_min > cfg.sweep_max:
        raise ConfigError("sweep.min", "must not exceed sweep.max")
    if cfg.rollout_version <= cfg.initial_version:
        raise ConfigError("workload.rollout_version", "must exceed fleet.initial_version")
    return cfg


def default_config_text() -> str:
    return resources.files("iotsec.data").joinpath("default.cfg").read_text()


def parse_config(path: str | None) -> ScenarioConfig:
    if path in (None, "default"):
        return parse_config_text(default_config_text())
    with open(path) as fh:
        text = fh.read()
    return parse_config_text(text, base_dir=os.path.dirname(os.path.abspath(path)))
