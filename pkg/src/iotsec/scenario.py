"""Scenario runs and the metrics report."""

from __future__ import annotations

import csv
import io
import os
from collections import Counter
from dataclasses import dataclass, field

from .attacks import Campaign, load_attack_suite, resistance_score
from .compliance import compliance_csv, compliance_score, load_checklist
from .config import ScenarioConfig, validate
from .costs import OP_CLASSES, cost_csv
from .device import census_csv
from .engine import canonical_log, log_digest
from .ledger import write_chain
from .network import World
from .zerotrust import risk_trace_csv


@dataclass
class OpSummary:
    op_class: str
    count: int
    energy_pct: float
    memory_kb: float
    time_ms: float


@dataclass
class MetricsReport:
    mode: str
    toggles: str
    seed: int
    ops: dict
    peak_memory: dict
    commit_latency_mean: float
    commit_latency_p95: float
    ledger_blocks: int
    ledger_pending: int
    attack_outcomes: dict
    attack_resistance: float
    compliance_total: float
    compliance_categories: dict
    compliance_passed: dict
    tallies: dict
    log_digest: str
    log: list = field(repr=False, default_factory=list)


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    world: World
    report: MetricsReport
    suite: list
    checklist: list


def build_world(cfg: ScenarioConfig, suite=None) -> tuple[World, Campaign | None]:
    validate(cfg)
    world = World(cfg)
    world.build_fleet()
    world.schedule_lifecycle()
    campaign = None
    if suite:
        campaign = Campaign(world, suite)
        campaign.inject_all()
    return world, campaign


def log_tallies(log: list[dict]) -> dict:
    """Counts derived from the log only; the report must agree with these."""
    c = Counter()
    for r in log:
        kind, outcome, d = r["kind"], r["outcome"], r.get("detail", {})
        c[f"{kind}:{outcome}"] += 1
        if kind == "boot" and d.get("measured"):
            c["ops:tee_init"] += 1
        elif kind == "deliver" and outcome in ("delivered", "auth_failure"):
            c["ops:secure_comm"] += 2
        if kind == "authorize" and d.get("policy") == "semantic":
            c["ops:semantic_proc"] += 1
        if kind == "deliver" and d.get("annotated"):
            c["ops:semantic_proc"] += 1
        if d.get("audit"):
            c["ops:blockchain_op"] += 1
    return dict(sorted(c.items()))


def run_scenario(cfg: ScenarioConfig, suite=None, checklist=None) -> ScenarioRun:
    """Provision, boot, attest, admit, operate and attack; then aggregate."""
    if suite is None:
        suite = load_attack_suite(cfg.attacks)
    if checklist is None:
        checklist = load_checklist(cfg.checklist)
    world, campaign = build_world(cfg, suite)
    world.sim.run_until(cfg.duration)
    world.finish()
    log = world.sim.log
    ops = {}
    by_class = {k: [] for k in OP_CLASSES}
    for rec in world.costs.records:
        by_class[rec.op_class].append(rec)
    for op in OP_CLASSES:
        recs = by_class[op]
        n = len(recs)
        if n:
            ops[op] = OpSummary(op, n, sum(r.energy_pct for r in recs) / n,
                                sum(r.memory_kb for r in recs) / n, sum(r.time_ms for r in recs) / n)
        else:
            ops[op] = OpSummary(op, 0, 0.0, 0.0, 0.0)
    if world.ledger is not None:
        q = world.ledger.queue
        mean, p95 = q.mean_latency, q.percentile(0.95)
        blocks, pending = len(world.ledger.blocks), world.ledger.pending
    else:
        mean = p95 = 0.0
        blocks = pending = 0
    outcomes = dict(campaign.outcomes) if campaign else {}
    comp = compliance_score(log, checklist)
    report = MetricsReport(
        mode=cfg.mode, toggles=cfg.toggles.label(), seed=cfg.seed, ops=ops,
        peak_memory=world.costs.peak_memory(), commit_latency_mean=mean, commit_latency_p95=p95,
        ledger_blocks=blocks, ledger_pending=pending, attack_outcomes=outcomes,
        attack_resistance=resistance_score(outcomes, suite) if suite else 100.0,
        compliance_total=comp.total, compliance_categories=comp.per_category,
        compliance_passed=comp.passed, tallies=log_tallies(log), log_digest=log_digest(log), log=log)
    return ScenarioRun(cfg, world, report, suite, checklist)


def overhead_report(report: MetricsReport) -> list[tuple[str, float, float, float]]:
    rows = []
    for op in OP_CLASSES:
        s = report.ops[op]
        if s.count == 0:
            raise ValueError(f"operation class {op} never occurred")
        rows.append((op, round(s.energy_pct, 6), round(s.memory_kb, 6), round(s.time_ms, 6)))
    return rows


# ---------------------------------------------------------------------------
# output files

def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_text(report: MetricsReport) -> str:
    lines = [f"mode {report.mode} toggles {report.toggles} seed {report.seed}", "",
             f"{'operation':<15}{'energy_%':>10}{'memory_kb':>11}{'time_ms':>9}{'count':>8}"]
    for op in OP_CLASSES:
        s = report.ops[op]
        lines.append(f"{op:<15}{s.energy_pct:>10.1f}{s.memory_kb:>11.1f}{s.time_ms:>9.0f}{s.count:>8}")
    lines += ["",
              f"commit latency mean {report.commit_latency_mean:.3f} s, p95 {report.commit_latency_p95:.3f} s, "
              f"blocks {report.ledger_blocks}, pending {report.ledger_pending}",
              f"attack resistance {report.attack_resistance:.0f}%",
              f"compliance {report.compliance_total:.0f}%"]
    for cat, pct in report.compliance_categories.items():
        lines.append(f"  {cat:<20}{pct:6.1f}%")
    for aid, out in sorted(report.attack_outcomes.items()):
        lines.append(f"  attack {aid:<14}{out}")
    lines.append(f"log sha256 {report.log_digest}")
    return "\n".join(lines) + "\n"


def write_reports(run: ScenarioRun, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    r = run.report
    files = {
        "overhead.csv": _csv([(o, e, m, t) for o, e, m, t in overhead_rows_safe(r)],
                             ("op_class", "energy_pct", "memory_kb", "time_ms")),
        "op_counts.csv": _csv([(op, r.ops[op].count) for op in OP_CLASSES], ("op_class", "count")),
        "costs.csv": cost_csv(run.world.costs.records),
        "peak_memory.csv": _csv(sorted(r.peak_memory.items()), ("device_id", "peak_memory_kb")),
        "attacks.csv": _csv([(sc.attack_id, sc.kind, sc.variant, sc.weight, r.attack_outcomes.get(sc.attack_id, ""))
                             for sc in run.suite], ("attack_id", "kind", "variant", "weight", "outcome")),
        "compliance.csv": compliance_csv(compliance_score(r.log, run.checklist), run.checklist),
        "census.csv": census_csv(run.world.devices.values()),
        "risk_trace.csv": risk_trace_csv(run.world.risk_trace),
        "events.jsonl": canonical_log(r.log),
        "summary.txt": summary_text(r),
    }
    written = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        written.append(path)
    if run.world.ledger is not None:
        path = os.path.join(out_dir, "ledger.chain")
        write_chain(path, run.world.ledger.blocks)
        written.append(path)
    return written


def overhead_rows_safe(report: MetricsReport):
    return [(op, round(s.energy_pct, 6), round(s.memory_kb, 6), round(s.time_ms, 6)) for op, s in
            ((op, report.ops[op]) for op in OP_CLASSES) if s.count]
