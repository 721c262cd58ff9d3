"""Architecture comparison: one workload and attack suite under every mode."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .config import MODES, ScenarioConfig
from .scenario import ScenarioRun, run_scenario

ROWS = ("security_effectiveness", "attack_resistance", "hardware_requirements", "deployment_complexity")


@dataclass(frozen=True)
class ModeColumn:
    mode: str
    security_effectiveness: float
    attack_resistance: float
    hardware_requirements: str
    deployment_complexity: str


def compare_modes(cfg: ScenarioConfig, modes=MODES) -> tuple[list[ModeColumn], dict[str, ScenarioRun]]:
    hardware = dict(cfg.hardware_labels)
    complexity = dict(cfg.complexity_labels)
    cols, runs = [], {}
    for mode in modes:
        run = run_scenario(cfg.with_mode(mode))
        r = run.report
        runs[mode] = run
        cols.append(ModeColumn(mode, r.compliance_total, r.attack_resistance,
                               hardware.get(mode, ""), complexity.get(mode, "")))
    return cols, runs


def comparison_csv(cols: list[ModeColumn]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("metric", *(c.mode for c in cols)))
    for row in ROWS:
        w.writerow((row, *(_fmt(getattr(c, row)) for c in cols)))
    return buf.getvalue()


def comparison_text(cols: list[ModeColumn]) -> str:
    lines = [f"{'metric':<24}" + "".join(f"{c.mode:>12}" for c in cols)]
    for row in ROWS:
        cells = []
        for c in cols:
            v = getattr(c, row)
            cells.append(f"{v:>11.0f}%" if isinstance(v, float) else f"{v:>12}")
        lines.append(f"{row:<24}" + "".join(cells))
    return "\n".join(lines) + "\n"


def _fmt(v):
    return f"{v:.1f}" if isinstance(v, float) else v
