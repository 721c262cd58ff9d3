"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 ledger verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

from .compare import compare_modes, comparison_csv, comparison_text
from .compliance import ChecklistError, compliance_csv, compliance_score, load_checklist
from .config import ConfigError, ScenarioConfig, parse_config, validate
from .ledger import read_chain, verify_chain
from .scenario import run_scenario, summary_text, write_reports
from .sweep import scalability_sweep, sweep_csv, sweep_text

EXIT_OK, EXIT_CONFIG, EXIT_LEDGER = 0, 1, 2


def _load(args) -> ScenarioConfig:
    cfg = parse_config(args.config)
    if getattr(args, "mode", None):
        cfg = cfg.with_mode(args.mode)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return validate(cfg)


def _write(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def cmd_run(args) -> int:
    cfg = _load(args)
    run = run_scenario(cfg)
    write_reports(run, args.out)
    sys.stdout.write(summary_text(run.report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    changes = {k: v for k, v in (("sweep_min", args.min), ("sweep_max", args.max),
                                 ("sweep_step", args.step)) if v is not None}
    if "sweep_max" in changes and "sweep_min" not in changes:
        changes["sweep_min"] = min(cfg.sweep_min, changes["sweep_max"])
    cfg = validate(replace(cfg, **changes))
    result = scalability_sweep(cfg, workers=args.workers)
    _write(args.out, "sweep.csv", sweep_csv(result))
    _write(args.out, "sweep.txt", sweep_text(result))
    sys.stdout.write(sweep_text(result))
    return EXIT_OK


def cmd_verify(args) -> int:
    verdict = verify_chain(read_chain(args.chain))
    print(verdict)
    if not verdict.ok:
        print(f"ledger verification failed: {verdict}", file=sys.stderr)
        return EXIT_LEDGER
    return EXIT_OK


def cmd_score(args) -> int:
    if args.log:
        checklist = load_checklist(args.checklist or "default")
        with open(args.log) as fh:
            log = [json.loads(line) for line in fh if line.strip()]
    else:
        cfg = _load(args)
        checklist = load_checklist(args.checklist or cfg.checklist)
        log = run_scenario(cfg, checklist=checklist).report.log
    result = compliance_score(log, checklist)
    _write(args.out, "compliance.csv", compliance_csv(result, checklist))
    print(f"compliance {result.total:.0f}%")
    for cat, pct in result.per_category.items():
        print(f"  {cat:<20}{pct:6.1f}%")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    cols, _ = compare_modes(cfg)
    _write(args.out, "comparison.csv", comparison_csv(cols))
    _write(args.out, "comparison.txt", comparison_text(cols))
    sys.stdout.write(comparison_text(cols))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iotsec", description="IoT security architecture simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp, mode=True):
        sp.add_argument("--config", default="default", help="config file or 'default'")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory")
        if mode:
            sp.add_argument("--mode", choices=("proposed", "perimeter", "cloud", "cloud_centric"))

    sp = sub.add_parser("run", help="run one scenario and write reports")
    scenario_args(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="ledger scalability sweep")
    scenario_args(sp, mode=False)
    sp.add_argument("--min", type=int, default=None)
    sp.add_argument("--max", type=int, default=None)
    sp.add_argument("--step", type=int, default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify-ledger", help="verify a persisted chain file")
    sp.add_argument("chain")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("score", help="compliance score of a scenario or an existing event log")
    scenario_args(sp)
    sp.add_argument("--log", default=None, help="events.jsonl to score instead of running")
    sp.add_argument("--checklist", default=None)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("compare", help="compare the three architecture modes")
    scenario_args(sp, mode=False)
    sp.set_defaults(func=cmd_compare)
    return p


def dispatch(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChecklistError as exc:
        print(f"checklist error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.command} finished in {time.perf_counter() - started:.2f} s", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
