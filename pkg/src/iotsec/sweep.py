"""Scalability sweep: commit latency and backlog of the ledger versus fleet size.

The load model counts events instead of hashing them.  Each device
uploads its audit events in store-and-forward bursts of ``burst`` events;
bursts arrive as a Poisson process at rate lam / burst per device, so the
long-run event rate per device is lam.  Every device owns a seeded stream,
so the fleet at N + step sees exactly the arrivals of the fleet at N plus
those of the new devices.
"""

from __future__ import annotations

import csv
import io
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from heapq import merge

from .config import ScenarioConfig
from .ledger import ConsensusParams, SealQueue, analytic_latency, utilization

SATURATION_WINDOWS = 5


@dataclass(frozen=True)
class SweepPoint:
    n_devices: int
    rho: float
    mean_latency: float
    p95_latency: float
    backlog: int
    analytic: float
    saturated: bool


@dataclass(frozen=True)
class SweepResult:
    points: list
    knee: int | None
    saturation: int | None


def device_bursts(seed: int, device: int, rate: float, horizon: float) -> list[float]:
    rng = random.Random(f"{seed}/sweep/{device}")
    out = []
    t = rng.expovariate(rate)
    while t < horizon:
        out.append(t)
        t += rng.expovariate(rate)
    return out


def backlog_grows(backlog: list[int], windows: int = SATURATION_WINDOWS) -> bool:
    """True when the window means over the final half strictly increase."""
    tail = backlog[len(backlog) // 2:]
    size = len(tail) // windows
    if size == 0:
        return False
    means = [sum(tail[i * size:(i + 1) * size]) / size for i in range(windows)]
    return all(b > a for a, b in zip(means, means[1:]))


def simulate_point(params: ConsensusParams, arrivals: list[float], burst: int, slots: int):
    """Seal every block interval; returns (queue, backlog after each seal)."""
    q = SealQueue(params)
    backlog = []
    i, n = 0, len(arrivals)
    tb = params.block_interval
    for k in range(1, slots + 1):
        now = k * tb
        while i < n and arrivals[i] <= now:
            q.push(arrivals[i], burst)
            i += 1
        q.take(now)
        backlog.append(q.pending_count)
    return q, backlog


def _point(args) -> SweepPoint:
    params, lam, n_dev, arrivals, burst, slots = args
    q, backlog = simulate_point(params, arrivals, burst, slots)
    rho = utilization(params, n_dev, lam)
    return SweepPoint(n_dev, rho, q.mean_latency, q.percentile(0.95), q.pending_count,
                      analytic_latency(params, rho), backlog_grows(backlog))


def fleet_sizes(cfg: ScenarioConfig) -> list[int]:
    return list(range(cfg.sweep_min, cfg.sweep_max + 1, cfg.sweep_step))


def scalability_sweep(cfg: ScenarioConfig, sizes: list[int] | None = None, workers: int = 1) -> SweepResult:
    sizes = fleet_sizes(cfg) if sizes is None else list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("fleet sizes must be ascending")
    params = cfg.ledger_params
    horizon = cfg.sweep_slots * params.block_interval
    rate = cfg.lam / cfg.burst
    streams: list[list[float]] = []
    jobs = []
    for n_dev in sizes:
        while len(streams) < n_dev:
            streams.append(device_bursts(cfg.seed, len(streams), rate, horizon))
        arrivals = list(merge(*streams[:n_dev]))
        jobs.append((params, cfg.lam, n_dev, arrivals, cfg.burst, cfg.sweep_slots))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            points = list(pool.map(_point, jobs))
    else:
        points = [_point(j) for j in jobs]
    return SweepResult(points, find_knee(points), find_saturation(points))


def find_knee(points: list[SweepPoint]) -> int | None:
    if not points:
        return None
    base = points[0].mean_latency
    for p in points:
        if p.mean_latency >= 2 * base:
            return p.n_devices
    return None


def find_saturation(points: list[SweepPoint]) -> int | None:
    for p in points:
        if p.saturated:
            return p.n_devices
    return None


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("N", "mean_latency_s", "p95_latency_s", "backlog"))
    for p in result.points:
        w.writerow((p.n_devices, f"{p.mean_latency:.6f}", f"{p.p95_latency:.6f}", p.backlog))
    return buf.getvalue()


def sweep_text(result: SweepResult) -> str:
    lines = [f"{'N':>6}{'rho':>7}{'mean_s':>10}{'p95_s':>10}{'analytic_s':>12}{'backlog':>10}"]
    for p in result.points:
        lines.append(f"{p.n_devices:>6}{p.rho:>7.3f}{p.mean_latency:>10.3f}{p.p95_latency:>10.3f}"
                     f"{p.analytic:>12.3f}{p.backlog:>10}")
    lines.append(f"knee {result.knee}  saturation {result.saturation}")
    return "\n".join(lines) + "\n"
