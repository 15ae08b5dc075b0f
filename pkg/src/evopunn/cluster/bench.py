"""Speedup and efficiency of splitting independent runs across workers."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..grid import ExperimentConfig, split_runs
from .master import dispatch
from .protocol import JobSpec


def speedup(t1: float, tp: float) -> float:
    if t1 <= 0 or tp <= 0:
        raise ValueError("execution times must be positive")
    return t1 / tp


def efficiency(s: float, p: int) -> float:
    if s <= 0 or p < 1:
        raise ValueError("speedup must be positive and P >= 1")
    return s / p


def truncate4(x: float | None) -> str:
    """Format with 4 decimals, cutting rather than rounding the last digit."""
    if x is None:
        return "-"
    # the epsilon keeps exact quotients like 0.9858 from losing a digit to binary error
    return f"{math.floor(x * 1e4 + 1e-7) / 1e4:.4f}"


@dataclass
class BenchRow:
    workers: int
    seconds: float | None
    speedup: float | None = None
    efficiency: float | None = None
    failed: bool = False
    note: str = ""


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    runs: dict[int, list[dict]] = field(default_factory=dict)  # P -> run summaries

    @property
    def p_list(self) -> list[int]:
        return [r.workers for r in self.rows]

    @property
    def optimal_workers(self) -> int | None:
        """P with the highest efficiency, ignoring the trivial P=1 when others exist."""
        candidates = [r for r in self.rows if r.efficiency is not None]
        if len(candidates) > 1:
            candidates = [r for r in candidates if r.workers > 1]
        if not candidates:
            return None
        return max(candidates, key=lambda r: (r.efficiency, -r.workers)).workers

    @property
    def partial(self) -> bool:
        return any(r.failed for r in self.rows)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "optimal_workers": self.optimal_workers,
                "partial": self.partial}

    def write(self, directory) -> None:
        directory = Path(directory)
        (directory / "bench.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(directory / "bench.csv", "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["P", "Tp_seconds", "speedup", "efficiency", "failed"])
            for r in self.rows:
                out.writerow([r.workers, r.seconds, truncate4(r.speedup), truncate4(r.efficiency), int(r.failed)])


def report_from_times(times: dict[int, float | None]) -> BenchReport:
    """Fill speedup and efficiency from raw per-P times (None marks a failure)."""
    report = BenchReport()
    t1 = times.get(1)
    for p in sorted(times):
        tp = times[p]
        row = BenchRow(p, tp, failed=tp is None)
        if tp is not None and t1 is not None:
            row.speedup = speedup(t1, tp)
            row.efficiency = efficiency(row.speedup, p)
        report.rows.append(row)
    return report


def bench(config: ExperimentConfig, dataset_ref: dict, total_runs: int, p_list, endpoints: list[str],
          master_seed: int = 0, connect_timeout: float = 5.0) -> BenchReport:
    """Time ``total_runs`` runs of ``config`` split over each worker count in ``p_list``."""
    p_list = sorted(set(int(p) for p in p_list) | {1})
    if max(p_list) > len(endpoints):
        raise ValueError(f"P={max(p_list)} needs {max(p_list)} workers, have {len(endpoints)}")
    times: dict[int, float | None] = {}
    notes: dict[int, str] = {}
    runs: dict[int, list[dict]] = {}
    for p in p_list:
        jobs = [JobSpec(f"P{p}-w{a.worker}-{os.getpid()}", config, a.runs, dataset_ref)
                for a in split_runs(total_runs, p, master_seed) if a.runs]
        outcome = dispatch(endpoints[: len(jobs)], jobs, connect_timeout)
        runs[p] = outcome.runs
        if outcome.ok:
            times[p] = outcome.seconds
        else:
            times[p] = None
            notes[p] = "; ".join(f.message for f in outcome.failures)
    report = report_from_times(times)
    report.runs = runs
    for row in report.rows:
        row.note = notes.get(row.workers, "")
    return report
