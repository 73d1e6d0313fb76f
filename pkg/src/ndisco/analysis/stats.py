"""Aggregate statistics over run reports, and the per-link stats CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

STATS_COLUMNS = [
    "scenario_id",
    "trial",
    "seed",
    "link_from",
    "link_to",
    "band",
    "discovery_from_Ts",
    "completion_from_Ts",
    "success",
    "within_bound",
]


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("need at least one trial")
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


def within_sigmas(observed: float, expected: float, n: int, k: float = 3.0) -> bool:
    """|observed - expected| <= k binomial standard deviations of ``expected`` over n draws."""
    return abs(observed - expected) <= k * binomial_sigma(expected, n) + 1e-12


def completion_in_units(report) -> float | None:
    """Completion time from the last start: slots (sync) or frame lengths L (async)."""
    c = report.completion
    if c is None:
        return None
    return c / report.ticks_per_L if report.ticks_per_L else float(c)


@dataclass
class CoverageEstimate:
    hits: int
    trials: int
    p: float
    low: float
    high: float


def coverage_estimate(hits: int, trials: int, level: float = 0.95) -> CoverageEstimate:
    low, high = wilson_interval(hits, trials, level)
    return CoverageEstimate(hits, trials, hits / trials, low, high)


def empirical_stats(reports: Sequence, bound: float | None = None) -> dict:
    """Success rate, rate within ``bound`` (same units as completion_in_units), percentiles."""
    if not reports:
        raise ValueError("no reports given")
    times = [completion_in_units(r) for r in reports]
    done = np.array([t for t in times if t is not None], dtype=float)
    n = len(reports)
    out = {
        "trials": n,
        "success_rate": len(done) / n,
        "success_ci": wilson_interval(len(done), n),
    }
    if bound is not None:
        within = sum(1 for t in times if t is not None and t <= bound)
        out["within_bound_rate"] = within / n
        out["within_bound_ci"] = wilson_interval(within, n)
        out["bound"] = bound
    if len(done):
        out["completion_p50"] = float(np.percentile(done, 50))
        out["completion_p90"] = float(np.percentile(done, 90))
        out["completion_max"] = float(done.max())
    return out


def median_completion(reports: Sequence) -> float:
    """Median completion over reports; unfinished runs count as +inf."""
    times = [completion_in_units(r) for r in reports]
    return float(np.median([math.inf if t is None else t for t in times]))


def slowdown_ratio(jammed: Sequence, clean: Sequence) -> float:
    return median_completion(jammed) / median_completion(clean)


def stats_rows(scenario_id: str, trial: int, seed: int, report, bound: float | None) -> list[dict]:
    scale = report.ticks_per_L or 1
    completion = completion_in_units(report)
    within = "" if bound is None else int(completion is not None and completion <= bound)
    rows = []
    for (src, dst, band), t in zip(report.links, report.discovery):
        rows.append({
            "scenario_id": scenario_id,
            "trial": trial,
            "seed": seed,
            "link_from": src,
            "link_to": dst,
            "band": "" if band is None else band,
            "discovery_from_Ts": "" if t is None else _fmt(t / scale),
            "completion_from_Ts": "" if completion is None else _fmt(completion),
            "success": int(report.success),
            "within_bound": within,
        })
    return rows


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_stats_csv(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STATS_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)
