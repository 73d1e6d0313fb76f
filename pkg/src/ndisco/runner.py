"""Turn a validated scenario into engine runs, serially or across processes."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .analysis.bounds import BoundError, BoundInputs, BoundsReport, compute_bounds
from .config import Scenario
from .engine_async import AsyncScenario, ClockModel, run_async
from .engine_sync import DiscoveryReport, SyncScenario, _jam_ticks, run_sync
from .model import derive_params


def trial_threads(requested: int | None = None) -> int:
    """Worker count: available CPUs, capped by NDISCO_THREADS and ``requested``."""
    n = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    cap = os.environ.get("NDISCO_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    if requested:
        n = min(n, requested)
    return max(1, n)


def bound_inputs(sc: Scenario) -> BoundInputs:
    p = derive_params(sc.topology)
    return BoundInputs.from_params(
        p,
        eps=sc["epsilon"],
        delta_est=sc.delta_est,
        theta=sc["theta"],
        drift=sc["clock"].get("delta", 0.0),
        phi=sc["loss"].get("phi", 0.0),
    )


def scenario_bounds(sc: Scenario) -> BoundsReport | None:
    if not sc.topology.links:
        return None
    return compute_bounds(sc.kind, bound_inputs(sc))


def bound_value(report: BoundsReport | None) -> float | None:
    """The bound in completion units: slots (sync) or frame lengths L (async), loss-adjusted."""
    if report is None:
        return None
    if report.time_with_loss is not None:
        return report.time_with_loss
    return report.total_with_loss


def default_budget(sc: Scenario) -> float:
    if sc["budget"] is not None:
        return sc["budget"]
    try:
        b = bound_value(scenario_bounds(sc))
    except BoundError:
        b = None
    if b is None:
        return 1
    return math.ceil(sc["budget_factor"] * b)


def trial_offsets(sc: Scenario, trial: int) -> list[float]:
    n = sc.topology.n
    if sc["offsets"] is not None:
        return list(sc["offsets"])
    theta = sc["theta"]
    if not theta:
        return [0] * n
    g = rng.generator(sc["seed"], trial, rng.OFFSET)
    if sc.engine == "sync":
        return [int(x) for x in g.integers(0, int(theta) + 1, size=n)]
    return [float(x) for x in g.uniform(0.0, float(theta), size=n)]


def engine_scenario(sc: Scenario, trial: int):
    common = dict(
        topology=sc.topology,
        kind=sc.kind,
        delta_est=sc.delta_est,
        offsets=trial_offsets(sc, trial),
        loss=sc.loss,
        jammer=sc.jammer,
        seed=sc["seed"],
        trial=trial,
    )
    if sc.engine == "sync":
        return SyncScenario(budget=int(default_budget(sc)), **common)
    slot_channels = sc["slot_channels"]
    if slot_channels is None:
        slot_channels = sc.jammer.enabled
    return AsyncScenario(
        clock=ClockModel(**sc["clock"]),
        slot_channels=slot_channels,
        budget=float(default_budget(sc)),
        ticks_per_L=sc["ticks_per_L"],
        epsilon=sc["epsilon"],
        **common,
    )


@dataclass
class TrialResult:
    trial: int
    report: DiscoveryReport
    header: dict | None = None
    events: list | None = None


def run_trial(sc: Scenario, trial: int, record: bool = False) -> TrialResult:
    es = engine_scenario(sc, trial)
    if sc.engine == "sync":
        events, report = run_sync(es, record=record)
        params = {"kind": es.kind.value, "delta_est": es.delta_est, "offsets": es.offsets,
                  "phi": es.loss.phi, "budget": es.budget, "horizon": report.elapsed,
                  "jam_ticks_per_slot": _jam_ticks(es.jammer)[0] if es.jammer.enabled else None}
    else:
        events, report = run_async(es, record=record)
        params = {"kind": es.kind.value, "delta_est": es.delta_est, "offsets": es.offset_ticks,
                  "phi": es.loss.phi, "budget": es.budget, "horizon": report.elapsed,
                  "ticks_per_L": es.ticks_per_L, "drift": es.clock.delta, "drift_law": es.clock.law,
                  "slot_channels": es.slot_channels}
    header = None
    if record:
        header = {"engine": sc.engine, "topology": sc.topology.to_dict(), "seed": sc["seed"],
                  "trial": trial, "params": params, "config": sc.doc, "report": report.to_dict()}
    return TrialResult(trial, report, header, events)


def _run_one(args):
    sc, trial, record = args
    return run_trial(sc, trial, record)


def run_trials(sc: Scenario, trials: int | None = None, record: bool = False,
               threads: int | None = None) -> list[TrialResult]:
    """Results ordered by trial index.  Each trial's randomness depends only on
    (seed, trial), so the worker count does not change any result."""
    count = trials if trials is not None else sc["trials"]
    jobs = [(sc, t, record) for t in range(count)]
    workers = trial_threads(threads)
    if workers <= 1 or count <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, count // (4 * workers))))


def completion_array(results: list[TrialResult]) -> np.ndarray:
    from .analysis.stats import completion_in_units

    return np.array([np.inf if (c := completion_in_units(r.report)) is None else c for r in results])
