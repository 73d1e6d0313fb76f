"""Continuous-time simulator for nodes with drifting clocks.

Time is an integer tick grid (``ticks_per_L`` ticks per local frame length
L), so interval containment and overlap are exact comparisons.  Every frame
is split into three equal slots.  The real length of a slot follows from the
frame's drift value d: ``L / (3 (1 + d))``, rounded half-to-even to a tick and
then clamped into the exact range allowed by the drift bound.  A frame is
therefore always three whole slots.

Strategies are oblivious, so the whole schedule up to a horizon can be laid
out first.  Receptions are then resolved in one batch.  The result is the same
as processing events in time order.  The horizon doubles until every link is
discovered or the budget runs out.  Each attempt starts from scratch, which
keeps results independent of the doubling.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import rng
from .engine_sync import DiscoveryReport, link_keys
from .impairments import JammerConfig, JammerState, LossModel, check_jamming_topology, jammer_step
from .model import Topology, derive_params, link_table
from .protocols import LISTEN, TRANSMIT, StrategyKind, tx_prob_schedule
from .trace import event_key

DEFAULT_TICKS_PER_L = 720_000
MAX_DRIFT_KNOWN = Fraction(1, 7)
DRIFT_LAWS = ("constant", "resampled", "scripted")


def _exact(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10**9)


@dataclass(frozen=True)
class ClockModel:
    """Drift law of the local clocks.

    ``constant``: one drift per node for the whole run, taken from
    ``values`` or drawn uniformly from [-delta, delta].  ``resampled``: a fresh
    uniform drift for every frame.  ``scripted``: per-node drift lists from
    ``script``, used cyclically.
    """

    delta: float = 0.0
    law: str = "resampled"
    values: Sequence[float] | None = None
    script: Sequence[Sequence[float]] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("drift bound delta must lie in [0, 1)")
        if self.law not in DRIFT_LAWS:
            raise ValueError(f"unknown drift law {self.law!r}")
        if self.law == "scripted" and not self.script:
            raise ValueError("scripted drift law needs a script")
        bound = _exact(self.delta)
        for values in ([self.values] if self.values is not None else []) + list(self.script or []):
            if any(abs(_exact(d)) > bound for d in values):
                raise ValueError(f"drift values must lie in [-{self.delta}, {self.delta}]")
            if self.law == "scripted" and not len(values):
                raise ValueError("empty drift script")

    def drifts(self, node: int, count: int, stream: rng.DrawStream | None = None) -> np.ndarray:
        """Drift values of the node's first ``count`` frames."""
        if self.law == "scripted":
            script = self.script[node % len(self.script)]
            return np.resize(np.asarray(script, dtype=float), count)
        if self.law == "constant":
            if self.values is not None:
                d = float(self.values[node])
            else:
                d = self.delta * (2.0 * stream.next() - 1.0) if stream is not None else 0.0
            return np.full(count, d)
        if stream is None:
            return np.zeros(count)
        return self.delta * (2.0 * stream.take(count) - 1.0)


def slot_length_range(delta: float, ticks_per_L: int) -> tuple[int, int]:
    """Smallest and largest slot length in ticks allowed by the drift bound."""
    d = _exact(delta)
    third = Fraction(ticks_per_L, 3)
    lo = math.ceil(third / (1 + d))
    hi = math.floor(third / (1 - d))
    if lo > hi:
        raise ValueError("tick grid too coarse for this drift bound")
    return lo, hi


def slot_lengths(drifts: np.ndarray, delta: float, ticks_per_L: int) -> np.ndarray:
    lo, hi = slot_length_range(delta, ticks_per_L)
    raw = np.rint(ticks_per_L / (3.0 * (1.0 + np.asarray(drifts, dtype=float))))
    return np.clip(raw, lo, hi).astype(np.int64)


def frame_boundaries(
    clock: ClockModel,
    start: int,
    L: int,
    count: int,
    node: int = 0,
    stream: rng.DrawStream | None = None,
) -> np.ndarray:
    """Real-time (tick) boundaries of ``count`` frames: 3*count+1 slot edges.

    ``L`` is the local frame length in ticks.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    sigma = slot_lengths(clock.drifts(node, count, stream), clock.delta, L)
    return int(start) + np.concatenate([[0], np.cumsum(np.repeat(sigma, 3))])


@dataclass
class FrameSeries:
    """Frames of one node: start ticks and slot lengths (frame = 3 slots)."""

    start: np.ndarray
    slot: np.ndarray

    @property
    def end(self) -> np.ndarray:
        return self.start + 3 * self.slot

    def __len__(self) -> int:
        return len(self.start)

    def slot_interval(self, j: int, k: int) -> tuple[int, int]:
        a = int(self.start[j] + k * self.slot[j])
        return a, a + int(self.slot[j])


FrameTable = list  # list[FrameSeries], indexed by node


@dataclass
class AsyncScenario:
    topology: Topology
    kind: StrategyKind | str
    delta_est: int | None = None
    offsets: Sequence[float] | None = None  # real start times in units of L
    clock: ClockModel = field(default_factory=ClockModel)
    loss: LossModel = field(default_factory=LossModel)
    jammer: JammerConfig = field(default_factory=JammerConfig)
    slot_channels: bool = False  # transmitters re-draw the channel per slot
    budget: float = 1000.0  # real time after the last start, in units of L
    ticks_per_L: int = DEFAULT_TICKS_PER_L
    epsilon: float = 0.1  # only used for the drift-assumption warning
    seed: int = 0
    trial: int = 0

    def __post_init__(self) -> None:
        self.kind = StrategyKind(self.kind)
        if not self.kind.is_async:
            raise ValueError(f"{self.kind.value} needs the synchronous engine")
        if self.kind.needs_delta_est and (self.delta_est is None or self.delta_est < 1):
            raise ValueError(f"{self.kind.value} needs delta_est >= 1")
        n = self.topology.n
        offsets = [0.0] * n if self.offsets is None else [float(o) for o in self.offsets]
        if len(offsets) != n or min(offsets, default=0.0) < 0:
            raise ValueError("offsets must be one non-negative start time per node")
        self.offsets = offsets
        if self.kind is StrategyKind.ASYNC_KNOWN and _exact(self.clock.delta) > MAX_DRIFT_KNOWN:
            raise ValueError(f"drift bound {self.clock.delta} violates delta <= 1/7")
        if self.kind is StrategyKind.ASYNC_UNKNOWN and self.topology.links:
            from .analysis.bounds import drift_assumption_threshold

            p = derive_params(self.topology)
            limit = drift_assumption_threshold(p.N, p.S, self.epsilon, self.slack_L, 1.0)
            if self.clock.delta > limit:
                warnings.warn(
                    f"drift bound {self.clock.delta} exceeds the unknown-degree threshold {limit:.3g}",
                    stacklevel=2,
                )
        if self.jammer.enabled:
            check_jamming_topology(self.topology)
            _, hi = slot_length_range(self.clock.delta, self.ticks_per_L)
            if round(self.jammer.round_length * self.ticks_per_L) < hi:
                raise ValueError("jammer round length must be at least the longest slot")
        if self.budget <= 0:
            raise ValueError("budget must be positive")

    @property
    def offset_ticks(self) -> list[int]:
        return [int(round(o * self.ticks_per_L)) for o in self.offsets]

    @property
    def start_time(self) -> int:
        return max(self.offset_ticks, default=0)

    @property
    def slack_L(self) -> float:
        return max(self.offsets, default=0.0) - min(self.offsets, default=0.0)


@dataclass
class NodeSchedule:
    frames: FrameSeries
    transmit: np.ndarray  # per frame
    channel: np.ndarray  # per frame, channel index (listening / first slot)
    slot_channel: np.ndarray  # (frames, 3) channel index per slot


def build_schedules(sc: AsyncScenario, horizon: int, universal: Sequence[int]) -> list[NodeSchedule]:
    """Frames and actions of every node for all frames starting before ``horizon``."""
    lo, _ = slot_length_range(sc.clock.delta, sc.ticks_per_L)
    cindex = {c: i for i, c in enumerate(universal)}
    out = []
    per_unit = 4 if sc.slot_channels else 2
    for u, off in enumerate(sc.offset_ticks):
        count = max(1, -(-(horizon - off) // (3 * lo)) + 1)
        clock_stream = rng.DrawStream.for_node(sc.seed, sc.trial, rng.CLOCK, u)
        sigma = slot_lengths(sc.clock.drifts(u, count, clock_stream), sc.clock.delta, sc.ticks_per_L)
        start = off + np.concatenate([[0], np.cumsum(3 * sigma)[:-1]])
        keep = int(np.searchsorted(start, horizon, side="left"))
        start, sigma = start[:keep], sigma[:keep]
        chs = np.array([cindex[c] for c in sc.topology.channels[u]], dtype=np.int64)
        a = len(chs)
        draws = rng.DrawStream.for_node(sc.seed, sc.trial, rng.ACTION, u).take(per_unit * keep)
        draws = draws.reshape(keep, per_unit)
        pick = lambda col: chs[np.minimum((draws[:, col] * a).astype(np.int64), a - 1)]
        p = tx_prob_schedule(sc.kind, a, sc.delta_est, np.arange(keep))
        transmit = draws[:, 1] < p
        channel = pick(0)
        if sc.slot_channels:
            slot_channel = np.stack([channel, pick(2), pick(3)], axis=1)
        else:
            slot_channel = np.repeat(channel[:, None], 3, axis=1)
        out.append(NodeSchedule(FrameSeries(start, sigma), transmit, channel, slot_channel))
    return out


@dataclass
class _TxSlots:
    """All transmission slots of one node, in time order."""

    a: np.ndarray
    b: np.ndarray
    ci: np.ndarray
    frame: np.ndarray
    k: np.ndarray


def _tx_slots(s: NodeSchedule) -> _TxSlots:
    j = np.flatnonzero(s.transmit)
    k = np.tile(np.arange(3), len(j))
    jj = np.repeat(j, 3)
    a = s.frames.start[jj] + k * s.frames.slot[jj]
    return _TxSlots(a, a + s.frames.slot[jj], s.slot_channel[jj, k], jj, k)


def _jam_rounds(sc: AsyncScenario, tx: list[_TxSlots], horizon: int, universal):
    """Sequential jammer rounds starting before ``horizon``: list of (scan, start, end, channel index)."""
    length = int(round(sc.jammer.round_length * sc.ticks_per_L))
    first = int(round(sc.jammer.round_offset * sc.ticks_per_L))
    starts = np.arange(first, horizon, length, dtype=np.int64)
    active = []
    for t in tx:
        if not len(t.a):
            active.append(np.full(len(starts), -1))
            continue
        idx = np.searchsorted(t.a, starts, side="right") - 1
        ok = (idx >= 0) & (t.b[np.maximum(idx, 0)] > starts)
        active.append(np.where(ok, t.ci[np.maximum(idx, 0)], -1))
    active = np.stack(active, axis=1) if active else np.full((len(starts), 0), -1)
    stream = rng.DrawStream.for_node(sc.seed, sc.trial, rng.JAMMER)
    state = JammerState()
    rounds = []
    for r, s in enumerate(starts.tolist()):
        scan = frozenset(int(universal[c]) for c in active[r] if c >= 0)
        state = jammer_step(state, scan, stream.next())
        ch = state.current
        rounds.append((scan, s, s + length, None if ch is None else universal.index(ch)))
    return rounds


def _jammed(t: _TxSlots, rounds) -> np.ndarray:
    jams = [(s, e, ci) for _, s, e, ci in rounds if ci is not None]
    if not jams or not len(t.a):
        return np.zeros(len(t.a), dtype=bool)
    js = np.array([j[0] for j in jams])
    je = np.array([j[1] for j in jams])
    jc = np.array([j[2] for j in jams])
    hit = np.zeros(len(t.a), dtype=bool)
    last = np.searchsorted(js, t.b, side="left") - 1
    for back in range(3):
        i = last - back
        ok = i >= 0
        i = np.maximum(i, 0)
        hit |= ok & (je[i] > t.a) & (jc[i] == t.ci)
    return hit


@dataclass
class AsyncOutcome:
    schedules: list[NodeSchedule]
    found: list[int | None]  # absolute tick of first discovery per link
    deliveries: list[tuple]  # (b, u, v, ci, sender frame, slot, receiver frame, lost)
    rounds: list
    horizon: int


def simulate(sc: AsyncScenario, horizon: int) -> AsyncOutcome:
    """Resolve every reception whose slot ends no later than ``horizon``."""
    topo = sc.topology
    n = topo.n
    links, table, universal = link_table(topo)
    sched = build_schedules(sc, horizon, universal)
    tx = [_tx_slots(s) for s in sched]
    rounds = _jam_rounds(sc, tx, horizon, universal) if sc.jammer.enabled else []
    lo, hi = slot_length_range(sc.clock.delta, sc.ticks_per_L)
    reach = -(-hi // lo) + 2  # slots of one node that can overlap a given slot
    found: list[int | None] = [None] * len(links)
    deliveries = []
    # every transmission slot of every node
    node = np.concatenate([np.full(len(t.a), v, dtype=np.int64) for v, t in enumerate(tx)])
    if not len(node):
        return AsyncOutcome(sched, found, deliveries, rounds, horizon)
    a = np.concatenate([t.a for t in tx])
    b = np.concatenate([t.b for t in tx])
    ci = np.concatenate([t.ci for t in tx])
    frame = np.concatenate([t.frame for t in tx])
    kk = np.concatenate([t.k for t in tx])
    alive = b <= horizon
    if rounds:
        alive &= ~np.concatenate([_jammed(t, rounds) for t in tx])
    # candidate (slot, receiver) pairs along existing links, with the receiver's frame
    ps, pu, pg = [], [], []
    for u in range(n):
        fr = sched[u].frames
        if not len(fr.start):
            continue
        idx = np.flatnonzero(alive & (table[ci, node, u] >= 0))
        g = np.searchsorted(fr.start, a[idx], side="right") - 1
        gi = np.maximum(g, 0)
        ok = (g >= 0) & (fr.end[gi] >= b[idx]) & ~sched[u].transmit[gi] & (sched[u].channel[gi] == ci[idx])
        ps.append(idx[ok])
        pu.append(np.full(int(ok.sum()), u, dtype=np.int64))
        pg.append(g[ok])
    if not ps:
        return AsyncOutcome(sched, found, deliveries, rounds, horizon)
    ps, pu, pg = np.concatenate(ps), np.concatenate(pu), np.concatenate(pg)
    pa, pb, pc, pv = a[ps], b[ps], ci[ps], node[ps]
    clear = np.ones(len(ps), dtype=bool)
    for w in range(n):
        tw = tx[w]
        if not len(tw.a):
            continue
        nb = (table[pc, w, pu] >= 0) & (pv != w) & (pu != w)
        last = np.searchsorted(tw.a, pb, side="left") - 1
        for back in range(reach):
            i = last - back
            valid = i >= 0
            i = np.maximum(i, 0)
            clear &= ~(nb & valid & (tw.b[i] > pa) & (tw.ci[i] == pc))
    ps, pu, pg = ps[clear], pu[clear], pg[clear]
    lost = np.zeros(len(ps), dtype=bool)
    if sc.loss.enabled and len(ps):
        ordinal = 3 * frame[ps] + kk[ps]
        pv = node[ps]
        for v, u in sorted(set(zip(pv.tolist(), pu.tolist()))):
            sel = np.flatnonzero((pv == v) & (pu == u))
            coins = rng.generator(sc.seed, sc.trial, rng.LOSS, v, u).random(int(ordinal[sel].max()) + 1)
            lost[sel] = coins[ordinal[sel]] < sc.loss.phi
    for s, u, g, is_lost in zip(ps.tolist(), pu.tolist(), pg.tolist(), lost.tolist()):
        bt, v, c = int(b[s]), int(node[s]), int(ci[s])
        deliveries.append((bt, u, v, c, int(frame[s]), int(kk[s]), g, is_lost))
        li = int(table[c, v, u])
        if not is_lost and (found[li] is None or bt < found[li]):
            found[li] = bt
    deliveries.sort()
    return AsyncOutcome(sched, found, deliveries, rounds, horizon)


def run_async(scenario: AsyncScenario, record: bool = False):
    """Simulate until every link is discovered or the real-time budget runs out.

    Returns ``(events, report)``; ``events`` is None unless ``record``.
    """
    sc = scenario
    lt = sc.ticks_per_L
    t_s = sc.start_time
    end = t_s + int(round(sc.budget * lt))
    horizon = min(end, t_s + 32 * lt)
    links, _, universal = link_table(sc.topology)
    while True:
        out = simulate(sc, horizon)
        done = all(x is not None for x in out.found)
        if done or horizon >= end:
            break
        horizon = min(end, t_s + 2 * (horizon - t_s))
    found = [x if x is not None and x <= end else None for x in out.found]
    success = all(x is not None for x in found)
    cutoff = max([x for x in found if x is not None], default=t_s) if success else end
    report = DiscoveryReport(
        engine="async",
        links=link_keys(links),
        discovery=[None if x is None else max(0, x - t_s) for x in found],
        discovery_abs=found,
        start_time=t_s,
        elapsed=cutoff,
        success=success,
        ticks_per_L=lt,
    )
    events = async_events(sc, out, cutoff, universal) if record else None
    return events, report


def async_events(sc: AsyncScenario, out: AsyncOutcome, cutoff: int, universal) -> list[dict]:
    """Trace records for everything that starts before ``cutoff``."""
    n = sc.topology.n
    links, table, _ = link_table(sc.topology)
    events = []
    for u, s in enumerate(out.schedules):
        fr = s.frames
        if sc.offset_ticks[u] <= cutoff:
            events.append({"t": sc.offset_ticks[u], "node": u, "kind": "start"})
        for j in range(len(fr)):
            st = int(fr.start[j])
            if st >= cutoff:
                break
            sig = int(fr.slot[j])
            mode = TRANSMIT if s.transmit[j] else LISTEN
            events.append({"t": st, "node": u, "kind": "frame_begin", "frame": j, "end": st + 3 * sig,
                           "slots": [st + k * sig for k in range(4)]})
            events.append({"t": st, "node": u, "kind": "channel_select", "frame": j,
                           "channel": universal[s.channel[j]]})
            events.append({"t": st, "node": u, "kind": "mode_select", "frame": j, "mode": mode})
            for k in range(3):
                a = st + k * sig
                events.append({"t": a, "node": u, "kind": "slot_begin", "frame": j, "slot": k})
                if s.transmit[j]:
                    events.append({"t": a, "node": u, "kind": "transmit", "frame": j, "slot": k,
                                   "channel": universal[s.slot_channel[j, k]]})
    for scan, s, e, ci in out.rounds:
        if s >= cutoff:
            break
        events.append({"t": s, "node": n, "kind": "jam_scan", "channels": sorted(scan)})
        events.append({"t": s, "node": n, "kind": "jam_set", "until": e,
                       "channel": None if ci is None else universal[ci]})
    seen = set()
    for bt, u, v, ci, fj, k, g, lost in out.deliveries:
        if bt > cutoff:
            continue
        ev = {"t": bt, "node": u, "kind": "receive", "from": v, "channel": universal[ci],
              "frame": g, "sender_frame": fj, "slot": k}
        if lost:
            ev["lost"] = True
        events.append(ev)
        li = int(table[ci, v, u])
        if not lost and li not in seen:
            seen.add(li)
            events.append({"t": bt, "node": u, "kind": "discover", "from": v, "link": li})
    events.sort(key=event_key)
    return events
