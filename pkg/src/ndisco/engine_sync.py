"""Slotted synchronous simulator.

All nodes share slot boundaries.  Nodes start at individual slot offsets and
are silent before that.  Because strategies never react to receptions, a
block of slots can be simulated at once: actions for the whole block are drawn
per node, then receptions are resolved with array operations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from . import rng
from .impairments import (
    JammerConfig,
    JammerState,
    LossModel,
    check_jamming_topology,
    jammer_step,
    round_starts,
)
from .model import Link, Topology, link_table
from .protocols import LISTEN, TRANSMIT, StrategyKind, tx_prob_schedule
from .trace import event_key

JAM_GRID = 720  # jammer ticks per slot when timing is fractional


@dataclass
class SyncScenario:
    topology: Topology
    kind: StrategyKind | str
    delta_est: int | None = None
    offsets: Sequence[int] | None = None
    loss: LossModel = field(default_factory=LossModel)
    jammer: JammerConfig = field(default_factory=JammerConfig)
    budget: int = 10_000  # slots after the last node has started
    seed: int = 0
    trial: int = 0

    def __post_init__(self) -> None:
        self.kind = StrategyKind(self.kind)
        if self.kind.is_async:
            raise ValueError(f"{self.kind.value} needs the asynchronous engine")
        if self.kind.needs_delta_est and (self.delta_est is None or self.delta_est < 1):
            raise ValueError(f"{self.kind.value} needs delta_est >= 1")
        n = self.topology.n
        offsets = [0] * n if self.offsets is None else [int(o) for o in self.offsets]
        if len(offsets) != n or min(offsets, default=0) < 0:
            raise ValueError("offsets must be one non-negative slot per node")
        if self.kind.identical_start and any(offsets):
            raise ValueError(f"{self.kind.value} requires all nodes to start together")
        self.offsets = offsets
        if self.jammer.enabled:
            check_jamming_topology(self.topology)
        if self.budget < 0:
            raise ValueError("budget must be non-negative")

    @property
    def start_time(self) -> int:
        return max(self.offsets, default=0)

    @property
    def slack(self) -> int:
        return max(self.offsets, default=0) - min(self.offsets, default=0)


@dataclass
class DiscoveryReport:
    """Outcome of one run.

    ``discovery`` holds, per link, the elapsed time from ``start_time`` until
    the end of the unit in which the link was first discovered, or None.
    Units are slots for the synchronous engine and ticks for the
    asynchronous one (``ticks_per_L`` converts).
    """

    engine: str
    links: list[tuple[int, int, int | None]]
    discovery: list[int | None]
    discovery_abs: list[int | None]
    start_time: int
    elapsed: int
    success: bool
    ticks_per_L: int | None = None

    @property
    def completion(self) -> int | None:
        if not self.success:
            return None
        return max(self.discovery, default=0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "engine": self.engine,
            "links": [list(l) for l in self.links],
            "discovery": self.discovery,
            "discovery_abs": self.discovery_abs,
            "start_time": self.start_time,
            "elapsed": self.elapsed,
            "success": self.success,
            "ticks_per_L": self.ticks_per_L,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DiscoveryReport":
        return cls(
            engine=d["engine"],
            links=[tuple(l) for l in d["links"]],
            discovery=list(d["discovery"]),
            discovery_abs=list(d["discovery_abs"]),
            start_time=d["start_time"],
            elapsed=d["elapsed"],
            success=d["success"],
            ticks_per_L=d.get("ticks_per_L"),
        )


def link_keys(links: Sequence[Link]) -> list[tuple[int, int, int | None]]:
    return [(l.src, l.dst, l.band) for l in links]


def _jam_ticks(cfg: JammerConfig) -> tuple[int, int, int]:
    """(ticks per slot, round length, round offset) on an exact integer grid."""
    length = Fraction(cfg.round_length).limit_denominator(JAM_GRID)
    offset = Fraction(cfg.round_offset).limit_denominator(JAM_GRID)
    if length < 1:
        raise ValueError("jammer round length must be at least one slot")
    tps = math.lcm(length.denominator, offset.denominator)
    return tps, int(length * tps), int(offset * tps)


class _SyncRun:
    def __init__(self, sc: SyncScenario, record: bool):
        self.sc = sc
        self.record = record
        topo = sc.topology
        self.n = topo.n
        self.links, self.table, self.universal = link_table(topo)
        self.cindex = {c: i for i, c in enumerate(self.universal)}
        self.node_ci = [np.array([self.cindex[c] for c in chs], dtype=np.int64) for chs in topo.channels]
        self.streams = [rng.DrawStream.for_node(sc.seed, sc.trial, rng.ACTION, u) for u in range(self.n)]
        self.loss_streams = (
            [rng.DrawStream.for_node(sc.seed, sc.trial, rng.LOSS, u) for u in range(self.n)]
            if sc.loss.enabled else None
        )
        self.found_abs: list[int | None] = [None] * len(self.links)
        self.remaining = len(self.links)
        self.events: list[dict] = []  # jammer events waiting to be merged into the trace
        self.trace_events: list[dict] = []
        self.coverage: np.ndarray | None = None  # per-link count of covering slots, when counting
        if sc.jammer.enabled:
            self.tps, self.jlen, self.joff = _jam_ticks(sc.jammer)
            self.jstream = rng.DrawStream.for_node(sc.seed, sc.trial, rng.JAMMER)
            self.jstate = JammerState()
            self.jams: list[tuple[int, int, int]] = []  # (channel index, start tick, end tick)

    # -- actions ------------------------------------------------------------

    def actions(self, t0: int, t1: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(active, transmit, channel index) arrays of shape (slots, N)."""
        sc = self.sc
        nb = t1 - t0
        active = np.zeros((nb, self.n), dtype=bool)
        tx = np.zeros((nb, self.n), dtype=bool)
        chan = np.zeros((nb, self.n), dtype=np.int64)
        for u in range(self.n):
            first = max(t0, sc.offsets[u])
            if first >= t1:
                continue
            count = t1 - first
            draws = self.streams[u].take(2 * count).reshape(count, 2)
            a = len(self.node_ci[u])
            local = np.arange(first - sc.offsets[u], t1 - sc.offsets[u])
            p = tx_prob_schedule(sc.kind, a, sc.delta_est, local)
            pick = np.minimum((draws[:, 0] * a).astype(np.int64), a - 1)
            rows = slice(first - t0, nb)
            active[rows, u] = True
            chan[rows, u] = self.node_ci[u][pick]
            tx[rows, u] = draws[:, 1] < p
        return active, tx, chan

    # -- jammer -------------------------------------------------------------

    def jam_mask(self, t0: int, t1: int, tx: np.ndarray, chan: np.ndarray) -> np.ndarray:
        """mask[b, ci] is True when channel ci is jammed at some point of slot t0+b."""
        nb = t1 - t0
        mask = np.zeros((nb, len(self.universal)), dtype=bool)
        tps = self.tps
        for s in round_starts(self.joff, self.jlen, t0 * tps, t1 * tps):
            b = s // tps - t0
            scan = frozenset(int(self.universal[c]) for c in np.unique(chan[b][tx[b]]))
            self.jstate = jammer_step(self.jstate, scan, self.jstream.next())
            ch = self.jstate.current
            if self.record:
                self.events.append({"t": t0 + b, "node": self.n, "kind": "jam_scan", "tick": s,
                                    "channels": sorted(scan)})
                self.events.append({"t": t0 + b, "node": self.n, "kind": "jam_set", "tick": s,
                                    "until": s + self.jlen, "channel": ch})
            if ch is not None:
                self.jams.append((self.cindex[ch], s, s + self.jlen))
        keep = []
        for ci, s, e in self.jams:
            lo = max(s // tps, t0)
            hi = min(-(-e // tps), t1)  # slots overlapping [s, e)
            if hi > lo:
                mask[lo - t0:hi - t0, ci] = True
            if e > t1 * tps:
                keep.append((ci, s, e))
        self.jams = keep
        return mask

    # -- one block ----------------------------------------------------------

    def block(self, t0: int, t1: int) -> None:
        sc = self.sc
        active, tx, chan = self.actions(t0, t1)
        listen = active & ~tx
        sent = tx
        if sc.jammer.enabled:
            jm = self.jam_mask(t0, t1, tx, chan)
            sent = tx & ~np.take_along_axis(jm, chan, axis=1)
        # lk[b, v, r]: link index of v -> r on v's channel, or -1
        lk = self.table[chan[:, :, None], np.arange(self.n)[None, :, None], np.arange(self.n)[None, None, :]]
        hear = tx[:, :, None] & listen[:, None, :] & (chan[:, :, None] == chan[:, None, :]) & (lk >= 0)
        clear = hear & (hear.sum(axis=1, keepdims=True) == 1) & sent[:, :, None]
        lost = None
        if self.loss_streams is not None:
            coins = np.stack([s.take(t1 - t0) for s in self.loss_streams], axis=1)
            lost = coins < sc.loss.phi
            delivered = clear & ~lost[:, None, :]
        else:
            delivered = clear
        if self.record:
            self._record(t0, t1, active, tx, chan, clear, delivered)
        bs, vs, rs = np.nonzero(delivered)
        if self.coverage is not None:
            np.add.at(self.coverage, lk[bs, vs, rs], 1)
        if len(bs):
            ids = lk[bs, vs, rs]
            uniq, first = np.unique(ids, return_index=True)
            for li, i in zip(uniq.tolist(), first.tolist()):
                if self.found_abs[li] is None:
                    self.found_abs[li] = t0 + int(bs[i])
                    self.remaining -= 1

    def _record(self, t0, t1, active, tx, chan, clear, delivered) -> None:
        n = self.n
        offsets = self.sc.offsets
        newly = {}
        bs, vs, rs = np.nonzero(delivered)
        seen = set(li for li, t in enumerate(self.found_abs) if t is not None)
        for b, v, r in zip(bs.tolist(), vs.tolist(), rs.tolist()):
            li = int(self.table[chan[b, v], v, r])
            if li not in seen:
                seen.add(li)
                newly[(b, r, v)] = li
        per_slot: dict[int, list[dict]] = {}
        for ev in self.events:
            per_slot.setdefault(ev["t"], []).append(ev)
        self.events = []
        out = []
        for b in range(t1 - t0):
            t = t0 + b
            out.extend(per_slot.pop(t, []))
            for u in range(n):
                if not active[b, u]:
                    continue
                if t == offsets[u]:
                    out.append({"t": t, "node": u, "kind": "start"})
                ch = self.universal[chan[b, u]]
                out.append({"t": t, "node": u, "kind": "channel_select", "channel": ch})
                out.append({"t": t, "node": u, "kind": "mode_select", "mode": TRANSMIT if tx[b, u] else LISTEN})
                if tx[b, u]:
                    out.append({"t": t, "node": u, "kind": "transmit", "channel": ch})
            for r in range(n):
                for v in np.flatnonzero(clear[b, :, r]).tolist():
                    ev = {"t": t, "node": r, "kind": "receive", "from": v, "channel": self.universal[chan[b, r]]}
                    if not delivered[b, v, r]:
                        ev["lost"] = True
                    out.append(ev)
                    if (b, r, v) in newly:
                        out.append({"t": t, "node": r, "kind": "discover", "from": v, "link": newly[(b, r, v)]})
        out.sort(key=event_key)
        self.trace_events.extend(out)


def run_sync(scenario: SyncScenario, record: bool = False, block: int = 64):
    """Simulate until every link is discovered or the budget runs out.

    Returns ``(events, report)``; ``events`` is None unless ``record``.
    """
    run = _SyncRun(scenario, record)
    t_s = scenario.start_time
    horizon = t_s + scenario.budget
    t = 0
    size = block
    while run.remaining and t < horizon:
        t1 = min(t + size, horizon)
        run.block(t, t1)
        t = t1
        size = min(size * 2, 1024)
    elapsed = t
    if not run.remaining:
        elapsed = max([x + 1 for x in run.found_abs], default=0)
    report = DiscoveryReport(
        engine="sync",
        links=link_keys(run.links),
        discovery=[None if x is None else max(0, x + 1 - t_s) for x in run.found_abs],
        discovery_abs=list(run.found_abs),
        start_time=t_s,
        elapsed=elapsed,
        success=run.remaining == 0,
    )
    return (run.trace_events if record else None), report


def coverage_counts(scenario: SyncScenario, slots: int, block: int = 1024) -> np.ndarray:
    """Per link, the number of slots among the first ``slots`` in which it received a
    clear (and not lost) message, ignoring when discovery completes."""
    run = _SyncRun(scenario, False)
    run.coverage = np.zeros(len(run.links), dtype=np.int64)
    for t in range(0, slots, block):
        run.block(t, min(t + block, slots))
    return run.coverage


# -- exact oracle ---------------------------------------------------------------

ENUMERATION_LIMIT = 10**7


def exact_coverage_prob_slot(
    topology: Topology,
    link: Link | tuple[int, int],
    tx_probs: Sequence[float],
    channel_probs: Sequence[Mapping[int, float]] | None = None,
    channel: int | None = None,
) -> float:
    """Probability that one slot covers ``link`` (sender -> receiver).

    With ``channel`` given, only coverage on that channel is counted.

    Every joint (channel, mode) outcome of the nodes that matter is
    enumerated: the receiver, the sender and the receiver's other in-neighbours.
    Channel laws default to uniform over each node's channel set.
    """
    if not isinstance(link, Link):
        src, dst = link
        link = next(l for l in topology.links if l.src == src and l.dst == dst)
    v, u = link.src, link.dst
    span = set(link.span) if channel is None else set(link.span) & {channel}
    # interferers on channel c: other nodes with a link into u on c
    into_u: dict[int, set[int]] = {}
    for l in topology.links:
        if l.dst == u:
            for c in l.span:
                into_u.setdefault(c, set()).add(l.src)
    nodes = sorted({u, v} | {w for ws in into_u.values() for w in ws})
    laws = []
    size = 1
    for w in nodes:
        if channel_probs is None:
            chs = topology.channels[w]
            cp = {c: 1.0 / len(chs) for c in chs}
        else:
            cp = dict(channel_probs[w])
        p = float(tx_probs[w])
        laws.append([((c, m), pc * (p if m else 1.0 - p)) for c, pc in cp.items() for m in (True, False)])
        size *= len(laws[-1])
    if size > ENUMERATION_LIMIT:
        raise ValueError(f"enumeration of {size} joint outcomes exceeds the limit of {ENUMERATION_LIMIT}")
    pos = {w: i for i, w in enumerate(nodes)}
    total = 0.0
    for combo in itertools.product(*laws):
        (cv, mv), _ = combo[pos[v]]
        (cu, mu), _ = combo[pos[u]]
        if not mv or mu or cv != cu or cv not in span:
            continue
        if any(combo[pos[w]][0] == (cv, True) for w in into_u.get(cv, ()) if w != v):
            continue
        weight = 1.0
        for _, pr in combo:
            weight *= pr
        total += weight
    return total
