"""Mechanical checks of the frame-layout properties behind the asynchronous bounds.

All functions work on a frame table: one ``FrameSeries`` per node, giving
real (tick) start times and slot lengths.  Two intervals *overlap* when their
intersection has positive length.  A slot lies *within* a frame under closed
containment: touching endpoints still count.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..engine_async import FrameSeries
from ..model import Topology

ENUMERATION_LIMIT = 10**7


@dataclass(frozen=True)
class AlignedPair:
    v: int   # transmitter node
    f: int   # transmitter frame index
    u: int   # receiver node
    g: int   # receiver frame index
    slot: int  # witnessing slot of f (0..2)


@dataclass
class AdmissibleSequence:
    pairs: list[AlignedPair]
    M: int  # full frames of the less active endpoint inside the window
    complete: bool = True  # False when the window precondition was not met
    gamma: list[AlignedPair] = field(default_factory=list)


# -- overlap -------------------------------------------------------------------


def overlap_range(series: FrameSeries, a: int, b: int) -> range:
    """Indices of frames in ``series`` overlapping the interval (a, b)."""
    lo = int(np.searchsorted(series.end, a, side="right"))
    hi = int(np.searchsorted(series.start, b, side="left"))
    return range(lo, max(lo, hi))


def overlap(table: Sequence[FrameSeries], node: int, j: int, other: int) -> list[int]:
    fr = table[node]
    return list(overlap_range(table[other], int(fr.start[j]), int(fr.end[j])))


def overlap_all(table: Sequence[FrameSeries], node: int, j: int) -> set[tuple[int, int]]:
    """Every frame of every node (itself included) that overlaps frame j of ``node``."""
    fr = table[node]
    a, b = int(fr.start[j]), int(fr.end[j])
    return {(w, i) for w in range(len(table)) for i in overlap_range(table[w], a, b)}


def overlap_counts(table: Sequence[FrameSeries], node: int, other: int) -> np.ndarray:
    """|overlap(f, other)| for every frame f of ``node``."""
    fr, ot = table[node], table[other]
    lo = np.searchsorted(ot.end, fr.start, side="right")
    hi = np.searchsorted(ot.start, fr.end, side="left")
    return np.maximum(hi - lo, 0)


def overlap_violations(table: Sequence[FrameSeries], limit: int = 3) -> list[tuple[int, int, int, int]]:
    """(node, frame, other node, count) for every frame overlapping more than ``limit`` frames of another node."""
    out = []
    for v, u in itertools.permutations(range(len(table)), 2):
        counts = overlap_counts(table, v, u)
        for j in np.flatnonzero(counts > limit).tolist():
            out.append((v, j, u, int(counts[j])))
    return out


def slot_overlap_violations(table: Sequence[FrameSeries]) -> list[tuple[int, int, int, int]]:
    """Slots overlapping more than three slots, or slots of more than two frames, of another node."""
    out = []
    for v, u in itertools.permutations(range(len(table)), 2):
        fv, fu = table[v], table[u]
        if not len(fv) or not len(fu):
            continue
        ubounds = np.concatenate([[fu.start[0]], fu.start[0] + np.cumsum(np.repeat(fu.slot, 3))])
        uframe = np.repeat(np.arange(len(fu)), 3)
        for j in range(len(fv)):
            for k in range(3):
                a, b = fv.slot_interval(j, k)
                lo = int(np.searchsorted(ubounds[1:], a, side="right"))
                hi = int(np.searchsorted(ubounds[:-1], b, side="left"))
                if hi - lo > 3 or len(set(uframe[lo:hi].tolist())) > 2:
                    out.append((v, j, k, u))
    return out


# -- aligned pairs -------------------------------------------------------------


def aligned_witness(table: Sequence[FrameSeries], v: int, f: int, u: int, g: int) -> int | None:
    """First slot of frame f (of v) lying within frame g (of u), or None."""
    fv, fu = table[v], table[u]
    p, q = int(fu.start[g]), int(fu.end[g])
    for k in range(3):
        a, b = fv.slot_interval(f, k)
        if p <= a and b <= q:
            return k
    return None


def find_aligned_pairs(table: Sequence[FrameSeries], v: int, u: int) -> list[AlignedPair]:
    """Every aligned frame pair (f of v, g of u)."""
    out = []
    fv = table[v]
    for f in range(len(fv)):
        for g in overlap_range(table[u], int(fv.start[f]), int(fv.end[f])):
            k = aligned_witness(table, v, f, u, g)
            if k is not None:
                out.append(AlignedPair(v, f, u, g, k))
    return out


def first_full_frames(series: FrameSeries, T: int, count: int = 2) -> list[int]:
    i = int(np.searchsorted(series.start, T, side="left"))
    return list(range(i, min(i + count, len(series))))


def aligned_near(table: Sequence[FrameSeries], v: int, u: int, T: int, horizon: int | None = None):
    """Aligned pair among the first two full frames of v and of u after T.

    Returns an AlignedPair, None when no pair is aligned, or ``"short"`` when
    fewer than two full frames of either node end by ``horizon``.
    """
    fs = first_full_frames(table[v], T)
    gs = first_full_frames(table[u], T)
    if len(fs) < 2 or len(gs) < 2:
        return "short"
    if horizon is not None and (table[v].end[fs[1]] > horizon or table[u].end[gs[1]] > horizon):
        return "short"
    for f in fs:
        for g in gs:
            k = aligned_witness(table, v, f, u, g)
            if k is not None:
                return AlignedPair(v, f, u, g, k)
    return None


def aligned_existence_violations(
    table: Sequence[FrameSeries], v: int, u: int, t_s: int, horizon: int | None = None
) -> list[int]:
    """Probe times T >= t_s where no aligned pair exists within two full frames.

    The frames picked for a probe only change at frame starts, so probing
    t_s and every frame start after it covers all T.
    """
    probes = np.unique(np.concatenate([[t_s], table[v].start, table[u].start]))
    bad = []
    for T in probes[probes >= t_s].tolist():
        r = aligned_near(table, v, u, int(T), horizon)
        if r == "short":
            break
        if r is None:
            bad.append(int(T))
    return bad


# -- admissible sequences ------------------------------------------------------------


def full_frames_in(series: FrameSeries, t0: int, t1: int) -> int:
    return int(np.sum((series.start >= t0) & (series.end <= t1)))


def extract_admissible_sequence(
    table: Sequence[FrameSeries], v: int, u: int, t_s: int, window_end: int
) -> AdmissibleSequence:
    """Greedy construction: repeatedly take an aligned pair within two full
    frames of the earlier end of the previous pair, then keep every third pair."""
    M = min(full_frames_in(table[v], t_s, window_end), full_frames_in(table[u], t_s, window_end))
    gamma: list[AlignedPair] = []
    T = t_s
    complete = True
    while True:
        r = aligned_near(table, v, u, T, window_end)
        if r == "short":
            break
        if r is None:
            complete = False
            break
        gamma.append(r)
        T = min(int(table[v].end[r.f]), int(table[u].end[r.g]))
    pairs = gamma[::3]
    if len(pairs) < M // 6 or M == 0:
        complete = False
    return AdmissibleSequence(pairs, M, complete, gamma)


def validate_admissible(table: Sequence[FrameSeries], pairs: Sequence[AlignedPair], v: int, u: int) -> list[str]:
    """Check the four conditions independently of the construction; returns violations."""
    errors = []

    def overlapping_frames(node: int, j: int) -> set[tuple[int, int]]:
        a, b = int(table[node].start[j]), int(table[node].end[j])
        found = set()
        for w, fr in enumerate(table):
            hit = np.minimum(b, fr.end) > np.maximum(a, fr.start)
            found.update((w, int(i)) for i in np.flatnonzero(hit))
        return found

    for n, p in enumerate(pairs):
        if p.v != v or p.u != u:
            errors.append(f"pair {n}: owners ({p.v},{p.u}) != ({v},{u})")
        fv, fu = table[p.v], table[p.u]
        lo, hi = int(fu.start[p.g]), int(fu.end[p.g])
        if not any(lo <= a and b <= hi for a, b in (fv.slot_interval(p.f, k) for k in range(3))):
            errors.append(f"pair {n}: not aligned")
    for n in range(len(pairs) - 1):
        p, q = pairs[n], pairs[n + 1]
        if not (table[p.v].start[p.f] < table[q.v].start[q.f] and table[p.u].start[p.g] < table[q.u].start[q.g]):
            errors.append(f"pairs {n},{n + 1}: precedence violated")
        if overlapping_frames(p.u, p.g) & overlapping_frames(q.u, q.g):
            errors.append(f"pairs {n},{n + 1}: receiver frames share an overlapping frame")
    return errors


# -- coverage probability of an aligned pair -------------------------------------------


def aligned_pair_coverage_exact(
    table: Sequence[FrameSeries],
    topology: Topology,
    pair: AlignedPair,
    tx_prob: Callable[[int, int], float],
) -> float:
    """Probability that the pair covers the link, by enumeration.

    Coverage: v transmits on some span channel c in f, u listens on c in g,
    and no other in-neighbour w of u on c transmits on c in any frame of w
    overlapping g.  ``tx_prob(node, frame)`` gives the transmit probability.
    Channels are uniform; non-transmitting outcomes are merged into one.
    """
    v, u = pair.v, pair.u
    link = next(l for l in topology.links if l.src == v and l.dst == u)
    span = set(link.span)
    interferers: dict[int, set[int]] = {}
    for l in topology.links:
        if l.dst == u and l.src != v:
            for c in l.span:
                interferers.setdefault(l.src, set()).add(c)
    gs, ge = int(table[u].start[pair.g]), int(table[u].end[pair.g])
    outcomes = []  # per random frame: list of ((node, channel or None), prob)

    def law(node: int, frame: int, transmit_only: bool, listen_only: bool = False):
        chs = topology.channels[node]
        p = tx_prob(node, frame)
        if listen_only:
            return [((node, c, False), (1 - p) / len(chs)) for c in chs]
        out = [((node, c, True), p / len(chs)) for c in chs]
        if not transmit_only:
            out.append(((node, None, False), 1 - p))
        return out

    outcomes.append(law(v, pair.f, transmit_only=True))
    outcomes.append(law(u, pair.g, transmit_only=False, listen_only=True))
    for w in sorted(interferers):
        for h in overlap_range(table[w], gs, ge):
            outcomes.append(law(w, h, transmit_only=False))
    size = 1
    for o in outcomes:
        size *= len(o)
    if size > ENUMERATION_LIMIT:
        raise ValueError(f"enumeration of {size} outcomes exceeds the limit")
    total = 0.0
    for combo in itertools.product(*outcomes):
        (_, cv, _), pv = combo[0]
        (_, cu, _), pu = combo[1]
        if cv != cu or cv not in span:
            continue
        if any(tx and c == cv and cv in interferers[w] for (w, c, tx), _ in combo[2:]):
            continue
        weight = 1.0
        for _, pr in combo:
            weight *= pr
        total += weight
    return total
