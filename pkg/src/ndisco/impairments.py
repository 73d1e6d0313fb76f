"""Lossy deliveries and the reactive single-channel jammer.

The jammer works in rounds.  At each round start it scans which channels
carry a transmission at that instant, then jams one of them, picked
uniformly, other than the one it jammed in the previous round.  If no such
channel exists it stays idle for the round.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .model import Topology, derive_params
from .protocols import Strategy

# worst-case constants for the slow-down under jamming
SYNC_WORST = 18
ASYNC_WORST = 21


class ImpairmentError(ValueError):
    pass


@dataclass(frozen=True)
class LossModel:
    phi: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.phi < 1.0:
            raise ImpairmentError(f"loss probability must lie in [0, 1), got {self.phi}")

    @property
    def enabled(self) -> bool:
        return self.phi > 0.0


@dataclass(frozen=True)
class JammerConfig:
    """Jammer timing in the engine's native unit: slots (sync) or frame lengths L (async)."""

    enabled: bool = False
    round_length: float = 1.0
    round_offset: float = 0.0
    k: int = 1

    def __post_init__(self) -> None:
        if self.k != 1:
            raise ImpairmentError("only single-channel jamming (k=1) is supported")
        if self.round_length <= 0:
            raise ImpairmentError("round_length must be positive")
        if not 0 <= self.round_offset < self.round_length:
            raise ImpairmentError("round_offset must lie in [0, round_length)")


@dataclass(frozen=True)
class JammerState:
    previous: int | None = None
    current: int | None = None
    scan: frozenset = frozenset()


def jammer_scan(transmissions: Iterable[tuple[int, float, float]], t: float) -> frozenset:
    """Channels carrying a transmission active at instant ``t``.

    ``transmissions`` holds ``(channel, start, end)`` half-open intervals.
    """
    return frozenset(c for c, a, b in transmissions if a <= t < b)


def jammer_step(state: JammerState, scan: Iterable[int], u: float) -> JammerState:
    """Advance one round using the uniform draw ``u`` in [0, 1)."""
    scan = frozenset(scan)
    candidates = sorted(scan - {state.previous})
    if not candidates:
        return JammerState(previous=None, current=None, scan=scan)
    pick = candidates[min(int(u * len(candidates)), len(candidates) - 1)]
    return JammerState(previous=pick, current=pick, scan=scan)


def apply_jamming(
    channel: int, interval: tuple[float, float], jams: Iterable[tuple[int, float, float]]
) -> bool:
    """True when the transmission survives; a jam on its channel overlapping it
    with positive length destroys it."""
    a, b = interval
    return not any(c == channel and min(b, e) > max(a, s) for c, s, e in jams)


def async_jamming_variant(strategy: Strategy) -> Strategy:
    """Transmitters re-draw their channel at every slot instead of every frame."""
    if not strategy.kind.is_async:
        raise ImpairmentError(f"{strategy.kind.value} is not an asynchronous strategy")
    return dataclasses.replace(strategy, per_slot_channels=True)


def check_jamming_topology(topology: Topology) -> None:
    """Jamming runs need a homogeneous network with at least three nodes and channels."""
    if not topology.is_homogeneous():
        raise ImpairmentError("jamming requires a homogeneous topology (identical channel sets, full spans)")
    params = derive_params(topology)
    if params.N < 3 or params.S < 3:
        raise ImpairmentError(f"jamming requires N >= 3 and S >= 3 (got N={params.N}, S={params.S})")


def slowdown_bound_exact(N: int, S: int, system: str = "sync", p_case: str = "degree") -> Fraction:
    if N < 3 or S < 3:
        raise ImpairmentError("slowdown bound needs N >= 3 and S >= 3")
    if p_case == "half":
        p = Fraction(1, 2)
    elif p_case == "degree":
        div = {"sync": 2, "async": 6}.get(system)
        if div is None:
            raise ImpairmentError(f"unknown system {system!r}")
        p = min(Fraction(1, 2), Fraction(S, div * (N - 2)))
    else:
        raise ImpairmentError(f"unknown p_case {p_case!r}")
    survive = Fraction(1, 2) * Fraction(S - 1, S) * (1 - (1 - p * Fraction(S - 2, S)) ** (N - 2))
    return 1 / survive


def slowdown_bound(N: int, S: int, system: str = "sync", p_case: str = "degree") -> float:
    """Factor by which jamming can stretch the discovery time."""
    return float(slowdown_bound_exact(N, S, system, p_case))


def worst_case_slowdown(system: str) -> int:
    return {"sync": SYNC_WORST, "async": ASYNC_WORST}[system]


def round_starts(offset: int, length: int, begin: int, end: int) -> range:
    """Round start ticks ``offset + k*length`` falling in [begin, end)."""
    if end <= begin:
        return range(0)
    k0 = max(0, -(-(begin - offset) // length))
    return range(offset + k0 * length, end, length)


def jams_during(jams: Sequence[tuple[int, int, int]], a: int, b: int) -> set[int]:
    """Distinct channels jammed at some point of the interval [a, b)."""
    return {c for c, s, e in jams if min(b, e) > max(a, s)}
