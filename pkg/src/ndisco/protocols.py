"""The six randomized neighbor-discovery strategies.

Each strategy is a per-node state machine.  Per slot (synchronous kinds) or
per frame (asynchronous kinds) it picks a channel uniformly from the node's
available set and then transmits with a schedule-dependent probability.
Nodes never adapt to what they hear, so the whole action sequence of a node
is a function of its random stream alone.

Random draw layout per unit: channel draw, then mode draw.  The asynchronous
jamming variant appends two more channel draws so that a transmitting node
has an independent channel for each of its three slots.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, NamedTuple, Sequence

import numpy as np


class StrategyKind(str, enum.Enum):
    SYNC_IDENTICAL_KNOWN = "sync-identical-known"
    SYNC_IDENTICAL_UNKNOWN = "sync-identical-unknown"
    SYNC_VARIABLE_KNOWN = "sync-variable-known"
    SYNC_VARIABLE_UNKNOWN = "sync-variable-unknown"
    ASYNC_KNOWN = "async-known"
    ASYNC_UNKNOWN = "async-unknown"

    @property
    def is_async(self) -> bool:
        return self in (StrategyKind.ASYNC_KNOWN, StrategyKind.ASYNC_UNKNOWN)

    @property
    def needs_delta_est(self) -> bool:
        return self in (
            StrategyKind.SYNC_IDENTICAL_KNOWN,
            StrategyKind.SYNC_VARIABLE_KNOWN,
            StrategyKind.ASYNC_KNOWN,
        )

    @property
    def identical_start(self) -> bool:
        return self in (StrategyKind.SYNC_IDENTICAL_KNOWN, StrategyKind.SYNC_IDENTICAL_UNKNOWN)


TRANSMIT = "T"
LISTEN = "L"


# -- transmission probabilities ----------------------------------------------


def tx_prob_sync_identical(a: int, i: int) -> float:
    """min(1/2, a / 2^i) for slot ``i`` (1-based) of a stage."""
    if a < 1 or i < 1:
        raise ValueError("need a >= 1 and i >= 1")
    return min(0.5, a / 2.0**i)


def tx_prob_sync_variable(a: int, delta_est: int) -> float:
    if a < 1 or delta_est < 1:
        raise ValueError("need a >= 1 and delta_est >= 1")
    return min(0.5, a / delta_est)


def tx_prob_async(a: int, delta_est: int) -> float:
    if a < 1 or delta_est < 1:
        raise ValueError("need a >= 1 and delta_est >= 1")
    return min(0.5, a / (3 * delta_est))


def ceil_log2(x: int) -> int:
    """Exact ceil(log2 x) for integers x >= 1."""
    if x < 1:
        raise ValueError("x must be >= 1")
    return (int(x) - 1).bit_length()


def stage_length(delta_est: int) -> int:
    """Slots per stage: ceil(log2 delta_est), never less than one."""
    if delta_est < 1:
        raise ValueError("delta_est must be >= 1")
    return max(1, ceil_log2(delta_est))


# -- epoch / phase schedule ---------------------------------------------------


def epoch_prefix(k: int) -> int:
    """Units contained in epochs 1..k, i.e. k * 2^(k+1)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return k * (1 << (k + 1))


class EpochPhase(NamedTuple):
    epoch: int
    phase: int
    delta_est: int
    offset: int  # position inside the phase, 0-based


def epoch_phase_at(index: int) -> EpochPhase:
    """Locate unit ``index`` (0-based, from the node's own start) in the schedule."""
    if index < 0:
        raise ValueError("index must be >= 0")
    epoch = 1
    while epoch_prefix(epoch) <= index:
        epoch += 1
    rest = index - epoch_prefix(epoch - 1)
    phase_len = 1 << epoch
    phase = rest // phase_len + 1
    return EpochPhase(epoch, phase, 1 << phase, rest % phase_len)


def schedule_index(epoch: int, phase: int, offset: int = 0) -> int:
    """Inverse of :func:`epoch_phase_at`."""
    if not (epoch >= 1 and 1 <= phase <= epoch + 1 and 0 <= offset < (1 << epoch)):
        raise ValueError(f"invalid schedule position ({epoch}, {phase}, {offset})")
    return epoch_prefix(epoch - 1) + (phase - 1) * (1 << epoch) + offset


_PREFIX = np.array([epoch_prefix(k) for k in range(0, 56)], dtype=np.int64)


def epoch_phase_array(index: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`epoch_phase_at`; returns (epoch, phase, offset)."""
    index = np.asarray(index, dtype=np.int64)
    epoch = np.searchsorted(_PREFIX, index, side="right")
    rest = index - _PREFIX[epoch - 1]
    phase_len = np.left_shift(np.int64(1), epoch)
    return epoch, rest // phase_len + 1, rest % phase_len


class StagePosition(NamedTuple):
    estimate: int  # running degree estimate d
    slot: int      # 1-based slot within the stage


def identical_unknown_position(index: int) -> StagePosition:
    """Stage/slot of unit ``index`` when the estimate starts at 2 and grows by one per stage."""
    if index < 0:
        raise ValueError("index must be >= 0")
    d = 2
    while True:
        length = stage_length(d)
        if index < length:
            return StagePosition(d, index + 1)
        index -= length
        d += 1


@lru_cache(maxsize=8)
def _stage_starts(limit_pow: int) -> tuple[np.ndarray, np.ndarray]:
    estimates = np.arange(2, 2 + (1 << limit_pow), dtype=np.int64)
    # bit_length of d-1 is an exact ceil(log2 d), also at powers of two
    lengths = np.array([stage_length(int(d)) for d in estimates], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    return estimates, starts


def identical_unknown_array(index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`identical_unknown_position`; returns (estimate, slot)."""
    index = np.asarray(index, dtype=np.int64)
    top = int(index.max(initial=0))
    limit_pow = 10
    while True:
        estimates, starts = _stage_starts(limit_pow)
        if starts[-1] > top:
            break
        limit_pow += 2
    k = np.searchsorted(starts, index, side="right") - 1
    return estimates[k], index - starts[k] + 1


def tx_prob_schedule(
    kind: StrategyKind, a: int, delta_est: int | None, index: np.ndarray
) -> np.ndarray:
    """Transmit probability of a node with ``a`` channels at each local unit index."""
    index = np.asarray(index, dtype=np.int64)
    if kind is StrategyKind.SYNC_IDENTICAL_KNOWN:
        i = index % stage_length(delta_est) + 1
        return np.minimum(0.5, a / np.exp2(i))
    if kind is StrategyKind.SYNC_IDENTICAL_UNKNOWN:
        _, i = identical_unknown_array(index)
        return np.minimum(0.5, a / np.exp2(i))
    if kind is StrategyKind.SYNC_VARIABLE_KNOWN:
        return np.full(index.shape, tx_prob_sync_variable(a, delta_est))
    if kind is StrategyKind.SYNC_VARIABLE_UNKNOWN:
        _, phase, _ = epoch_phase_array(index)
        return np.minimum(0.5, a / np.exp2(phase))
    if kind is StrategyKind.ASYNC_KNOWN:
        return np.full(index.shape, tx_prob_async(a, delta_est))
    if kind is StrategyKind.ASYNC_UNKNOWN:
        _, phase, _ = epoch_phase_array(index)
        return np.minimum(0.5, a / (3.0 * np.exp2(phase)))
    raise ValueError(f"unknown strategy kind {kind!r}")


def pick_channel(channels: Sequence[int], u: float) -> int:
    return channels[min(int(u * len(channels)), len(channels) - 1)]


# -- per-node strategy ----------------------------------------------------------


@dataclass(frozen=True)
class Action:
    channel: int
    mode: str
    # per-slot channels of a transmitting frame under the jamming variant
    slot_channels: tuple[int, ...] | None = None
    sender: int | None = None
    advertised: tuple[int, ...] | None = None

    @property
    def transmits(self) -> bool:
        return self.mode == TRANSMIT


@dataclass
class Strategy:
    """Mutable per-node strategy state.

    ``index`` counts units (slots or frames) executed since the node started.
    """

    kind: StrategyKind
    delta_est: int | None = None
    per_slot_channels: bool = False
    index: int = 0

    def __post_init__(self) -> None:
        self.kind = StrategyKind(self.kind)
        if self.kind.needs_delta_est:
            if self.delta_est is None or int(self.delta_est) < 1:
                raise ValueError(f"{self.kind.value} needs delta_est >= 1")
            self.delta_est = int(self.delta_est)
        if self.per_slot_channels and not self.kind.is_async:
            raise ValueError("per-slot channel selection only applies to asynchronous strategies")

    @property
    def draws_per_unit(self) -> int:
        return 4 if self.per_slot_channels else 2

    def schedule_state(self) -> dict[str, int]:
        k = self.kind
        if k is StrategyKind.SYNC_IDENTICAL_KNOWN:
            return {"slot": self.index % stage_length(self.delta_est) + 1}
        if k is StrategyKind.SYNC_IDENTICAL_UNKNOWN:
            d, i = identical_unknown_position(self.index)
            return {"estimate": d, "slot": i}
        if k in (StrategyKind.SYNC_VARIABLE_UNKNOWN, StrategyKind.ASYNC_UNKNOWN):
            e = epoch_phase_at(self.index)
            return {"epoch": e.epoch, "phase": e.phase, "count": e.offset + 1}
        return {}

    def tx_prob(self, a: int) -> float:
        k = self.kind
        if k is StrategyKind.SYNC_IDENTICAL_KNOWN:
            return tx_prob_sync_identical(a, self.schedule_state()["slot"])
        if k is StrategyKind.SYNC_IDENTICAL_UNKNOWN:
            return tx_prob_sync_identical(a, identical_unknown_position(self.index).slot)
        if k is StrategyKind.SYNC_VARIABLE_KNOWN:
            return tx_prob_sync_variable(a, self.delta_est)
        if k is StrategyKind.SYNC_VARIABLE_UNKNOWN:
            return tx_prob_sync_variable(a, epoch_phase_at(self.index).delta_est)
        if k is StrategyKind.ASYNC_KNOWN:
            return tx_prob_async(a, self.delta_est)
        return tx_prob_async(a, epoch_phase_at(self.index).delta_est)

    def step(self, channels: Sequence[int], stream, node: int | None = None) -> Action:
        """Draw this unit's action from ``stream`` and advance the schedule."""
        a = len(channels)
        p = self.tx_prob(a)
        channel = pick_channel(channels, stream.next())
        mode = TRANSMIT if stream.next() < p else LISTEN
        slot_channels = None
        if self.per_slot_channels:
            extra = (pick_channel(channels, stream.next()), pick_channel(channels, stream.next()))
            if mode == TRANSMIT:
                slot_channels = (channel, *extra)
        self.index += 1
        if mode == TRANSMIT:
            return Action(channel, mode, slot_channels, node, tuple(channels))
        return Action(channel, mode)


# -- knowledge -------------------------------------------------------------------


@dataclass
class NodeKnowledge:
    discovered: dict[int, tuple[int, ...]] = field(default_factory=dict)


def on_receive(
    knowledge: NodeKnowledge, sender: int, advertised: Sequence[int], own: Sequence[int]
) -> NodeKnowledge:
    """Record ``sender`` together with the channels it shares with this node."""
    common = tuple(sorted(set(advertised) & set(own)))
    # a clear reception happens on a channel both nodes hold
    assert common, f"reception from {sender} with no common channel"
    knowledge.discovered[sender] = common
    return knowledge


def knowledge_from_receptions(
    channels: Sequence[Sequence[int]], receptions: Mapping[int, Sequence[int]]
) -> list[NodeKnowledge]:
    """Build every node's knowledge from ``receiver -> senders`` receptions."""
    out = [NodeKnowledge() for _ in channels]
    for r, senders in receptions.items():
        for s in senders:
            on_receive(out[r], s, channels[s], channels[r])
    return out
