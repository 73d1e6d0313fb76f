"""Splittable random streams.

Every random quantity in a simulation is drawn from a stream identified by
``(master seed, trial, purpose, *ids)``.  The tuple is fed to numpy's
``SeedSequence`` as a spawn key, so streams are statistically independent and
do not depend on the order in which trials or nodes are processed.
"""

from __future__ import annotations

import numpy as np

ACTION = 0
CLOCK = 1
LOSS = 2
JAMMER = 3
OFFSET = 4


def generator(seed: int, trial: int, purpose: int, *ids: int) -> np.random.Generator:
    key = (int(trial), int(purpose), *(int(i) for i in ids))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


class DrawStream:
    """Sequence of uniform [0, 1) draws that can be consumed one at a time or in blocks.

    Scalar and block consumption read the same underlying sequence, so a
    vectorised engine and a per-step strategy see identical values.
    """

    def __init__(self, gen: np.random.Generator, block: int = 4096):
        self._gen = gen
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0
        self.consumed = 0

    @classmethod
    def for_node(cls, seed: int, trial: int, purpose: int, *ids: int) -> "DrawStream":
        return cls(generator(seed, trial, purpose, *ids))

    def _ensure(self, n: int) -> None:
        have = len(self._buf) - self._pos
        if have >= n:
            return
        fresh = self._gen.random(max(self._block, n - have))
        self._buf = np.concatenate([self._buf[self._pos:], fresh])
        self._pos = 0

    def next(self) -> float:
        self._ensure(1)
        value = float(self._buf[self._pos])
        self._pos += 1
        self.consumed += 1
        return value

    def take(self, n: int) -> np.ndarray:
        self._ensure(n)
        out = self._buf[self._pos:self._pos + n].copy()
        self._pos += n
        self.consumed += n
        return out
