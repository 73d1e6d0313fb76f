"""Network topology, channel sets and derived system parameters.

A topology is a set of nodes, each with an available channel set, and a set of
directed links whose spans say which channels the link can operate on.  All
objects here are immutable once built, so a topology can be shared read-only
between concurrently running trials.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class TopologyError(ValueError):
    """Raised when a topology violates one of its structural invariants."""


@dataclass(frozen=True)
class Link:
    """Directed link ``src -> dst`` operating on the channels in ``span``.

    ``band`` is set only on links produced by :func:`expand_bands`.
    """

    src: int
    dst: int
    span: tuple[int, ...]
    band: int | None = None

    @property
    def key(self) -> tuple[int, int, int | None]:
        return (self.src, self.dst, self.band)


def _as_channel_tuple(values: Iterable[int], what: str) -> tuple[int, ...]:
    items = [int(c) for c in values]
    if any(c < 0 for c in items):
        raise TopologyError(f"{what}: channel ids must be non-negative, got {items}")
    if len(set(items)) != len(items):
        raise TopologyError(f"{what}: duplicate channels in {items}")
    return tuple(sorted(items))


@dataclass(frozen=True)
class Topology:
    """Immutable communication graph with per-node available channel sets.

    Construction validates every invariant and raises :class:`TopologyError`
    naming the first offending node or link.  ``symmetric=False`` lifts the
    requirement that every link has a reverse link with the same span.
    """

    channels: tuple[tuple[int, ...], ...]
    links: tuple[Link, ...] = ()
    bands: tuple[tuple[int, ...], ...] | None = None
    symmetric: bool = True

    def __post_init__(self) -> None:
        channels = tuple(
            _as_channel_tuple(chs, f"node {u}") for u, chs in enumerate(self.channels)
        )
        object.__setattr__(self, "channels", channels)
        links = tuple(
            Link(int(l.src), int(l.dst), _as_channel_tuple(l.span, f"link {l.src}->{l.dst}"), l.band)
            for l in self.links
        )
        object.__setattr__(self, "links", links)
        if self.bands is not None:
            bands = tuple(_as_channel_tuple(b, f"band {i}") for i, b in enumerate(self.bands))
            object.__setattr__(self, "bands", bands)
        self._validate()

    # -- validation -------------------------------------------------------

    def _validate(self) -> None:
        n = len(self.channels)
        for u, chs in enumerate(self.channels):
            if not chs:
                raise TopologyError(f"node {u}: empty available channel set")
        if self.bands is not None:
            self._validate_bands()

        seen: set[tuple[int, int, int | None]] = set()
        for link in self.links:
            name = f"link {link.src}->{link.dst}" + (
                f" (band {link.band})" if link.band is not None else ""
            )
            if not (0 <= link.src < n and 0 <= link.dst < n):
                raise TopologyError(f"{name}: endpoint is not a node")
            if link.src == link.dst:
                raise TopologyError(f"{name}: self-loop")
            if link.key in seen:
                raise TopologyError(f"{name}: duplicate link")
            seen.add(link.key)
            if not link.span:
                raise TopologyError(f"{name}: empty span")
            common = set(self.channels[link.src]) & set(self.channels[link.dst])
            if not set(link.span) <= common:
                extra = sorted(set(link.span) - common)
                raise TopologyError(
                    f"{name}: span channels {extra} not in A({link.src}) & A({link.dst})"
                )
            self._check_one_for_all(link, common, name)

        if self.symmetric:
            spans = {l.key: l.span for l in self.links}
            for link in self.links:
                rev = spans.get((link.dst, link.src, link.band))
                if rev is None:
                    raise TopologyError(
                        f"link {link.src}->{link.dst}: reverse link {link.dst}->{link.src} missing"
                    )
                if rev != link.span:
                    raise TopologyError(
                        f"link {link.src}->{link.dst}: reverse link has a different span"
                    )

    def _validate_bands(self) -> None:
        assert self.bands is not None
        owner: dict[int, int] = {}
        for i, band in enumerate(self.bands):
            if not band:
                raise TopologyError(f"band {i}: empty")
            for c in band:
                if c in owner:
                    raise TopologyError(f"band {i}: channel {c} also in band {owner[c]}")
                owner[c] = i
        for u, chs in enumerate(self.channels):
            missing = [c for c in chs if c not in owner]
            if missing:
                raise TopologyError(f"node {u}: channels {missing} not covered by any band")

    def _check_one_for_all(self, link: Link, common: set[int], name: str) -> None:
        span = set(link.span)
        if self.bands is None:
            if span != common:
                raise TopologyError(
                    f"{name}: span {sorted(span)} differs from common channels {sorted(common)}"
                )
            return
        if link.band is not None:
            if not 0 <= link.band < len(self.bands):
                raise TopologyError(f"{name}: unknown band")
            want = common & set(self.bands[link.band])
            if span != want:
                raise TopologyError(f"{name}: span must equal common channels of its band")
            return
        for i, band in enumerate(self.bands):
            in_band = span & set(band)
            if in_band and in_band != common & set(band):
                raise TopologyError(f"{name}: spans only part of the common channels of band {i}")

    # -- accessors ------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.channels)

    @property
    def universal(self) -> tuple[int, ...]:
        return tuple(sorted({c for chs in self.channels for c in chs}))

    def band_of(self, channel: int) -> int | None:
        if self.bands is None:
            return None
        for i, band in enumerate(self.bands):
            if channel in band:
                return i
        return None

    def is_homogeneous(self) -> bool:
        """Identical channel sets everywhere and every link spans all of them."""
        first = self.channels[0]
        return all(chs == first for chs in self.channels) and all(
            l.span == first for l in self.links
        )

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "nodes": [{"id": u, "channels": list(chs)} for u, chs in enumerate(self.channels)],
            "links": [
                {"from": l.src, "to": l.dst, "span": list(l.span)}
                | ({"band": l.band} if l.band is not None else {})
                for l in self.links
            ],
        }
        if self.bands is not None:
            out["bands"] = [list(b) for b in self.bands]
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], *, symmetric: bool = True) -> "Topology":
        if not isinstance(data, Mapping):
            raise TopologyError("topology must be a JSON object")
        unknown = set(data) - {"nodes", "links", "bands"}
        if unknown:
            raise TopologyError(f"unknown topology keys: {sorted(unknown)}")
        nodes = data.get("nodes")
        if not isinstance(nodes, list) or not nodes:
            raise TopologyError("topology needs a non-empty 'nodes' array")
        by_id: dict[int, Sequence[int]] = {}
        try:
            for entry in nodes:
                nid = int(entry["id"])
                if nid in by_id:
                    raise TopologyError(f"node {nid}: duplicate id")
                by_id[nid] = entry["channels"]
            links = [
                Link(int(e["from"]), int(e["to"]), tuple(e["span"]), e.get("band"))
                for e in data.get("links", [])
            ]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"malformed node or link entry: {exc!r}") from exc
        if sorted(by_id) != list(range(len(by_id))):
            raise TopologyError("node ids must be contiguous from 0")
        bands = data.get("bands")
        return cls(
            channels=tuple(tuple(by_id[i]) for i in range(len(by_id))),
            links=tuple(links),
            bands=None if bands is None else tuple(tuple(b) for b in bands),
            symmetric=symmetric,
        )


def load_topology(path: str | Path, *, symmetric: bool = True) -> Topology:
    with open(path, encoding="utf-8") as fh:
        return Topology.from_dict(json.load(fh), symmetric=symmetric)


def save_topology(topology: Topology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(topology.to_dict(), indent=2) + "\n", encoding="utf-8")


def full_links(channels: Sequence[Sequence[int]], pairs: Iterable[tuple[int, int]]) -> list[Link]:
    """Both directed links for every undirected pair, spanning all common channels."""
    out = []
    for u, v in pairs:
        common = tuple(sorted(set(channels[u]) & set(channels[v])))
        if common:
            out.append(Link(u, v, common))
            out.append(Link(v, u, common))
    return out


def complete_topology(n: int, channels: Sequence[int]) -> Topology:
    """Homogeneous complete graph: every node has ``channels``, full spans."""
    chs = [tuple(channels)] * n
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    return Topology(tuple(chs), tuple(full_links(chs, pairs)))


# -- derived parameters ------------------------------------------------------


@dataclass(frozen=True)
class DerivedParams:
    N: int
    S: int
    delta: int
    delta0: int
    rho: Fraction
    B: int = 1
    has_links: bool = True
    W: int | None = None
    link_count: int = 0

    @property
    def rho_float(self) -> float:
        return float(self.rho)


def next_pow2(x: int) -> int:
    """Smallest power of two >= x (1 for x <= 1)."""
    return 1 if x <= 1 else 1 << (int(x) - 1).bit_length()


def neighbor_counts(topology: Topology) -> dict[tuple[int, int], int]:
    """d_u(c): number of distinct neighbors of u on channel c, for c in A(u)."""
    nbrs: dict[tuple[int, int], set[int]] = defaultdict(set)
    for link in topology.links:
        for c in link.span:
            nbrs[(link.dst, c)].add(link.src)
    return {(u, c): len(nbrs.get((u, c), ())) for u, chs in enumerate(topology.channels) for c in chs}


def bands_per_link(topology: Topology) -> int:
    if topology.bands is None or not topology.links:
        return 1
    per_pair: dict[tuple[int, int], set[int]] = defaultdict(set)
    for link in topology.links:
        for c in link.span:
            per_pair[(link.src, link.dst)].add(topology.band_of(c))
    return max(len(b) for b in per_pair.values())


def derive_params(topology: Topology) -> DerivedParams:
    """Compute N, S, Delta, Delta_0, rho and B by exhaustive scan.

    The span ratio of a link uses the receiver's channel-set size as its
    denominator.  A link-free topology reports ``rho = 1`` with
    ``has_links=False``.
    """
    chs = topology.channels
    degrees = neighbor_counts(topology)
    delta = max(degrees.values(), default=0)
    if topology.links:
        rho = min(Fraction(len(l.span), len(chs[l.dst])) for l in topology.links)
    else:
        rho = Fraction(1)
    return DerivedParams(
        N=topology.n,
        S=max(len(c) for c in chs),
        delta=delta,
        delta0=next_pow2(delta),
        rho=rho,
        B=bands_per_link(topology),
        has_links=bool(topology.links),
        W=None if topology.bands is None else min(len(b) for b in topology.bands),
        link_count=len(topology.links),
    )


def expand_bands(topology: Topology) -> Topology:
    """Replace each link by one link per band it can operate in.

    The span of each new link is the original span restricted to that band.
    Links that are already band-tagged are kept as they are.
    """
    if topology.bands is None:
        raise TopologyError("topology has no band partition")
    links: list[Link] = []
    for link in topology.links:
        if link.band is not None:
            links.append(link)
            continue
        for i, band in enumerate(topology.bands):
            span = tuple(c for c in link.span if c in band)
            if span:
                links.append(Link(link.src, link.dst, span, i))
    return Topology(topology.channels, tuple(links), topology.bands, topology.symmetric)


# -- random generation -------------------------------------------------------


@dataclass(frozen=True)
class ChannelLaw:
    """How a generated node draws its available channel set.

    ``full``: every channel.  ``uniform_size``: a size uniform in
    [min_size, max_size], then a uniform subset of that size.  ``bernoulli``:
    each channel independently with probability ``p`` (redrawn if empty).
    """

    kind: str = "uniform_size"
    min_size: int = 1
    max_size: int | None = None
    p: float = 0.5

    @classmethod
    def from_spec(cls, spec: "ChannelLaw | Mapping[str, Any] | str | None") -> "ChannelLaw":
        if spec is None:
            return cls()
        if isinstance(spec, ChannelLaw):
            return spec
        if isinstance(spec, str):
            return cls(kind=spec)
        return cls(**dict(spec))

    def draw(self, rng: np.random.Generator, universal: int) -> tuple[int, ...]:
        if self.kind == "full":
            return tuple(range(universal))
        if self.kind == "uniform_size":
            hi = universal if self.max_size is None else min(self.max_size, universal)
            lo = max(1, min(self.min_size, hi))
            size = int(rng.integers(lo, hi + 1))
            return tuple(sorted(int(c) for c in rng.choice(universal, size=size, replace=False)))
        if self.kind == "bernoulli":
            while True:
                mask = rng.random(universal) < self.p
                if mask.any():
                    return tuple(int(c) for c in np.flatnonzero(mask))
        raise ValueError(f"unknown channel law {self.kind!r}")


def generate_random_topology(
    n: int,
    universal: int,
    density: float,
    channel_law: ChannelLaw | Mapping[str, Any] | str | None = None,
    seed: int = 0,
) -> Topology:
    """Random symmetric topology with full-intersection spans.

    Each unordered pair with a non-empty channel intersection becomes a pair of
    links with probability ``density``.
    """
    if n < 1 or universal < 1:
        raise ValueError("need n >= 1 and universal >= 1")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    law = ChannelLaw.from_spec(channel_law)
    rng = np.random.default_rng(seed)
    chs = [law.draw(rng, universal) for _ in range(n)]
    pairs = []
    for u in range(n):
        for v in range(u + 1, n):
            coin = rng.random()
            if set(chs[u]) & set(chs[v]) and coin < density:
                pairs.append((u, v))
    return Topology(tuple(chs), tuple(full_links(chs, pairs)))


def link_table(topology: Topology) -> tuple[list[Link], np.ndarray, list[int]]:
    """Dense lookup ``table[ci, src, dst] -> link index`` (or -1).

    ``ci`` indexes the returned universal channel list.  Bands are disjoint, so
    at most one link joins an ordered pair on a given channel.
    """
    universal = list(topology.universal)
    index = {c: i for i, c in enumerate(universal)}
    table = np.full((len(universal), topology.n, topology.n), -1, dtype=np.int64)
    links = list(topology.links)
    for li, link in enumerate(links):
        for c in link.span:
            table[index[c], link.src, link.dst] = li
    return links, table, universal
