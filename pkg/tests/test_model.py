from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndisco.model import (
    Link,
    Topology,
    TopologyError,
    bands_per_link,
    complete_topology,
    derive_params,
    expand_bands,
    full_links,
    generate_random_topology,
    link_table,
    load_topology,
    next_pow2,
    save_topology,
)


def two_node():
    chs = ((0, 1, 2), (0, 1))
    return Topology(chs, tuple(full_links(chs, [(0, 1)])))


def test_derive_params_two_nodes_by_hand():
    p = derive_params(two_node())
    # link 0->1: span {0,1} over |A(1)|=2 -> 1; link 1->0: span {0,1} over |A(0)|=3 -> 2/3
    assert (p.N, p.S, p.delta, p.delta0) == (2, 3, 1, 1)
    assert p.rho == Fraction(2, 3)
    assert p.has_links


def test_single_node_reports_no_links():
    p = derive_params(Topology(((0,),)))
    assert (p.N, p.S, p.delta) == (1, 1, 0)
    assert p.rho == 1 and not p.has_links


def test_complete_homogeneous_graph():
    topo = complete_topology(3, [0, 1, 2, 3])
    p = derive_params(topo)
    assert p.rho == 1 and p.delta == 2 and p.delta0 == 2
    assert topo.is_homogeneous()


def test_next_pow2():
    assert [next_pow2(x) for x in (0, 1, 2, 3, 4, 5, 8, 9)] == [1, 1, 2, 4, 4, 8, 8, 16]


def test_topology_rejects_bad_spans():
    chs = ((0, 1), (0, 1))
    with pytest.raises(TopologyError):
        Topology(chs, (Link(0, 1, (0,)), Link(1, 0, (0, 1))))  # span is not all common channels
    with pytest.raises(TopologyError):
        Topology(chs, (Link(0, 1, (0, 1)),))  # missing reverse link
    with pytest.raises(TopologyError):
        Topology(((0,), (1,)), (Link(0, 1, (0,)), Link(1, 0, (0,))))
    with pytest.raises(TopologyError):
        Topology(((0,), ()))


def test_asymmetric_allowed_when_declared():
    chs = ((0, 1), (0, 1))
    topo = Topology(chs, (Link(0, 1, (0, 1)),), symmetric=False)
    assert derive_params(topo).link_count == 1


def test_expand_bands_restricts_spans():
    chs = ((0, 1, 4), (0, 1, 4))
    topo = Topology(chs, tuple(full_links(chs, [(0, 1)])), bands=((0, 1, 2), (3, 4, 5)))
    out = expand_bands(topo)
    spans = sorted((l.src, l.dst, l.span, l.band) for l in out.links)
    assert spans == [(0, 1, (0, 1), 0), (0, 1, (4,), 1), (1, 0, (0, 1), 0), (1, 0, (4,), 1)]
    assert bands_per_link(topo) == 2


def test_expand_bands_single_band_and_empty_band():
    chs = ((0, 1), (0, 1))
    topo = Topology(chs, tuple(full_links(chs, [(0, 1)])), bands=((0, 1, 2), (3, 4)))
    out = expand_bands(topo)
    assert [(l.span, l.band) for l in out.links] == [((0, 1), 0), ((0, 1), 0)]


def test_generator_is_deterministic_and_complete_at_density_one():
    a = generate_random_topology(6, 4, 0.5, seed=3)
    b = generate_random_topology(6, 4, 0.5, seed=3)
    assert a == b
    full = generate_random_topology(5, 3, 1.0, "full", seed=1)
    assert len(full.links) == 5 * 4
    assert generate_random_topology(1, 3, 1.0, seed=0).links == ()


def test_link_table_indexes_every_span_channel():
    topo = two_node()
    links, table, universal = link_table(topo)
    assert universal == [0, 1, 2]
    for i, l in enumerate(links):
        for c in l.span:
            assert table[universal.index(c), l.src, l.dst] == i
    assert table[2, 0, 1] == -1


def test_save_load_round_trip(tmp_path):
    chs = ((0, 1, 4), (0, 1, 4))
    topo = Topology(chs, tuple(full_links(chs, [(0, 1)])), bands=((0, 1, 2), (3, 4, 5)))
    path = tmp_path / "t.json"
    save_topology(topo, path)
    assert load_topology(path) == topo


@st.composite
def random_topologies(draw, bands=False):
    n = draw(st.integers(1, 6))
    universal = draw(st.integers(1, 6))
    law = draw(st.sampled_from(["full", "uniform_size", "bernoulli"]))
    density = draw(st.floats(0, 1))
    seed = draw(st.integers(0, 10_000))
    return generate_random_topology(n, universal, density, law, seed)


@settings(max_examples=150, deadline=None)
@given(random_topologies())
def test_derived_parameter_ranges(topo):
    p = derive_params(topo)
    assert Fraction(1, p.S) <= p.rho <= 1
    assert p.delta <= p.N - 1
    assert p.delta0 >= max(p.delta, 1) and p.delta0 < 2 * max(p.delta, 1)
    assert p.delta0 & (p.delta0 - 1) == 0


@settings(max_examples=100, deadline=None)
@given(random_topologies(), st.integers(1, 3))
def test_expand_bands_never_raises_rho(topo, nbands):
    universal = topo.universal
    # contiguous split of the universal set into up to nbands bands
    k = min(nbands, len(universal))
    cuts = [universal[i * len(universal) // k:(i + 1) * len(universal) // k] for i in range(k)]
    banded = Topology(topo.channels, topo.links, tuple(tuple(c) for c in cuts))
    out = expand_bands(banded)
    p_in, p_out = derive_params(banded), derive_params(out)
    assert p_out.rho <= p_in.rho
    assert Fraction(1, p_out.S) <= p_out.rho
    for l in out.links:
        assert set(l.span) <= set(banded.bands[l.band])
    # full channel sets: the span ratio of a band-restricted link is |band ∩ A| / |A|
    if topo.links and all(set(c) == set(universal) for c in topo.channels):
        assert p_out.rho == Fraction(p_out.W, p_out.S)
