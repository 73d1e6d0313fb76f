import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ndisco import rng


def test_streams_are_reproducible_and_distinct():
    a = rng.generator(7, 0, rng.ACTION, 1).random(5)
    b = rng.generator(7, 0, rng.ACTION, 1).random(5)
    c = rng.generator(7, 0, rng.ACTION, 2).random(5)
    d = rng.generator(7, 1, rng.ACTION, 1).random(5)
    e = rng.generator(7, 0, rng.LOSS, 1).random(5)
    assert np.array_equal(a, b)
    for other in (c, d, e):
        assert not np.array_equal(a, other)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=20))
def test_draw_stream_is_prefix_consistent(chunks):
    """Scalar and block consumption read the same sequence, whatever the chunking."""
    total = sum(chunks)
    ref = rng.DrawStream.for_node(11, 3, rng.ACTION, 4).take(total)
    s = rng.DrawStream(rng.generator(11, 3, rng.ACTION, 4), block=7)
    got = []
    for i, n in enumerate(chunks):
        if i % 2:
            got.extend(s.next() for _ in range(n))
        else:
            got.extend(s.take(n).tolist())
    assert np.array_equal(np.array(got), ref)
    assert s.consumed == total
