import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from bohmlab.rng import RngStream, derive_stream_id, philox4x32, stream_uniforms

U64 = st.integers(min_value=0, max_value=2**64 - 1)


def _block(counter, key):
    out = philox4x32(tuple(np.uint64(c) for c in counter), tuple(np.uint64(k) for k in key))
    return [int(np.asarray(v)) for v in out]


@pytest.mark.parametrize(
    "counter, key, expected",
    [
        ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
        ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
        (
            (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
            (0xA4093822, 0x299F31D0),
            (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
        ),
    ],
)
def test_philox_known_answers(counter, key, expected):
    assert _block(counter, key) == list(expected)


def test_uniforms_in_unit_interval():
    u = RngStream(7, 3).uniforms(10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3


@given(U64, U64, st.integers(0, 50), st.integers(1, 20))
def test_same_pair_bit_identical(seed, sid, first, count):
    a = RngStream(seed, sid).uniforms(count, first)
    b = RngStream(seed, sid).uniforms(count, first)
    assert a.tobytes() == b.tobytes()


@given(U64, U64, st.integers(0, 30), st.integers(1, 30))
def test_offsets_are_consistent(seed, sid, first, count):
    full = RngStream(seed, sid).uniforms(first + count)
    tail = RngStream(seed, sid).uniforms(count, first)
    assert np.array_equal(full[first:], tail)


def test_batched_streams_match_single_streams():
    ids = np.array([1, 2, 2**63 + 5], dtype=np.uint64)
    batch = stream_uniforms(11, ids, 3, 6)
    for row, sid in zip(batch, ids):
        assert np.array_equal(row, RngStream(11, int(sid)).uniforms(6, 3))


def test_distinct_streams_are_uncorrelated():
    n = 20000
    a = RngStream(5, 0).uniforms(n)
    b = RngStream(5, 1).uniforms(n)
    c = RngStream(6, 0).uniforms(n)
    # correlation of independent uniforms has standard deviation 1/sqrt(n)
    for x, y in ((a, b), (a, c), (b, c)):
        assert abs(np.corrcoef(x, y)[0, 1]) < 4 / np.sqrt(n)
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_children_are_distinct_and_reproducible():
    root = RngStream.for_trajectory(9, 0)
    ids = root.child_ids(1000)
    assert len(set(ids.tolist())) == 1000
    assert np.array_equal(ids, root.child_ids(1000))
    assert root.child(4).stream_id == int(ids[4])
    assert derive_stream_id(9, 0) == root.stream_id


def test_rejects_out_of_range_ids():
    with pytest.raises(ValueError):
        RngStream(-1, 0)
    with pytest.raises(ValueError):
        RngStream(0, 2**64)
