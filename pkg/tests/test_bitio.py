import numpy as np
from hypothesis import given, strategies as st

from mmphlab.bitio import (BitReader, BitWriter, ceil_log2, gamma_len, pack_fields, padded,
                           read_bits_many)

fields = st.lists(st.integers(0, 64).flatmap(
    lambda w: st.tuples(st.integers(0, (1 << w) - 1 if w else 0), st.just(w))), max_size=200)


@given(fields)
def test_writer_reader_roundtrip(items):
    w = BitWriter()
    for v, width in items:
        w.write(v, width)
    words, nbits = w.words()
    assert nbits == sum(width for _, width in items)
    r = BitReader(padded(words))
    for v, width in items:
        assert r.read(width) == v


@given(st.lists(st.integers(1, 1 << 40), max_size=100))
def test_gamma_roundtrip(vals):
    w = BitWriter()
    for v in vals:
        w.write_gamma(v)
    words, nbits = w.words()
    assert nbits == sum(gamma_len(v) for v in vals)
    r = BitReader(padded(words))
    assert [r.gamma() for _ in vals] == vals


def test_pack_and_vector_read(rng):
    widths = rng.integers(0, 65, size=500)
    vals = np.array([int(rng.integers(0, 1 << 63)) & ((1 << int(w)) - 1) if w else 0
                     for w in widths], dtype=np.uint64)
    words = padded(pack_fields(vals, widths))
    offs = np.concatenate(([0], np.cumsum(widths)[:-1]))
    assert np.array_equal(read_bits_many(words, offs, widths), vals)


def test_ceil_log2():
    assert [ceil_log2(x) for x in (0, 1, 2, 3, 4, 5, 8, 9, 33)] == [0, 0, 1, 2, 2, 3, 3, 4, 6]
