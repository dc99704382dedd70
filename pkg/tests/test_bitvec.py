import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmphlab.bitvec import RankSelectBitVector, rank1, select1
from mmphlab.errors import FormatError, RankRangeError, SelectRangeError


def naive_rank(bits, pos):
    return sum(bits[:pos])


def naive_select(bits, i):
    seen = 0
    for p, b in enumerate(bits, 1):
        seen += b
        if b and seen == i:
            return p
    raise AssertionError


def test_empty():
    v = RankSelectBitVector.from_bits("")
    assert len(v) == 0 and v.popcount == 0
    assert v.rank1(0) == 0
    with pytest.raises(SelectRangeError):
        v.select1(1)


def test_small_example(backend):
    v = RankSelectBitVector.from_bits("10100110")
    assert v.popcount == 4
    assert [v.rank1(p) for p in (0, 4, 8)] == [0, 2, 4]
    assert [v.select1(i) for i in (1, 2, 4)] == [1, 3, 7]
    assert rank1(v, 8) == 4 and select1(v, 3) == 6


def test_all_ones(backend):
    v = RankSelectBitVector.from_positions(np.arange(1 << 16), 1 << 16)
    assert v.rank1(1 << 16) == 1 << 16
    assert v.select1(1 << 16) == 1 << 16


def test_range_errors_are_distinct():
    v = RankSelectBitVector.from_bits("0110")
    with pytest.raises(RankRangeError):
        v.rank1(5)
    with pytest.raises(RankRangeError):
        v.rank1(-1)
    with pytest.raises(SelectRangeError):
        v.select1(0)
    with pytest.raises(SelectRangeError):
        v.select1(3)
    assert not issubclass(RankRangeError, SelectRangeError)
    assert not issubclass(SelectRangeError, RankRangeError)


def test_bad_bitstring():
    with pytest.raises(ValueError):
        RankSelectBitVector.from_bits("0120")


def test_against_naive_oracle(backend, rng):
    for _ in range(300):
        length = int(rng.integers(1, 4097))
        density = rng.random()
        bits = (rng.random(length) < density).astype(int).tolist()
        v = RankSelectBitVector.from_bits(bits)
        pref = np.concatenate(([0], np.cumsum(bits)))
        assert np.array_equal(v.rank1_many(np.arange(length + 1)), pref)
        ones = np.flatnonzero(bits) + 1
        if ones.size:
            assert np.array_equal(v.select1_many(np.arange(1, ones.size + 1)), ones)


@given(st.lists(st.booleans(), max_size=3000))
def test_rank_select_roundtrip(bits):
    v = RankSelectBitVector.from_bits(bits)
    assert v.rank1(len(bits)) == v.popcount == sum(bits)
    for i in range(1, v.popcount + 1, max(1, v.popcount // 50)):
        p = v.select1(i)
        assert v.rank1(p) == i
        assert v[p - 1] == 1
    if bits:
        pos = len(bits) // 2
        assert v.rank1(pos) == naive_rank(bits, pos)
    if v.popcount:
        assert v.select1(v.popcount) == naive_select(bits, v.popcount)


@given(st.lists(st.booleans(), max_size=2000))
def test_serialization_roundtrip(bits):
    v = RankSelectBitVector.from_bits(bits)
    buf = v.to_bytes()
    w, end = RankSelectBitVector.from_bytes(buf)
    assert end == len(buf) == v.space_bits() // 8
    assert w == v and w.to_bitstring() == v.to_bitstring()
    assert RankSelectBitVector.from_bits(bits).to_bytes() == buf


def test_index_overhead(rng):
    for length in (1 << 12, 1 << 16, 1 << 20):
        v = RankSelectBitVector.from_positions(
            np.flatnonzero(rng.random(length) < 0.5), length)
        assert v.index_bits() <= 0.5 * length


def test_truncated_bytes_rejected():
    buf = RankSelectBitVector.from_bits("1011" * 100).to_bytes()
    for cut in range(len(buf)):
        with pytest.raises(FormatError):
            RankSelectBitVector.from_bytes(buf[:cut])


def test_corrupt_index_rejected():
    v = RankSelectBitVector.from_bits("1011" * 300)
    buf = bytearray(v.to_bytes())
    # first rank-index word sits right after the length and payload words
    buf[8 + 8 * v.words.size + 8] ^= 1
    with pytest.raises(FormatError):
        RankSelectBitVector.from_bytes(bytes(buf))
