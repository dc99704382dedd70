"""Immutable bit array with rank/select support.

Rank uses the rank9 layout (one absolute count per 512-bit superblock plus
seven packed 9-bit relative counts); select samples the superblock of every
512th set bit.  The index costs at most 0.375 extra bits per payload bit.
"""
import struct

import numpy as np

from . import _kernels
from .errors import FormatError, RankRangeError, SelectRangeError

U64 = np.uint64


class RankSelectBitVector:
    """Bit array of fixed ``length`` answering ``rank1`` and ``select1``.

    Positions for ``rank1`` are exclusive upper bounds (``rank1(0) == 0``);
    ``select1`` takes and returns 1-based values, so ``select1(1)`` is the
    1-based position of the first set bit.
    """

    __slots__ = ("length", "words", "_padded", "rank_index", "select_index", "popcount")

    def __init__(self, length, words, rank_index=None, select_index=None):
        length = int(length)
        words = np.ascontiguousarray(words, dtype=U64)
        if words.shape[0] != (length + 63) // 64:
            raise FormatError("payload word count does not match length")
        if length % 64 and words.shape[0]:
            tail = int(words[-1]) >> (length % 64)
            if tail:
                raise FormatError("bits set beyond length")
        self.length = length
        self.words = words
        self._padded = np.concatenate((words, np.zeros(1, dtype=U64)))
        if rank_index is None:
            rank_index = _kernels.build_rank9(words)
        self.rank_index = np.ascontiguousarray(rank_index, dtype=U64)
        self.popcount = int(np.bitwise_count(words).sum())
        if select_index is None:
            select_index = _kernels.select_samples(self.rank_index, self.popcount)
        self.select_index = np.ascontiguousarray(select_index, dtype=U64)

    # -- construction ---------------------------------------------------

    @classmethod
    def from_bits(cls, bits):
        """Build from an iterable of booleans or a ``"0101"`` string."""
        if isinstance(bits, str):
            arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
            if arr.size and arr.max() > 1:
                raise ValueError("bit string may only contain '0' and '1'")
        else:
            arr = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits)
            arr = arr.astype(bool).astype(np.uint8)
        return cls.from_positions(np.flatnonzero(arr), arr.size)

    @classmethod
    def from_positions(cls, positions, length):
        """Build a vector of ``length`` bits with ones at ``positions``."""
        positions = np.asarray(positions, dtype=np.int64)
        words = np.zeros((length + 63) // 64, dtype=U64)
        if positions.size:
            if positions.min() < 0 or positions.max() >= length:
                raise ValueError("set-bit position outside the vector")
            np.bitwise_or.at(words, positions >> 6, U64(1) << (positions & 63).astype(U64))
        return cls(length, words)

    # -- queries --------------------------------------------------------

    def __len__(self):
        return self.length

    def __getitem__(self, i):
        if not 0 <= i < self.length:
            raise IndexError(i)
        return (int(self.words[i >> 6]) >> (i & 63)) & 1

    def rank1(self, pos):
        pos = int(pos)
        if not 0 <= pos <= self.length:
            raise RankRangeError(f"rank position {pos} outside [0..{self.length}]")
        return int(_kernels.rank_many(self._padded, self.rank_index, np.array([pos]))[0])

    def select1(self, i):
        i = int(i)
        if not 1 <= i <= self.popcount:
            raise SelectRangeError(f"select index {i} outside [1..{self.popcount}]")
        return int(_kernels.select_many(
            self._padded, self.rank_index, self.select_index, np.array([i - 1]))[0]) + 1

    def rank1_many(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        if positions.size and (positions.min() < 0 or positions.max() > self.length):
            raise RankRangeError("rank position outside the vector")
        return _kernels.rank_many(self._padded, self.rank_index, positions)

    def select1_many(self, ranks):
        """Vectorised ``select1``; ``ranks`` are 1-based, results 1-based."""
        ranks = np.asarray(ranks, dtype=np.int64)
        if ranks.size and (ranks.min() < 1 or ranks.max() > self.popcount):
            raise SelectRangeError("select index outside [1..popcount]")
        return _kernels.select_many(self._padded, self.rank_index, self.select_index,
                                    ranks - 1) + 1

    def to_bitstring(self):
        if not self.length:
            return ""
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")[:self.length]
        return (bits + ord("0")).astype(np.uint8).tobytes().decode("ascii")

    def __eq__(self, other):
        return (isinstance(other, RankSelectBitVector) and self.length == other.length
                and np.array_equal(self.words, other.words))

    def __hash__(self):
        return hash((self.length, self.words.tobytes()))

    def __repr__(self):
        return f"RankSelectBitVector(length={self.length}, popcount={self.popcount})"

    # -- space and serialization ---------------------------------------

    def index_bits(self):
        return 64 * (self.rank_index.size + self.select_index.size + 1)

    def space_bits(self):
        """Exact size of :meth:`to_bytes` in bits."""
        return 64 * (1 + self.words.size + self.rank_index.size + 1 + self.select_index.size)

    def to_bytes(self):
        """``[length][payload words][rank index][nsamples][select samples]``, u64 LE."""
        parts = [
            struct.pack("<Q", self.length),
            self.words.astype("<u8").tobytes(),
            self.rank_index.astype("<u8").tobytes(),
            struct.pack("<Q", self.select_index.size),
            self.select_index.astype("<u8").tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf, offset=0):
        """Parse a vector at ``offset``; returns ``(vector, end_offset)``."""
        try:
            (length,) = struct.unpack_from("<Q", buf, offset)
            offset += 8
            nwords = (length + 63) // 64
            words = np.frombuffer(buf, dtype="<u8", count=nwords, offset=offset).astype(U64)
            offset += 8 * nwords
            nidx = 2 * ((nwords >> 3) + 1)
            rank_index = np.frombuffer(buf, dtype="<u8", count=nidx, offset=offset).astype(U64)
            offset += 8 * nidx
            (nsamp,) = struct.unpack_from("<Q", buf, offset)
            offset += 8
            samples = np.frombuffer(buf, dtype="<u8", count=nsamp, offset=offset).astype(U64)
            offset += 8 * nsamp
        except (struct.error, ValueError, OverflowError) as exc:
            raise FormatError(f"truncated bit vector: {exc}") from None
        v = cls(length, words, rank_index, samples)
        if not np.array_equal(v.rank_index, _kernels.build_rank9(words)):
            raise FormatError("rank index does not match payload")
        if not np.array_equal(v.select_index, _kernels.select_samples(v.rank_index, v.popcount)):
            raise FormatError("select samples do not match payload")
        return v, offset


def build_bitvector(bits):
    return RankSelectBitVector.from_bits(bits)


def rank1(v, pos):
    return v.rank1(pos)


def select1(v, i):
    return v.select1(i)
