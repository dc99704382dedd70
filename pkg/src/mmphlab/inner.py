"""Monotone minimal perfect hashing by longest-common-prefix bucketing.

Sorted keys are cut into runs of ``b_in = max(1, ceil(log2 u))`` keys.  Each
run is identified by the longest common prefix of its first and last key; the
prefixes of consecutive runs are always distinct.  One perfect hash maps a key
to ``(prefix length, rank inside its run)``, a second maps
``(prefix length, prefix bits)`` to the run index.

When every key fits in a single run the prefix part is dropped: the key hash
stores the rank directly.
"""
import struct

import numpy as np

from ._kernels import MASK64, derive_seed
from .bitio import BitReader, BitWriter, bits_needed, ceil_log2, padded
from .errors import EmptyStructureError, FormatError, KeyOrderError
from .mphf import DEFAULT_SEED, PerfectHashWithPayload

U64 = np.uint64


def key_width(u_local):
    """``ceil(log2 u_local)``: bits per key, most significant bit first."""
    return (int(u_local) - 1).bit_length()


def default_bucket_size(u_local):
    return max(1, key_width(u_local))


def bit_length_u64(x):
    x = np.asarray(x, dtype=U64).copy()
    r = np.zeros(x.shape, dtype=np.int64)
    for s in (32, 16, 8, 4, 2, 1):
        big = (x >> U64(s)) != 0
        r += s * big
        x = np.where(big, x >> U64(s), x)
    return r + (x != 0)


def _shift_right(x, k):
    # x >> k for k in [0..64]
    k = np.asarray(k, dtype=np.int64)
    out = np.asarray(x, dtype=U64) >> np.minimum(k, 63).astype(U64)
    return np.where(k >= 64, U64(0), out)


def lcp_buckets(keys, w, b_in):
    """``(length, prefix)`` descriptor of every run of ``b_in`` sorted keys."""
    keys = np.asarray(keys, dtype=U64)
    if keys.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=U64)
    first = keys[::b_in]
    last = keys[np.minimum(np.arange(first.size) * b_in + b_in - 1, keys.size - 1)]
    lengths = w - bit_length_u64(first ^ last)
    prefixes = _shift_right(first, w - lengths)
    return lengths, prefixes


def _check_keys(keys, u_local):
    keys = np.asarray(keys)
    if keys.dtype == object or keys.dtype.kind not in "iu":
        vals = [int(k) for k in keys]
        if any(k < 0 or k >> 64 for k in vals):
            raise KeyOrderError("keys must lie in [0..2**64)")
        keys = np.array(vals, dtype=U64)
    else:
        if keys.dtype.kind == "i" and keys.size and keys.min() < 0:
            raise KeyOrderError("keys must be non-negative")
        keys = keys.astype(U64)
    if keys.size > 1 and not np.all(keys[1:] > keys[:-1]):
        raise KeyOrderError("keys must be strictly increasing")
    if keys.size and int(keys[-1]) >= u_local:
        raise KeyOrderError(f"key {int(keys[-1])} outside universe [0..{u_local})")
    return keys


class LcpBucketMmphf:
    """Order-preserving minimal perfect hash over ``n`` sorted keys."""

    def __init__(self, n, u_local, bucket_size, seed, key_fn=None, prefix_fn=None):
        self.n = n
        self.u_local = u_local
        self.w = key_width(u_local)
        self.bucket_size = bucket_size
        self.seed = seed
        self.key_fn = key_fn
        self.prefix_fn = prefix_fn
        self.n_buckets = -(-n // bucket_size)
        self.lcp_width = bits_needed(self.w)
        self.rank_width = ceil_log2(bucket_size)
        self.bucket_width = ceil_log2(self.n_buckets)

    @classmethod
    def build(cls, keys, u_local, bucket_size=None, seed=DEFAULT_SEED):
        u_local = int(u_local)
        if not 1 <= u_local <= 1 << 64:
            raise ValueError("u_local must be in [1..2**64]")
        keys = _check_keys(keys, u_local)
        b_in = default_bucket_size(u_local) if bucket_size is None else int(bucket_size)
        if b_in < 1:
            raise ValueError("bucket size must be >= 1")
        n = keys.size
        m = cls(n, u_local, b_in, int(seed) & MASK64)
        if n == 0:
            return m
        kseed, pseed = derive_seed(m.seed, 1), derive_seed(m.seed, 2)
        if m.n_buckets == 1:
            m.key_fn = PerfectHashWithPayload.build(keys, np.arange(n), ceil_log2(n), kseed)
            return m
        lengths, prefixes = lcp_buckets(keys, m.w, b_in)
        if len(set(zip(lengths.tolist(), prefixes.tolist()))) != m.n_buckets:
            raise RuntimeError("distinct-prefix invariant violated")
        idx = np.arange(n)
        payload = (lengths[idx // b_in] << m.rank_width) | (idx % b_in)
        m.key_fn = PerfectHashWithPayload.build(
            keys, payload, m.lcp_width + m.rank_width, kseed)
        m.prefix_fn = PerfectHashWithPayload.build(
            (prefixes, lengths.astype(U64)), np.arange(m.n_buckets), m.bucket_width, pseed)
        return m

    # -- queries ----------------------------------------------------------

    def rank(self, x):
        """1-based rank of a build key; some value in ``[1..n]`` otherwise."""
        if self.n == 0:
            raise EmptyStructureError("query on an empty structure")
        x = int(x)
        v = self.key_fn.lookup(x)
        if self.prefix_fn is None:
            return min(v, self.n - 1) + 1
        l = min(v >> self.rank_width, self.w)
        r = v & ((1 << self.rank_width) - 1)
        p = x >> (self.w - l) if l else 0
        j = min(self.prefix_fn.lookup(p | (l << 64)), self.n_buckets - 1)
        return min(j * self.bucket_size + r, self.n - 1) + 1

    def rank_many(self, xs):
        if self.n == 0:
            raise EmptyStructureError("query on an empty structure")
        xs = np.asarray(xs, dtype=U64)
        v = self.key_fn.lookup_many(xs).astype(np.int64)
        if self.prefix_fn is None:
            return np.minimum(v, self.n - 1) + 1
        l = np.minimum(v >> self.rank_width, self.w)
        r = v & ((1 << self.rank_width) - 1)
        p = np.where(l > 0, _shift_right(xs, self.w - l), U64(0))
        j = self.prefix_fn.lookup_many((p, l.astype(U64))).astype(np.int64)
        j = np.minimum(j, self.n_buckets - 1)
        return np.minimum(j * self.bucket_size + r, self.n - 1) + 1

    # -- encoding ---------------------------------------------------------

    def encode(self, w):
        """Body only: ``n``, ``u_local``, bucket size and seed come from context."""
        if self.n == 0:
            return
        self.key_fn.encode(w)
        if self.prefix_fn is not None:
            self.prefix_fn.encode(w)

    @classmethod
    def decode(cls, reader, n, u_local, seed, bucket_size=None):
        b_in = default_bucket_size(u_local) if bucket_size is None else bucket_size
        m = cls(n, u_local, b_in, seed)
        if n == 0:
            return m
        kseed, pseed = derive_seed(seed, 1), derive_seed(seed, 2)
        if m.n_buckets == 1:
            m.key_fn = PerfectHashWithPayload.decode(reader, n, ceil_log2(n), kseed)
        else:
            m.key_fn = PerfectHashWithPayload.decode(
                reader, n, m.lcp_width + m.rank_width, kseed)
            m.prefix_fn = PerfectHashWithPayload.decode(
                reader, m.n_buckets, m.bucket_width, pseed)
        return m

    def body_bits(self):
        w = BitWriter()
        self.encode(w)
        return w.nbits

    _HEADER = struct.Struct("<QQQQQ")

    def to_bytes(self):
        """``[n][u_local - 1][bucket size][seed][body bits][body words]``, u64 LE."""
        w = BitWriter()
        self.encode(w)
        words, nbits = w.words()
        head = self._HEADER.pack(self.n, self.u_local - 1, self.bucket_size, self.seed, nbits)
        return head + words.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, buf, offset=0):
        try:
            n, um1, b_in, seed, nbits = cls._HEADER.unpack_from(buf, offset)
            offset += cls._HEADER.size
            nwords = (nbits + 63) // 64
            words = np.frombuffer(buf, dtype="<u8", count=nwords, offset=offset).astype(U64)
        except (struct.error, ValueError) as exc:
            raise FormatError(f"truncated inner structure: {exc}") from None
        if b_in < 1:
            raise FormatError("bad bucket size")
        reader = BitReader(padded(words))
        m = cls.decode(reader, n, um1 + 1, seed, b_in)
        if reader.pos != nbits:
            raise FormatError("inner body length mismatch")
        return m, offset + 8 * nwords

    def space_bits(self):
        return 8 * len(self.to_bytes())

    def __repr__(self):
        return (f"LcpBucketMmphf(n={self.n}, u_local={self.u_local}, "
                f"bucket_size={self.bucket_size})")


def build_inner(keys, u_local, bucket_size=None, seed=DEFAULT_SEED):
    return LcpBucketMmphf.build(keys, u_local, bucket_size, seed)


def inner_rank(m, x):
    return m.rank(x)


def inner_space_bits(m):
    return m.space_bits()
