"""Monotone minimal perfect hash over a sorted key set.

Three layouts:

``plain``
    a bit array over the whole universe; ``rank(x)`` is a rank query.
``bucketed``
    the universe is cut into ``n`` buckets of ``b = ceil(u/n)`` values.  ``B``
    is the concatenation of ``1 0^{n_i}`` over buckets, so the keys before
    bucket ``i`` number ``select1(B, i) - i``.  Each bucket owns a small
    :class:`~mmphlab.inner.LcpBucketMmphf` over local offsets; the encodings
    are concatenated and ``N`` (``1 0^{len_i}`` per bucket) locates them.
``big``
    a perfect hash storing ``rank - 1`` for each key.

Container layout (little-endian): ``b"MMPH"``, u16 version, u8 regime tag,
u64 ``u - 1``, u64 ``n``, u64 seed, u8 section count, then sections of
``[u8 tag][u64 byte length][bytes]``.
"""
import struct
from dataclasses import dataclass

import numpy as np

from ._kernels import GOLDEN, MASK64, leaf_salts, np_derive_seeds, np_hash_keys, _np_mix64
from .bitio import BitReader, BitWriter, ceil_log2, pack_fields, padded, read_bits_many
from .bitvec import RankSelectBitVector
from .config import Config
from .errors import FormatError, KeyOrderError, QueryRangeError
from .inner import LcpBucketMmphf, bit_length_u64, default_bucket_size
from .mphf import LEAF_MAX, MAX_LEAF_SALT, PerfectHashWithPayload

U64 = np.uint64
MAGIC = b"MMPH"
VERSION = 1
REGIME_TAGS = {"plain": 1, "bucketed": 2, "big": 3}
TAG_REGIMES = {v: k for k, v in REGIME_TAGS.items()}
SEC_BITS, SEC_B, SEC_N, SEC_INNERS, SEC_MPHF = 1, 2, 3, 4, 5
PLAIN_MAX_U = 1 << 34
_HEAD = struct.Struct("<4sHBQQQB")
_SEC = struct.Struct("<BQ")


@dataclass(frozen=True)
class SortedKeySet:
    """Strictly increasing keys from ``[0..u)``, ``u <= 2**64``."""

    u: int
    keys: np.ndarray

    def __post_init__(self):
        u = int(self.u)
        if not 1 <= u <= 1 << 64:
            raise KeyOrderError("universe must satisfy 1 <= u <= 2**64")
        keys = self.keys
        if not isinstance(keys, np.ndarray) or keys.dtype != U64:
            vals = [int(k) for k in keys]
            if any(k < 0 or k >> 64 for k in vals):
                raise KeyOrderError("keys must lie in [0..2**64)")
            keys = np.array(vals, dtype=U64)
        if keys.size > 1 and not np.all(keys[1:] > keys[:-1]):
            raise KeyOrderError("keys must be strictly increasing")
        if keys.size and int(keys[-1]) >= u:
            raise KeyOrderError(f"key {int(keys[-1])} outside [0..{u})")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "keys", keys)

    @property
    def n(self):
        return int(self.keys.size)


def _as_queries(xs, u):
    if isinstance(xs, np.ndarray) and xs.dtype.kind in "iu":
        if xs.dtype.kind == "i" and xs.size and xs.min() < 0:
            raise QueryRangeError("query keys must be non-negative")
        arr = xs.astype(U64)
    else:
        vals = [int(x) for x in xs]
        if any(x < 0 or x >> 64 for x in vals):
            raise QueryRangeError("query key outside [0..u)")
        arr = np.array(vals, dtype=U64)
    if arr.size and u <= MASK64 and int(arr.max()) >= u:
        raise QueryRangeError(f"query key {int(arr.max())} outside [0..{u})")
    return arr


class MonotoneHash:
    """Common surface of the three layouts."""

    regime = None

    def __init__(self, u, n, seed):
        self.u = u
        self.n = n
        self.seed = seed

    def rank(self, x):
        x = int(x)
        if not 0 <= x < self.u:
            raise QueryRangeError(f"query key {x} outside [0..{self.u})")
        return int(self.rank_many(np.array([x], dtype=U64))[0])

    def rank_many(self, xs):
        raise NotImplementedError

    def _sections(self):
        raise NotImplementedError

    def to_bytes(self):
        secs = self._sections()
        out = [_HEAD.pack(MAGIC, VERSION, REGIME_TAGS[self.regime], self.u - 1, self.n,
                          self.seed, len(secs))]
        for tag, payload in secs:
            out.append(_SEC.pack(tag, len(payload)))
            out.append(payload)
        return b"".join(out)

    def space_bits(self):
        return 8 * len(self.to_bytes())

    def space_report(self):
        """Per-component bit counts; the values sum to :meth:`space_bits`."""
        secs = self._sections()
        report = {"container": 8 * (_HEAD.size + _SEC.size * len(secs))}
        report.update(self._component_bits())
        return report

    def __repr__(self):
        return f"{type(self).__name__}(u={self.u}, n={self.n}, bits={self.space_bits()})"


class PlainBitArray(MonotoneHash):
    regime = "plain"

    def __init__(self, u, n, seed, bits):
        super().__init__(u, n, seed)
        self.bits = bits

    @classmethod
    def build(cls, ks, seed):
        if ks.u > PLAIN_MAX_U:
            raise ValueError(f"plain bit array limited to u <= 2**34, got {ks.u}")
        return cls(ks.u, ks.n, seed, RankSelectBitVector.from_positions(
            ks.keys.astype(np.int64), ks.u))

    def rank_many(self, xs):
        xs = _as_queries(xs, self.u).astype(np.int64)
        return np.maximum(self.bits.rank1_many(xs + 1), 1)

    def _sections(self):
        return [(SEC_BITS, self.bits.to_bytes())]

    def _component_bits(self):
        v = self.bits
        return {"bit_array": 64 * (1 + v.words.size), "rank_select_index": v.index_bits()}


class BigUniverse(MonotoneHash):
    regime = "big"

    def __init__(self, u, n, seed, h):
        super().__init__(u, n, seed)
        self.h = h

    @classmethod
    def build(cls, ks, seed):
        h = PerfectHashWithPayload.build(ks.keys, np.arange(ks.n), ceil_log2(ks.n), seed)
        return cls(ks.u, ks.n, seed, h)

    def rank_many(self, xs):
        xs = _as_queries(xs, self.u)
        return np.minimum(self.h.lookup_many(xs).astype(np.int64), self.n - 1) + 1

    def _sections(self):
        return [(SEC_MPHF, self.h.to_bytes())]

    def _component_bits(self):
        total = 8 * len(self.h.to_bytes())
        payload = self.n * self.h.payload_width
        return {"rank_payload": payload, "mphf_overhead": total - payload}


class Bucketed(MonotoneHash):
    regime = "bucketed"

    def __init__(self, u, n, seed, B, N, blob_words, blob_bits, b_in=None):
        super().__init__(u, n, seed)
        self.B = B
        self.N = N
        self.blob_words = np.asarray(blob_words, dtype=U64)
        self.blob_bits = blob_bits
        self.b = -(-u // n)
        self.b_in = default_bucket_size(self.b) if b_in is None else int(b_in)
        self._words = padded(self.blob_words)
        self._cache = {}

    # -- build ------------------------------------------------------------

    @classmethod
    def build(cls, ks, seed, inner_bucket_size=None):
        u, n, keys = ks.u, ks.n, ks.keys
        b = -(-u // n)
        if b > MASK64:
            q = np.zeros(n, dtype=np.int64)
        else:
            q = (keys // U64(b)).astype(np.int64)
        local = keys - q.astype(U64) * U64(b & MASK64)
        counts = np.bincount(q, minlength=n).astype(np.int64)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)
        B = RankSelectBitVector.from_positions(np.arange(n) + starts, 2 * n)

        b_in = default_bucket_size(b) if inner_bucket_size is None else inner_bucket_size
        seeds = np_derive_seeds(seed, np.arange(n))
        # a bucket that fits in one inner run with n_i <= LEAF_MAX encodes as a
        # single salt plus payloads; that layout is written here in bulk
        leaf = (counts >= 2) & (counts <= min(LEAF_MAX, b_in))
        other = np.flatnonzero((counts >= 2) & ~leaf)

        lengths = np.zeros(n, dtype=np.int64)
        vals, wids, offs_rel, owner = [], [], [], []

        lb = np.flatnonzero(leaf)
        if lb.size:
            kseeds = _child_seeds(seeds[lb], 1)
            salts = leaf_salts(local, np.zeros_like(local), starts[lb], counts[lb], kseeds,
                               MAX_LEAF_SALT)
            if (salts < 0).any():
                raise RuntimeError("leaf salt search failed")
            v = salts + 1
            z = bit_length_u64(v.astype(U64)) - 1
            glen = 2 * z + 1
            gval = (U64(1) << z.astype(U64)) | ((v.astype(U64) & ((U64(1) << z.astype(U64)) - U64(1)))
                                               << (z + 1).astype(U64))
            cw = np.array([ceil_log2(c) for c in range(LEAF_MAX + 1)])[counts[lb]]
            lengths[lb] = glen + counts[lb] * cw
            vals.append(gval)
            wids.append(glen)
            offs_rel.append(np.zeros(lb.size, dtype=np.int64))
            owner.append(lb)
            # payload fields: slot pos of each key holds its rank in the bucket
            kb = np.repeat(np.arange(lb.size), counts[lb])
            kidx = np.repeat(starts[lb], counts[lb]) + np.arange(kb.size) - \
                np.repeat(np.concatenate(([0], np.cumsum(counts[lb])[:-1])), counts[lb])
            lseed = kseeds[kb] ^ _np_mix64((salts[kb].astype(U64) + U64(1)) * U64(GOLDEN))
            pos = (np_hash_keys(local[kidx], np.zeros(kb.size, dtype=U64), lseed)
                   % counts[lb][kb].astype(U64)).astype(np.int64)
            rank_in = kidx - starts[lb][kb]
            vals.append(rank_in.astype(U64))
            wids.append(cw[kb])
            offs_rel.append(glen[kb] + pos * cw[kb])
            owner.append(lb[kb])

        other_bits = {}
        for i in other.tolist():
            c, s = int(counts[i]), int(starts[i])
            m = LcpBucketMmphf.build(local[s:s + c], b, b_in, int(seeds[i]))
            w = BitWriter()
            m.encode(w)
            words, nb = w.words()
            other_bits[i] = (words, nb)
            lengths[i] = nb
            nfull, rest = divmod(nb, 64)
            chunk_w = np.full(nfull + (1 if rest else 0), 64, dtype=np.int64)
            if rest:
                chunk_w[-1] = rest
            vals.append(words[:chunk_w.size])
            wids.append(chunk_w)
            offs_rel.append(64 * np.arange(chunk_w.size, dtype=np.int64))
            owner.append(np.full(chunk_w.size, i, dtype=np.int64))

        blob_off = np.concatenate(([0], np.cumsum(lengths)[:-1])).astype(np.int64)
        total = int(lengths.sum())
        if vals:
            v = np.concatenate(vals)
            wd = np.concatenate(wids)
            of = np.concatenate(offs_rel) + blob_off[np.concatenate(owner)]
            blob = pack_fields(v, wd, of, total)
        else:
            blob = np.zeros(0, dtype=U64)
        N = RankSelectBitVector.from_positions(np.arange(n) + blob_off, n + total)
        return cls(u, n, seed, B, N, blob, total, b_in)

    # -- queries ----------------------------------------------------------

    def bucket_counts(self):
        """``n_i`` for every bucket, read back from ``B``."""
        ones = self.B.select1_many(np.arange(1, self.n + 1))
        nxt = np.append(ones[1:], self.B.length + 1)
        return nxt - ones - 1

    def rank_many(self, xs):
        xs = _as_queries(xs, self.u)
        n, b = self.n, self.b
        if b > MASK64:
            q = np.zeros(xs.size, dtype=np.int64)
        else:
            q = (xs // U64(b)).astype(np.int64)
        local = xs - q.astype(U64) * U64(b & MASK64)
        i = q + 1
        kB = self.B.select1_many(i)
        before = kB - i
        nxt = np.where(i < n, self.B.select1_many(np.minimum(i + 1, n)), self.B.length + 1)
        counts = nxt - kB - 1
        off = self.N.select1_many(i) - i
        out = np.empty(xs.size, dtype=np.int64)

        z0 = counts == 0
        out[z0] = np.maximum(before[z0], 1)
        one = counts == 1
        out[one] = before[one] + 1
        leaf = (counts >= 2) & (counts <= min(LEAF_MAX, self.b_in))
        if leaf.any():
            out[leaf] = before[leaf] + self._leaf_ranks(
                q[leaf], local[leaf], counts[leaf], off[leaf])
        rest = np.flatnonzero((counts >= 2) & ~leaf)
        if rest.size:
            for bi in np.unique(q[rest]).tolist():
                sel = rest[q[rest] == bi]
                m = self._inner(bi, int(counts[sel[0]]), int(off[sel[0]]))
                out[sel] = before[sel] + m.rank_many(local[sel])
        return out

    def _leaf_ranks(self, q, local, counts, off):
        w = self._words
        head = read_bits_many(w, off, 64)
        low = head & (~head + U64(1))
        z = bit_length_u64(low) - 1
        v = (U64(1) << z.astype(U64)) | read_bits_many(w, off + z + 1, z)
        salts = v - U64(1)
        glen = 2 * z + 1
        kseeds = _child_seeds(np_derive_seeds(self.seed, q), 1)
        lseed = kseeds ^ _np_mix64((salts + U64(1)) * U64(GOLDEN))
        pos = (np_hash_keys(local, np.zeros(local.size, dtype=U64), lseed)
               % counts.astype(U64)).astype(np.int64)
        cw = np.array([ceil_log2(c) for c in range(LEAF_MAX + 1)])[counts]
        r = read_bits_many(w, off + glen + pos * cw, cw).astype(np.int64)
        return np.minimum(r, counts - 1) + 1

    def _inner(self, bucket, count, off):
        m = self._cache.get(bucket)
        if m is None:
            seed = int(np_derive_seeds(self.seed, np.array([bucket]))[0])
            m = LcpBucketMmphf.decode(BitReader(self._words, off), count, self.b, seed,
                                      self.b_in)
            self._cache[bucket] = m
        return m

    # -- encoding ---------------------------------------------------------

    def _sections(self):
        blob = struct.pack("<QQ", self.blob_bits, self.b_in) + self.blob_words.astype("<u8").tobytes()
        secs = [(SEC_B, self.B.to_bytes()), (SEC_N, self.N.to_bytes()), (SEC_INNERS, blob)]
        return secs

    def _component_bits(self):
        return {
            "B": self.B.space_bits(),
            "N": self.N.space_bits(),
            "inner_structures": self.blob_bits,
            "inner_padding": 128 + 64 * self.blob_words.size - self.blob_bits,
        }


def _child_seeds(seeds, j):
    # vectorised derive_seed(seed, j) for an array of seeds
    return _np_mix64(np.asarray(seeds, dtype=U64) + U64(((j + 1) * GOLDEN) & MASK64))


_BUILDERS = {"plain": PlainBitArray, "bucketed": Bucketed, "big": BigUniverse}


def _as_keyset(ks, u=None):
    if isinstance(ks, SortedKeySet):
        return ks
    return SortedKeySet(u, ks)


def build_candidates(ks, config=Config()):
    """Every layout the builder would consider for ``ks``, keyed by regime."""
    if ks.n < 1:
        raise KeyOrderError("n >= 1 keys required")
    if config.regime is not None:
        names = [config.regime]
    elif ks.u < config.plain_cutoff * ks.n:
        names = ["plain"]
    else:
        names = ["bucketed", "big"]
    out = {}
    for name in names:
        if name == "bucketed":
            out[name] = Bucketed.build(ks, config.seed, config.inner_bucket_size)
        else:
            out[name] = _BUILDERS[name].build(ks, config.seed)
    return out


def select_regime(n, u, config=Config(), keys=None):
    """Regime tag the builder picks; measures candidates when ``keys`` are given.

    Without keys the choice for ``u >= plain_cutoff * n`` is made on evenly
    spaced keys, which is what the measured comparison depends on most.
    """
    if n < 1:
        raise KeyOrderError("n >= 1 required")
    if n > u:
        raise KeyOrderError(f"n = {n} exceeds universe size {u}")
    if config.regime is not None:
        return config.regime
    if u < config.plain_cutoff * n:
        return "plain"
    if keys is None:
        step = u // n
        if step <= MASK64:
            keys = np.arange(n, dtype=U64) * U64(step) + U64((step - 1) // 2)
        else:
            keys = np.array([(step - 1) // 2], dtype=U64)
    return build(SortedKeySet(u, keys), config).regime


def build(ks, config=Config(), u=None):
    """Build the smallest candidate layout for a :class:`SortedKeySet`."""
    ks = _as_keyset(ks, u)
    cands = build_candidates(ks, config)
    return min(cands.values(), key=lambda h: (h.space_bits(), REGIME_TAGS[h.regime]))


def random_keys(rng, u, n):
    """``n`` distinct sorted keys drawn uniformly from ``[0..u)``."""
    if n > u:
        raise KeyOrderError("n exceeds u")
    if u <= 4 * n:
        return np.sort(rng.choice(u, n, replace=False)).astype(U64)
    keys = np.unique(rng.integers(0, u, size=n + n // 8 + 16, dtype=U64))
    while keys.size < n:
        keys = np.unique(np.concatenate((keys, rng.integers(0, u, size=n, dtype=U64))))
    return np.sort(rng.choice(keys, n, replace=False))


def rank(h, x):
    return h.rank(x)


def space_bits(h):
    return h.space_bits()


def space_report(h):
    return h.space_report()


def from_bytes(buf):
    """Parse a container produced by :meth:`MonotoneHash.to_bytes`."""
    buf = bytes(buf)
    try:
        magic, version, tag, um1, n, seed, nsec = _HEAD.unpack_from(buf, 0)
    except struct.error:
        raise FormatError("truncated container header") from None
    if magic != MAGIC:
        raise FormatError("not an MMPH container")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if tag not in TAG_REGIMES:
        raise FormatError(f"unknown regime tag {tag}")
    pos = _HEAD.size
    secs = {}
    for _ in range(nsec):
        try:
            stag, length = _SEC.unpack_from(buf, pos)
        except struct.error:
            raise FormatError("truncated section header") from None
        pos += _SEC.size
        if pos + length > len(buf):
            raise FormatError("truncated section")
        secs[stag] = buf[pos:pos + length]
        pos += length
    if pos != len(buf):
        raise FormatError("trailing bytes after last section")
    u = um1 + 1
    regime = TAG_REGIMES[tag]
    try:
        if regime == "plain":
            bits, _ = RankSelectBitVector.from_bytes(secs[SEC_BITS])
            if bits.length != u or bits.popcount != n:
                raise FormatError("bit array inconsistent with header")
            return PlainBitArray(u, n, seed, bits)
        if regime == "big":
            h, _ = PerfectHashWithPayload.from_bytes(secs[SEC_MPHF])
            if h.n != n or h.payload_width != ceil_log2(n):
                raise FormatError("perfect hash inconsistent with header")
            return BigUniverse(u, n, seed, h)
        B, _ = RankSelectBitVector.from_bytes(secs[SEC_B])
        N, _ = RankSelectBitVector.from_bytes(secs[SEC_N])
        blob = secs[SEC_INNERS]
        nbits, b_in = struct.unpack_from("<QQ", blob, 0)
        words = np.frombuffer(blob, dtype="<u8", offset=16).astype(U64)
        if words.size != (nbits + 63) // 64:
            raise FormatError("inner section size mismatch")
    except KeyError as exc:
        raise FormatError(f"missing section {exc}") from None
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed section: {exc}") from None
    if B.length != 2 * n or B.popcount != n or N.popcount != n or N.length != n + nbits:
        raise FormatError("bucket arrays inconsistent with n")
    if b_in < 1:
        raise FormatError("bad inner bucket size")
    return Bucketed(u, n, seed, B, N, words, nbits, b_in)


def save(h, path):
    with open(path, "wb") as fh:
        fh.write(h.to_bytes())


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
