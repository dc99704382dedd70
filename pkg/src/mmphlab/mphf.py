"""Minimal perfect hashing with a fixed-width payload per key.

Two layouts share one class:

* small sets (``n <= LEAF_MAX``) search a single salt for which the hashed
  keys land on distinct slots of ``[0..n)``;
* larger sets use hash-and-displace: keys go to ``ceil(n/4)`` buckets, buckets
  are placed largest first by searching a per-bucket pilot, into a table of
  about ``n/0.97`` slots (rounded up to odd); slots past ``n`` that got used
  are remapped onto the free slots below ``n``.

Keys are integers below ``2**128`` handled as ``(lo, hi)`` 64-bit halves.
The body encoding omits everything the caller can infer (``n``, payload
width, seed) so many tables can be concatenated cheaply.
"""
import struct

import numpy as np

from . import _kernels
from ._kernels import derive_seed, hash_key, mix64, np_hash_keys, _np_mix64
from .bitio import BitReader, BitWriter, bits_needed, ceil_log2, padded, read_bits_many
from .errors import BuildFailure, DuplicateKeyError, FormatError, PayloadOverflowError

U64 = np.uint64

LEAF_MAX = 8
BUCKET_LOAD = 4
MAX_PILOT = 1 << 16
MAX_RESTARTS = 64
MAX_LEAF_SALT = 1 << 22
DEFAULT_SEED = 0x6D6D706866


def table_size(n):
    if n <= LEAF_MAX:
        return n
    # odd, so that (h ^ pilot hash) mod m depends on every bit of h; with a
    # power of two only the low bits would matter and some buckets never fit
    return (n + (3 * n + 99) // 100) | 1


def bucket_count(n):
    return (n + BUCKET_LOAD - 1) // BUCKET_LOAD


def leaf_seed(seed, salt):
    return seed ^ mix64(((salt + 1) * _kernels.GOLDEN) & _kernels.MASK64)


def split_keys(keys):
    """Turn integer keys into ``(lo, hi)`` uint64 arrays."""
    if isinstance(keys, tuple) and len(keys) == 2:
        return np.asarray(keys[0], dtype=U64), np.asarray(keys[1], dtype=U64)
    if isinstance(keys, np.ndarray) and keys.dtype != object:
        if keys.dtype.kind == "i" and keys.size and keys.min() < 0:
            raise ValueError("keys must be non-negative")
        lo = keys.astype(U64)
        return lo, np.zeros_like(lo)
    keys = [int(k) for k in keys]
    for k in keys:
        if k < 0 or k >> 128:
            raise ValueError(f"key {k} outside [0..2**128)")
    lo = np.fromiter((k & 0xFFFFFFFFFFFFFFFF for k in keys), dtype=U64, count=len(keys))
    hi = np.fromiter((k >> 64 for k in keys), dtype=U64, count=len(keys))
    return lo, hi


def _has_duplicates(lo, hi):
    if lo.size < 2:
        return False
    order = np.lexsort((lo, hi))
    a, b = lo[order], hi[order]
    return bool(np.any((a[1:] == a[:-1]) & (b[1:] == b[:-1])))


class PerfectHashWithPayload:
    """Bijection from the build keys onto ``[0..n)`` plus a payload per key."""

    def __init__(self, n, payload_width, seed, payloads, salt=0, restart=0,
                 pilots=None, pilot_width=0, remap=None):
        self.n = n
        self.payload_width = payload_width
        self.seed = seed
        self.payloads = np.asarray(payloads, dtype=U64)
        self.salt = salt
        self.restart = restart
        self.pilots = pilots
        self.pilot_width = pilot_width
        self.remap = remap
        self._prepare()

    def _prepare(self):
        n = self.n
        if n > LEAF_MAX:
            self._s = derive_seed(self.seed, self.restart)
            self._pseed = derive_seed(self._s, 0)
            self._nb = bucket_count(n)
            self._m = table_size(n)
        else:
            self._s = leaf_seed(self.seed, self.salt) if n > 1 else 0

    # -- build ------------------------------------------------------------

    @classmethod
    def build(cls, keys, payloads, payload_width, seed=DEFAULT_SEED):
        lo, hi = split_keys(keys)
        n = lo.size
        if n < 1:
            raise ValueError("n >= 1 keys required")
        if payload_width < 0 or payload_width > 64:
            raise ValueError("payload width must be in [0..64]")
        payloads = np.asarray([int(p) for p in payloads] if not isinstance(payloads, np.ndarray)
                              else payloads, dtype=object if payload_width == 64 else np.int64)
        if payloads.shape[0] != n:
            raise ValueError("payloads must align with keys")
        if n and (int(payloads.min()) < 0 or int(payloads.max()) >> payload_width):
            raise PayloadOverflowError(f"payload does not fit in {payload_width} bits")
        if _has_duplicates(lo, hi):
            raise DuplicateKeyError("duplicate keys")
        seed = int(seed) & _kernels.MASK64
        slots = np.zeros(n, dtype=U64)
        if n == 1:
            slots[0] = int(payloads[0])
            return cls(1, payload_width, seed, slots)
        if n <= LEAF_MAX:
            salt = int(_kernels.leaf_salts(lo, hi, np.array([0]), np.array([n]),
                                           np.array([seed], dtype=U64), MAX_LEAF_SALT)[0])
            if salt < 0:
                raise BuildFailure("no leaf salt found")
            pos = np_hash_keys(lo, hi, U64(leaf_seed(seed, salt))) % U64(n)
            slots[pos.astype(np.int64)] = payloads.astype(U64)
            return cls(n, payload_width, seed, slots, salt=salt)
        for restart in range(MAX_RESTARTS):
            built = cls._try_displace(lo, hi, seed, restart)
            if built is None:
                continue
            pilots, pos, remap = built
            slots[pos] = payloads.astype(U64)
            pw = bits_needed(int(pilots.max()))
            return cls(n, payload_width, seed, slots, restart=restart, pilots=pilots,
                       pilot_width=pw, remap=remap)
        raise BuildFailure(f"no displacement found after {MAX_RESTARTS} restarts")

    @staticmethod
    def _try_displace(lo, hi, seed, restart):
        n = lo.size
        m, nb = table_size(n), bucket_count(n)
        s = derive_seed(seed, restart)
        pseed = derive_seed(s, 0)
        h = np_hash_keys(lo, hi, U64(s))
        bucket = (_np_mix64(h) % U64(nb)).astype(np.int64)
        by_bucket = np.argsort(bucket, kind="stable")
        sizes = np.bincount(bucket, minlength=nb)
        starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        order = np.lexsort((np.arange(nb), -sizes))
        pilots, pos_sorted, ok = _kernels.pilot_search(
            order, starts, sizes, h[by_bucket], m, pseed, MAX_PILOT)
        if not ok:
            return None
        pos = np.empty(n, dtype=np.int64)
        pos[by_bucket] = pos_sorted
        remap = np.zeros(m - n, dtype=np.int64)
        high = np.sort(pos[pos >= n])
        if high.size:
            used = np.zeros(n, dtype=bool)
            used[pos[pos < n]] = True
            free = np.flatnonzero(~used)[:high.size]
            remap[high - n] = free
            pos = np.where(pos >= n, remap[np.maximum(pos - n, 0)], pos)
        return pilots, pos, remap

    # -- queries ----------------------------------------------------------

    def position(self, key):
        """Slot in ``[0..n)`` for ``key`` (a bijection on the build keys)."""
        key = int(key)
        lo, hi = key & _kernels.MASK64, key >> 64
        n = self.n
        if n == 1:
            return 0
        h = hash_key(lo, hi, self._s)
        if n <= LEAF_MAX:
            return h % n
        b = mix64(h) % self._nb
        p = (h ^ mix64(int(self.pilots[b]) ^ self._pseed)) % self._m
        return p if p < n else int(self.remap[p - n])

    def positions(self, keys):
        lo, hi = split_keys(keys)
        n = self.n
        if n == 1:
            return np.zeros(lo.size, dtype=np.int64)
        h = np_hash_keys(lo, hi, U64(self._s))
        if n <= LEAF_MAX:
            return (h % U64(n)).astype(np.int64)
        b = (_np_mix64(h) % U64(self._nb)).astype(np.int64)
        ph = _np_mix64(self.pilots[b].astype(U64) ^ U64(self._pseed))
        p = ((h ^ ph) % U64(self._m)).astype(np.int64)
        high = p >= n
        if high.any():
            p[high] = self.remap[p[high] - n]
        return p

    def lookup(self, key):
        return int(self.payloads[self.position(key)])

    def lookup_many(self, keys):
        return self.payloads[self.positions(keys)]

    # -- encoding ---------------------------------------------------------

    def encode(self, w):
        """Append the body (no n / width / seed) to a :class:`BitWriter`."""
        n = self.n
        if 1 < n <= LEAF_MAX:
            w.write_gamma(self.salt + 1)
        elif n > LEAF_MAX:
            w.write_gamma(self.restart + 1)
            w.write_gamma(self.pilot_width + 1)
            w.write_array(self.pilots, self.pilot_width)
            w.write_array(self.remap, ceil_log2(n))
        w.write_array(self.payloads, self.payload_width)

    @classmethod
    def decode(cls, reader, n, payload_width, seed):
        salt = restart = pw = 0
        pilots = remap = None
        if 1 < n <= LEAF_MAX:
            salt = reader.gamma() - 1
        elif n > LEAF_MAX:
            restart = reader.gamma() - 1
            pw = reader.gamma() - 1
            nb, m = bucket_count(n), table_size(n)
            pilots = cls._read_array(reader, nb, pw).astype(np.int64)
            remap = cls._read_array(reader, m - n, ceil_log2(n)).astype(np.int64)
        payloads = cls._read_array(reader, n, payload_width)
        return cls(n, payload_width, seed, payloads, salt=salt, restart=restart,
                   pilots=pilots, pilot_width=pw, remap=remap)

    @staticmethod
    def _read_array(reader, count, width):
        if count == 0 or width == 0:
            return np.zeros(count, dtype=U64)
        offs = reader.pos + width * np.arange(count, dtype=np.int64)
        vals = read_bits_many(reader.words, offs, width)
        reader.skip(count * width)
        return vals

    def body_bits(self):
        w = BitWriter()
        self.encode(w)
        return w.nbits

    _HEADER = struct.Struct("<QQQQ")

    def to_bytes(self):
        """``[n][payload_width][seed][body bit count][body words]``, u64 LE."""
        w = BitWriter()
        self.encode(w)
        words, nbits = w.words()
        return self._HEADER.pack(self.n, self.payload_width, self.seed, nbits) + \
            words.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, buf, offset=0):
        try:
            n, width, seed, nbits = cls._HEADER.unpack_from(buf, offset)
            offset += cls._HEADER.size
            nwords = (nbits + 63) // 64
            words = np.frombuffer(buf, dtype="<u8", count=nwords, offset=offset).astype(U64)
        except (struct.error, ValueError, OverflowError) as exc:
            raise FormatError(f"truncated perfect hash: {exc}") from None
        if n < 1 or width > 64:
            raise FormatError("bad perfect hash header")
        need = n * width
        if n > LEAF_MAX:
            need += (table_size(n) - n) * ceil_log2(n)
        if need > nbits:
            raise FormatError("perfect hash body too short for its header")
        reader = BitReader(padded(words))
        try:
            h = cls.decode(reader, n, width, seed)
        except (IndexError, ValueError, OverflowError) as exc:
            raise FormatError(f"corrupt perfect hash body: {exc}") from None
        if reader.pos != nbits:
            raise FormatError("perfect hash body length mismatch")
        if h.remap is not None and h.remap.size and int(h.remap.max()) >= n:
            raise FormatError("perfect hash remap entry out of range")
        return h, offset + 8 * nwords

    def space_bits(self):
        return 8 * len(self.to_bytes())

    def __repr__(self):
        kind = "leaf" if self.n <= LEAF_MAX else "displace"
        return (f"PerfectHashWithPayload(n={self.n}, payload_width={self.payload_width}, "
                f"layout={kind})")


def build_mphf(keys, payloads, payload_width, seed=DEFAULT_SEED):
    return PerfectHashWithPayload.build(keys, payloads, payload_width, seed)


def lookup(h, key):
    return h.lookup(key)


def mphf_space_bits(h):
    return h.space_bits()
