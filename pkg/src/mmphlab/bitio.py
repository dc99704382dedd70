"""LSB-first bit streams packed into little-endian 64-bit words.

Writers collect ``(value, width)`` fields and lay them out with numpy in one
shot; readers work on a word array padded with a trailing zero word so that a
field straddling the last word boundary can be read without bounds checks.
"""
import numpy as np

U64 = np.uint64


def bits_needed(v):
    """Bits needed to write any value in ``[0..v]``."""
    return int(v).bit_length()


def ceil_log2(x):
    """``ceil(log2(x))`` for ``x >= 1``; 0 for ``x <= 1``."""
    x = int(x)
    return 0 if x <= 1 else (x - 1).bit_length()


def gamma_len(v):
    """Length of the Elias-gamma code of ``v >= 1``."""
    return 2 * int(v).bit_length() - 1


class BitWriter:
    """Accumulates fields; :meth:`words` packs them."""

    def __init__(self):
        self._values = []
        self._widths = []
        self._arrays = []  # (values array, width) blocks appended in order
        self.nbits = 0

    def write(self, value, width):
        if width == 0:
            return
        value = int(value)
        if value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        self._values.append(value)
        self._widths.append(width)
        self.nbits += width

    def write_array(self, values, width):
        """Append ``len(values)`` fixed-width fields."""
        values = np.asarray(values, dtype=U64)
        if width == 0 or values.size == 0:
            return
        if width < 64 and values.size and int(values.max()) >> width:
            raise ValueError(f"array values do not fit in {width} bits")
        self._seal_scalars()
        self._arrays.append((values, width))
        self.nbits += width * values.size

    def write_gamma(self, v):
        v = int(v)
        if v < 1:
            raise ValueError("gamma code needs v >= 1")
        z = v.bit_length() - 1
        # z zeros, a one, then the low z bits
        self.write(0, z)
        self.write(1, 1)
        self.write(v & ((1 << z) - 1), z)

    def write_bits(self, bits):
        """Append another stream given as ``(words, nbits)``."""
        words, nbits = bits
        full, rest = divmod(nbits, 64)
        if full:
            self.write_array(np.asarray(words[:full], dtype=U64), 64)
        if rest:
            self.write(int(words[full]) & ((1 << rest) - 1), rest)

    def _seal_scalars(self):
        if self._values:
            self._arrays.append((self._values, self._widths))
            self._values, self._widths = [], []

    def fields(self):
        """Return ``(values, widths)`` arrays describing every field in order."""
        self._seal_scalars()
        vals, wids = [], []
        for values, width in self._arrays:
            if isinstance(width, list):
                vals.append(np.array([v for v in values], dtype=object))
                wids.append(np.asarray(width, dtype=np.int64))
            else:
                vals.append(values)
                wids.append(np.full(values.size, width, dtype=np.int64))
        if not vals:
            return np.zeros(0, dtype=U64), np.zeros(0, dtype=np.int64)
        return (np.concatenate([np.asarray(v, dtype=U64) for v in vals]),
                np.concatenate(wids))

    def words(self):
        values, widths = self.fields()
        return pack_fields(values, widths), self.nbits


def pack_fields(values, widths, offsets=None, nbits=None):
    """Lay out fields LSB-first; returns a uint64 word array.

    ``offsets`` defaults to the running sum of ``widths``.  Fields wider than
    64 bits are not supported.
    """
    values = np.asarray(values, dtype=U64)
    widths = np.asarray(widths, dtype=np.int64)
    if offsets is None:
        offsets = np.concatenate(([0], np.cumsum(widths)[:-1])).astype(np.int64)
    if nbits is None:
        nbits = int(offsets[-1] + widths[-1]) if widths.size else 0
    nwords = (nbits + 63) // 64
    out = np.zeros(nwords + 1, dtype=U64)
    keep = widths > 0
    if keep.any():
        v = values[keep]
        w = widths[keep]
        o = np.asarray(offsets, dtype=np.int64)[keep]
        mask = np.where(w >= 64, U64(0xFFFFFFFFFFFFFFFF),
                        (U64(1) << np.minimum(w, 63).astype(U64)) - U64(1))
        v = v & mask
        wi = o >> 6
        sh = (o & 63).astype(U64)
        np.bitwise_or.at(out, wi, v << sh)
        spill = (o & 63) + w > 64
        if spill.any():
            np.bitwise_or.at(out, wi[spill] + 1, v[spill] >> (U64(64) - sh[spill]))
    return out[:nwords]


def padded(words):
    """Copy of ``words`` with one zero word appended (reader convention)."""
    out = np.zeros(len(words) + 1, dtype=U64)
    out[:len(words)] = words
    return out


def read_bits(words, offset, width):
    """Scalar read of ``width`` (<= 64) bits at ``offset`` from padded words."""
    if width == 0:
        return 0
    wi, sh = offset >> 6, offset & 63
    v = int(words[wi]) >> sh
    if sh + width > 64:
        v |= int(words[wi + 1]) << (64 - sh)
    return v & ((1 << width) - 1)


def read_bits_many(words, offsets, widths):
    """Vectorised read; ``widths`` may be scalar or array, each <= 64."""
    offsets = np.asarray(offsets, dtype=np.int64)
    widths = np.broadcast_to(np.asarray(widths, dtype=np.int64), offsets.shape)
    wi = offsets >> 6
    sh = (offsets & 63).astype(U64)
    lo = words[wi] >> sh
    hi_part = np.where(sh > 0, words[wi + 1] << ((U64(64) - sh) & U64(63)), U64(0))
    v = lo | hi_part
    mask = np.where(widths >= 64, U64(0xFFFFFFFFFFFFFFFF),
                    (U64(1) << np.minimum(widths, 63).astype(U64)) - U64(1))
    return np.where(widths > 0, v & mask, U64(0))


def read_gamma(words, offset):
    """Decode an Elias-gamma value; returns ``(value, new_offset)``."""
    z = 0
    while not read_bits(words, offset + z, 1):
        z += 1
    offset += z + 1
    low = read_bits(words, offset, z) if z else 0
    return (1 << z) | low, offset + z


class BitReader:
    """Sequential reader over a padded word array."""

    def __init__(self, words, offset=0):
        self.words = words
        self.pos = offset

    def read(self, width):
        v = read_bits(self.words, self.pos, width)
        self.pos += width
        return v

    def gamma(self):
        v, self.pos = read_gamma(self.words, self.pos)
        return v

    def skip(self, nbits):
        self.pos += nbits
