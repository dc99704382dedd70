"""Hot inner loops, each in a numba flavour and a pure-numpy flavour.

The backend is picked at import time from ``MMPHLAB_NUMBA`` (``0``/``false``
selects numpy) and can be switched later with :func:`set_backend`.  Both
flavours must return identical results; the test-suite runs them side by side.
"""
import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

U64 = np.uint64
MASK64 = (1 << 64) - 1

_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
GOLDEN = 0x9E3779B97F4A7C15
_M1U = np.uint64(_M1)
_M2U = np.uint64(_M2)
_GOLDENU = np.uint64(GOLDEN)


def _env_wants_numba():
    flag = os.environ.get("MMPHLAB_NUMBA", "1").strip().lower()
    return HAVE_NUMBA and flag not in ("0", "false", "no", "off")


# ---------------------------------------------------------------------------
# scalar helpers (python ints), shared by every backend
# ---------------------------------------------------------------------------


def mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed, j):
    return mix64((seed + (j + 1) * GOLDEN) & MASK64)


def hash_key(lo, hi, seed):
    return mix64(lo ^ mix64(hi ^ seed))


# ---------------------------------------------------------------------------
# numpy flavour
# ---------------------------------------------------------------------------


def _np_mix64(z):
    z = np.asarray(z, dtype=U64)
    z = (z ^ (z >> U64(30))) * U64(_M1)
    z = (z ^ (z >> U64(27))) * U64(_M2)
    return z ^ (z >> U64(31))


def np_hash_keys(lo, hi, seed):
    """Vectorised :func:`hash_key`; ``seed`` may be a scalar or an array."""
    lo = np.asarray(lo, dtype=U64)
    hi = np.asarray(hi, dtype=U64)
    seed = np.asarray(seed, dtype=U64)
    return _np_mix64(lo ^ _np_mix64(hi ^ seed))


def np_derive_seeds(seed, js):
    js = np.asarray(js, dtype=U64)
    return _np_mix64(U64(seed) + (js + U64(1)) * U64(GOLDEN))


def _popcount_np(words):
    return np.bitwise_count(np.asarray(words, dtype=U64)).astype(np.int64)


def _rank9_np(words):
    nwords = words.shape[0]
    nsuper = (nwords >> 3) + 1
    padded = np.zeros(nsuper * 8, dtype=np.int64)
    padded[:nwords] = _popcount_np(words)
    per = padded.reshape(nsuper, 8)
    idx = np.zeros(2 * nsuper, dtype=U64)
    totals = per.sum(axis=1)
    idx[0::2] = np.concatenate(([0], np.cumsum(totals)[:-1])).astype(U64)
    cums = np.cumsum(per[:, :7], axis=1)
    packed = np.zeros(nsuper, dtype=U64)
    for j in range(7):
        packed |= cums[:, j].astype(U64) << U64(9 * j)
    idx[1::2] = packed
    return idx


def _select_samples_np(idx, total):
    supers = idx[0::2].astype(np.int64)
    nsamp = (total + 511) // 512
    targets = np.arange(nsamp, dtype=np.int64) * 512
    out = np.empty(nsamp + 1, dtype=U64)
    out[:nsamp] = (np.searchsorted(supers, targets, side="right") - 1).astype(U64)
    out[nsamp] = U64(supers.shape[0] - 1)
    return out


def _rank_many_np(words, idx, positions):
    pos = np.asarray(positions, dtype=np.int64)
    w = pos >> 6
    s = w >> 3
    j = w & 7
    r = idx[2 * s].astype(np.int64)
    sub = idx[2 * s + 1]
    shift = (9 * (j - 1)).clip(0).astype(U64)
    subc = ((sub >> shift) & U64(0x1FF)).astype(np.int64)
    r += np.where(j > 0, subc, 0)
    off = pos & 63
    has = off > 0
    if has.any():
        wi = w[has]
        mask = (U64(1) << off[has].astype(U64)) - U64(1)
        r[has] += np.bitwise_count(words[wi] & mask).astype(np.int64)
    return r


def _select_in_words_np(ws, ks):
    # position of the ks-th (0-indexed) set bit in each word
    out = np.empty(ws.shape[0], dtype=np.int64)
    shifts = np.arange(64, dtype=U64)
    step = 1 << 15
    for a in range(0, ws.shape[0], step):
        chunk = ws[a:a + step]
        bits = ((chunk[:, None] >> shifts[None, :]) & U64(1)).astype(np.int16)
        c = np.cumsum(bits, axis=1)
        out[a:a + step] = np.argmax(c > ks[a:a + step, None], axis=1)
    return out


def _select_many_np(words, idx, samples, ranks):
    r = np.asarray(ranks, dtype=np.int64)
    supers = idx[0::2].astype(np.int64)
    s = np.searchsorted(supers, r, side="right") - 1
    rem = r - supers[s]
    sub = idx[2 * s + 1]
    j = np.zeros(r.shape[0], dtype=np.int64)
    base = np.zeros(r.shape[0], dtype=np.int64)
    for t in range(7):
        c = ((sub >> U64(9 * t)) & U64(0x1FF)).astype(np.int64)
        hit = c <= rem
        j += hit
        base = np.where(hit, c, base)
    wi = 8 * s + j
    bit = _select_in_words_np(words[wi], rem - base)
    return wi * 64 + bit


def _leaf_salts_np(lo, hi, starts, sizes, seeds, max_salt):
    nb = starts.shape[0]
    salts = np.full(nb, -1, dtype=np.int64)
    bucket_of = np.repeat(np.arange(nb), sizes)
    first = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
    kidx = np.repeat(starts, sizes) + np.arange(bucket_of.shape[0]) - np.repeat(first, sizes)
    lo = lo[kidx]
    hi = hi[kidx]
    pending = np.arange(nb)
    salt = 0
    while pending.size and salt <= max_salt:
        sel = np.isin(bucket_of, pending)
        kb = bucket_of[sel]
        ss = np_derive_seeds(0, np.full(kb.shape[0], salt))
        bs = seeds[kb] ^ ss
        pos = np_hash_keys(lo[sel], hi[sel], bs) % sizes[kb].astype(U64)
        bits = U64(1) << pos
        first = np.concatenate(([0], np.cumsum(sizes[pending])[:-1]))
        ored = np.bitwise_or.reduceat(bits, first) if kb.size else bits
        full = (U64(1) << sizes[pending].astype(U64)) - U64(1)
        ok = ored == full
        salts[pending[ok]] = salt
        pending = pending[~ok]
        salt += 1
    return salts


def _pilot_search_np(order, bstart, bsize, h2, m, pseed, max_pilot):
    taken = np.zeros(m, dtype=bool)
    pilots = np.zeros(bsize.shape[0], dtype=np.int64)
    pos_out = np.empty(h2.shape[0], dtype=np.int64)
    chunk = 256
    mm = U64(m)
    for b in order:
        sz = bsize[b]
        if sz == 0:
            continue
        hs = h2[bstart[b]:bstart[b] + sz]
        found = -1
        for p0 in range(0, max_pilot + 1, chunk):
            ps = np.arange(p0, min(p0 + chunk, max_pilot + 1), dtype=U64)
            ph = _np_mix64(ps ^ U64(pseed))
            cand = ((hs[None, :] ^ ph[:, None]) % mm).astype(np.int64)
            free = ~taken[cand].any(axis=1)
            if sz > 1:
                srt = np.sort(cand, axis=1)
                free &= (srt[:, 1:] != srt[:, :-1]).all(axis=1)
            hit = np.flatnonzero(free)
            if hit.size:
                found = p0 + int(hit[0])
                chosen = cand[hit[0]]
                break
        if found < 0:
            return pilots, pos_out, False
        pilots[b] = found
        taken[chosen] = True
        pos_out[bstart[b]:bstart[b] + sz] = chosen
    return pilots, pos_out, True


# ---------------------------------------------------------------------------
# numba flavour
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, inline="always")
    def _nb_mix64(z):
        z = (z ^ (z >> U64(30))) * _M1U
        z = (z ^ (z >> U64(27))) * _M2U
        return z ^ (z >> U64(31))

    @njit(cache=True, inline="always")
    def _nb_pop(x):
        x = x - ((x >> U64(1)) & U64(0x5555555555555555))
        x = (x & U64(0x3333333333333333)) + ((x >> U64(2)) & U64(0x3333333333333333))
        x = (x + (x >> U64(4))) & U64(0x0F0F0F0F0F0F0F0F)
        return np.int64((x * U64(0x0101010101010101)) >> U64(56))

    @njit(cache=True, inline="always")
    def _nb_select_in_word(w, k):
        for _ in range(k):
            w &= w - U64(1)
        low = w & (~w + U64(1))
        return _nb_pop(low - U64(1))

    @njit(cache=True)
    def _rank9_nb(words):
        nwords = words.shape[0]
        nsuper = (nwords >> 3) + 1
        idx = np.zeros(2 * nsuper, dtype=np.uint64)
        total = 0
        for s in range(nsuper):
            idx[2 * s] = np.uint64(total)
            packed = U64(0)
            cum = 0
            for j in range(8):
                wi = 8 * s + j
                if j > 0:
                    packed |= np.uint64(cum) << np.uint64(9 * (j - 1))
                if wi < nwords:
                    cum += _nb_pop(words[wi])
            idx[2 * s + 1] = packed
            total += cum
        return idx

    @njit(cache=True)
    def _select_samples_nb(idx, total):
        nsuper = idx.shape[0] // 2
        nsamp = (total + 511) // 512
        out = np.empty(nsamp + 1, dtype=np.uint64)
        s = 0
        for k in range(nsamp):
            target = k * 512
            while s + 1 < nsuper and np.int64(idx[2 * (s + 1)]) <= target:
                s += 1
            out[k] = np.uint64(s)
        out[nsamp] = np.uint64(nsuper - 1)
        return out

    @njit(cache=True)
    def _rank_many_nb(words, idx, positions):
        out = np.empty(positions.shape[0], dtype=np.int64)
        for q in range(positions.shape[0]):
            pos = positions[q]
            w = pos >> 6
            s = w >> 3
            j = w & 7
            r = np.int64(idx[2 * s])
            if j > 0:
                r += np.int64((idx[2 * s + 1] >> np.uint64(9 * (j - 1))) & U64(0x1FF))
            off = pos & 63
            if off:
                r += _nb_pop(words[w] & ((U64(1) << np.uint64(off)) - U64(1)))
            out[q] = r
        return out

    @njit(cache=True)
    def _select_many_nb(words, idx, samples, ranks):
        out = np.empty(ranks.shape[0], dtype=np.int64)
        for q in range(ranks.shape[0]):
            r = ranks[q]
            k = r >> 9
            lo = np.int64(samples[k])
            hi = np.int64(samples[k + 1])
            while lo < hi:
                mid = (lo + hi + 1) >> 1
                if np.int64(idx[2 * mid]) <= r:
                    lo = mid
                else:
                    hi = mid - 1
            s = lo
            rem = r - np.int64(idx[2 * s])
            sub = idx[2 * s + 1]
            j = 0
            base = 0
            for t in range(7):
                c = np.int64((sub >> np.uint64(9 * t)) & U64(0x1FF))
                if c <= rem:
                    j = t + 1
                    base = c
                else:
                    break
            wi = 8 * s + j
            out[q] = wi * 64 + _nb_select_in_word(words[wi], rem - base)
        return out

    @njit(cache=True)
    def _leaf_salts_nb(lo, hi, starts, sizes, seeds, max_salt):
        nb = starts.shape[0]
        salts = np.full(nb, -1, dtype=np.int64)
        for b in range(nb):
            st = starts[b]
            sz = sizes[b]
            full = (U64(1) << np.uint64(sz)) - U64(1)
            for salt in range(max_salt + 1):
                s = seeds[b] ^ _nb_mix64(np.uint64(salt + 1) * _GOLDENU)
                seen = U64(0)
                for t in range(sz):
                    h = _nb_mix64(lo[st + t] ^ _nb_mix64(hi[st + t] ^ s))
                    seen |= U64(1) << (h % np.uint64(sz))
                if seen == full:
                    salts[b] = salt
                    break
        return salts

    @njit(cache=True)
    def _pilot_search_nb(order, bstart, bsize, h2, m, pseed, max_pilot):
        taken = np.zeros(m, dtype=np.bool_)
        pilots = np.zeros(bsize.shape[0], dtype=np.int64)
        pos_out = np.empty(h2.shape[0], dtype=np.int64)
        mm = np.uint64(m)
        cand = np.empty(64, dtype=np.int64)
        for oi in range(order.shape[0]):
            b = order[oi]
            sz = bsize[b]
            if sz == 0:
                continue
            if sz > cand.shape[0]:
                cand = np.empty(sz, dtype=np.int64)
            st = bstart[b]
            found = -1
            for p in range(max_pilot + 1):
                ph = _nb_mix64(np.uint64(p) ^ np.uint64(pseed))
                good = True
                for t in range(sz):
                    c = np.int64((h2[st + t] ^ ph) % mm)
                    if taken[c]:
                        good = False
                        break
                    for v in range(t):
                        if cand[v] == c:
                            good = False
                            break
                    if not good:
                        break
                    cand[t] = c
                if good:
                    found = p
                    break
            if found < 0:
                return pilots, pos_out, False
            pilots[b] = found
            for t in range(sz):
                taken[cand[t]] = True
                pos_out[st + t] = cand[t]
        return pilots, pos_out, True


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_NUMPY = {
    "rank9": _rank9_np,
    "select_samples": _select_samples_np,
    "rank_many": _rank_many_np,
    "select_many": _select_many_np,
    "leaf_salts": _leaf_salts_np,
    "pilot_search": _pilot_search_np,
}

if HAVE_NUMBA:
    _NUMBA = {
        "rank9": _rank9_nb,
        "select_samples": _select_samples_nb,
        "rank_many": _rank_many_nb,
        "select_many": _select_many_nb,
        "leaf_salts": _leaf_salts_nb,
        "pilot_search": _pilot_search_nb,
    }
else:  # pragma: no cover
    _NUMBA = None

_active = _NUMBA if _env_wants_numba() else _NUMPY


def backend():
    return "numba" if _active is _NUMBA else "numpy"


def set_backend(name):
    """Switch kernels to ``"numba"`` or ``"numpy"``; returns the previous name."""
    global _active
    prev = backend()
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _active = _NUMBA
    elif name == "numpy":
        _active = _NUMPY
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def kernels(name=None):
    """Kernel table for ``name`` (default: the active backend)."""
    if name is None:
        return _active
    return _NUMBA if name == "numba" else _NUMPY


def build_rank9(words):
    return _active["rank9"](words)


def select_samples(idx, total):
    return _active["select_samples"](idx, np.int64(total))


def rank_many(words, idx, positions):
    return _active["rank_many"](words, idx, np.ascontiguousarray(positions, dtype=np.int64))


def select_many(words, idx, samples, ranks):
    return _active["select_many"](words, idx, samples, np.ascontiguousarray(ranks, dtype=np.int64))


def leaf_salts(lo, hi, starts, sizes, seeds, max_salt):
    return _active["leaf_salts"](
        np.ascontiguousarray(lo, dtype=U64),
        np.ascontiguousarray(hi, dtype=U64),
        np.ascontiguousarray(starts, dtype=np.int64),
        np.ascontiguousarray(sizes, dtype=np.int64),
        np.ascontiguousarray(seeds, dtype=U64),
        np.int64(max_salt),
    )


def pilot_search(order, bstart, bsize, h2, m, pseed, max_pilot):
    return _active["pilot_search"](
        np.ascontiguousarray(order, dtype=np.int64),
        np.ascontiguousarray(bstart, dtype=np.int64),
        np.ascontiguousarray(bsize, dtype=np.int64),
        np.ascontiguousarray(h2, dtype=U64),
        np.int64(m),
        np.uint64(pseed),
        np.int64(max_pilot),
    )
