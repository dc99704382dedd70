"""Colorings of ``[0..u)`` and the counting bounds built on them.

A coloring assigns every ``x`` in ``[0..u)`` a color in ``[1..n]``; it
*encodes* ``x_1 < ... < x_n`` when ``x_i`` has color ``i``.  A family of
colorings is all-encoding when every increasing size-``n`` sequence is
encoded by some member, and ``log2`` of its minimum size lower-bounds the
space of any MMPHF.
"""
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InstanceTooLargeError

EXACT_BINOM_MAX_U = 10 ** 6
MAX_SEQUENCES = 10 ** 4
MAX_COLUMNS = 1 << 20
MAX_NODES = 2_000_000


class Coloring:
    """Flat color array over ``[0..u)`` with values in ``[1..n]``."""

    __slots__ = ("colors", "n")

    def __init__(self, colors, n=None):
        colors = np.asarray(colors, dtype=np.int64)
        if colors.ndim != 1:
            raise ValueError("coloring must be one-dimensional")
        if n is None:
            n = int(colors.max()) if colors.size else 1
        if colors.size and (colors.min() < 1 or colors.max() > n):
            raise ValueError(f"colors must lie in [1..{n}]")
        self.colors = colors
        self.n = int(n)

    @property
    def u(self):
        return int(self.colors.size)

    @classmethod
    def from_segments(cls, segments, u, n, max_u=1 << 26):
        """Materialise ``(start, end, color)`` half-open runs; gaps are errors."""
        if u > max_u:
            raise InstanceTooLargeError(f"u = {u} too large to materialise")
        colors = np.zeros(u, dtype=np.int64)
        for start, end, color in segments:
            if not 0 <= start < end <= u:
                raise ValueError(f"segment [{start}..{end}) outside [0..{u})")
            colors[start:end] = color
        if (colors == 0).any():
            raise ValueError("segments do not cover [0..u)")
        return cls(colors, n)

    def color_at(self, xs):
        return self.colors[np.asarray(xs, dtype=np.int64)]

    def __len__(self):
        return self.colors.size

    def __eq__(self, other):
        return (isinstance(other, Coloring) and self.n == other.n
                and np.array_equal(self.colors, other.colors))

    def __repr__(self):
        return f"Coloring(u={self.u}, n={self.n})"


def _check_seq(seq, u, n):
    seq = [int(x) for x in seq]
    if len(seq) != n:
        raise ValueError(f"sequence must have length n = {n}")
    if any(b <= a for a, b in zip(seq, seq[1:])):
        raise ValueError("sequence must be strictly increasing")
    if seq and (seq[0] < 0 or seq[-1] >= u):
        raise ValueError(f"sequence entries must lie in [0..{u})")
    return seq


def encodes(c, seq):
    """True iff ``c`` gives the ``i``-th element of ``seq`` color ``i``."""
    seq = _check_seq(seq, c.u, c.n)
    return all(int(c.colors[x]) == i for i, x in enumerate(seq, 1))


def color_class_sizes(c):
    return tuple(int(v) for v in np.bincount(c.colors, minlength=c.n + 1)[1:])


def max_encodable(c):
    """``(c_1 * ... * c_n, (u/n)**n)``: sequences ``c`` can encode, and the balanced cap."""
    return math.prod(color_class_sizes(c)), Fraction(c.u, c.n) ** c.n


# -- minimum all-encoding family -------------------------------------------


@dataclass(frozen=True)
class FamilyResult:
    u: int
    n: int
    size: int
    family: tuple
    weak_bound: Fraction
    sequences: int
    candidates: int
    nodes: int


def all_sequences(u, n):
    return list(itertools.combinations(range(u), n))


def _candidate_colorings(u, n, max_columns):
    # x can only ever be the j-th element of a sequence when j-1 <= x <= u-n+j-1;
    # colors outside that window never help, so they are fixed to a feasible one
    options = [list(range(max(1, x - (u - n) + 1), min(n, x + 1) + 1)) for x in range(u)]
    count = math.prod(len(o) for o in options)
    if count > max_columns:
        raise InstanceTooLargeError(
            f"{count} candidate colorings exceed the limit of {max_columns}")
    return np.array(list(itertools.product(*options)), dtype=np.int64).reshape(count, u)


def _coverage_masks(cands, seqs, n):
    want = np.arange(1, n + 1)
    masks = []
    step = max(1, (1 << 22) // max(1, len(seqs) * n))
    for lo in range(0, len(cands), step):
        hit = (cands[lo:lo + step][:, seqs] == want).all(axis=2)
        packed = np.packbits(hit, axis=1, bitorder="little")
        masks.extend(int.from_bytes(row.tobytes(), "little") for row in packed)
    return masks


def _prune(masks):
    """Drop duplicate and dominated columns; returns kept column indices."""
    first = {}
    for i, m in enumerate(masks):
        if m and m not in first:
            first[m] = i
    items = sorted(first.items(), key=lambda kv: -kv[0].bit_count())
    if len(items) > 5000:
        return [i for _, i in items]
    kept = []
    for m, i in items:
        if not any(m | k == k for k, _ in kept):
            kept.append((m, i))
    return [i for _, i in kept]


def _greedy(masks, full):
    chosen, left = [], full
    while left:
        best = max(range(len(masks)), key=lambda j: (masks[j] & left).bit_count())
        chosen.append(best)
        left &= ~masks[best]
    return chosen


def min_family_size(u, n, max_sequences=MAX_SEQUENCES, max_columns=MAX_COLUMNS,
                    max_nodes=MAX_NODES):
    """Exact minimum all-encoding family by branch and bound set cover."""
    if not 1 <= n <= u:
        raise ValueError("need 1 <= n <= u")
    nseq = math.comb(u, n)
    if nseq > max_sequences:
        raise InstanceTooLargeError(f"binom({u},{n}) = {nseq} exceeds {max_sequences}")
    seqs = np.array(all_sequences(u, n), dtype=np.int64).reshape(nseq, n)
    cands = _candidate_colorings(u, n, max_columns)
    all_masks = _coverage_masks(cands, seqs, n)
    keep = _prune(all_masks)
    masks = [all_masks[i] for i in keep]
    full = (1 << nseq) - 1

    best = _greedy(masks, full)
    maxcol = max(m.bit_count() for m in masks)
    covers = [[] for _ in range(nseq)]
    for j, m in enumerate(masks):
        x = m
        while x:
            low = x & -x
            covers[low.bit_length() - 1].append(j)
            x ^= low
    for lst in covers:
        lst.sort(key=lambda j: -masks[j].bit_count())
    nodes = 0

    def search(left, chosen):
        nonlocal best, nodes
        nodes += 1
        if nodes > max_nodes:
            raise InstanceTooLargeError(f"search exceeded {max_nodes} nodes")
        if not left:
            if len(chosen) < len(best):
                best = list(chosen)
            return
        need = -(-left.bit_count() // maxcol)
        if len(chosen) + need >= len(best):
            return
        # branch on the uncovered sequence with the fewest covering columns
        e, fewest = -1, None
        x = left
        while x:
            low = x & -x
            k = low.bit_length() - 1
            if fewest is None or len(covers[k]) < fewest:
                e, fewest = k, len(covers[k])
            x ^= low
        for j in covers[e]:
            chosen.append(j)
            search(left & ~masks[j], chosen)
            chosen.pop()

    search(full, [])
    family = tuple(tuple(int(v) for v in cands[keep[j]]) for j in sorted(best))
    weak = Fraction(nseq * n ** n, u ** n)
    return FamilyResult(u, n, len(family), family, weak, nseq, len(masks), nodes)


def is_all_encoding(family, u, n):
    """Exhaustive check that every size-``n`` sequence is encoded by a member."""
    cols = [Coloring(f, n) for f in family]
    return all(any(encodes(c, s) for c in cols) for s in itertools.combinations(range(u), n))


# -- bound calculator ------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    u: object
    n: int
    log2_u: float
    log_binom: float
    entropy_upper: float
    entropy_lower: float
    binom: object
    space_lower_bits: float
    alpha: float
    alpha_term: float
    alpha_bound: float
    approximate: bool

    @property
    def weak_family_bound(self):
        """``binom(u, n) / (u/n)**n`` as an exact fraction; ``None`` when approximate."""
        if self.binom is None:
            return None
        return Fraction(self.binom * self.n ** self.n, self.u ** self.n)

    def as_dict(self):
        d = dict(self.__dict__)
        binom = d.pop("binom")
        w = self.weak_family_bound
        d["weak_family_bound"] = None if w is None else float(w)
        if w is not None and binom < 1 << 256:
            d["weak_family_bound_exact"] = f"{w.numerator}/{w.denominator}"
        if isinstance(d["u"], int) and d["u"] > 1 << 64:
            d["u"] = str(d["u"])
        return d


def _h2(p):
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def _log2_int(x):
    return math.log2(x) if x > 0 else float("-inf")


def bound_report(u=None, n=None, log2_u=None, binom=None):
    """Entropy sandwich and weak family bound for ``n`` keys from ``[0..u)``.

    Pass ``log2_u`` instead of ``u`` for universes like ``2**(2**t)`` that are
    only handled in the log domain.  ``binom`` lets a sweep pass in an exact
    ``binom(u, n)`` it already holds.
    """
    if n is None or n < 1:
        raise ValueError("n >= 1 required")
    if u is None:
        if log2_u is None:
            raise ValueError("need u or log2_u")
        return _symbolic_report(float(log2_u), n)
    u = int(u)
    if n >= u:
        raise ValueError(f"need n < u, got n = {n}, u = {u}")
    l2u = math.log2(u)
    upper = n * math.log2(u / n) + (u - n) * math.log2(u / (u - n))
    lower = u * _h2(n / u) - math.log2(u + 1)
    alpha = (u - n) / n
    if u <= EXACT_BINOM_MAX_U:
        if binom is None:
            binom = math.comb(u, n)
        log_binom = _log2_int(binom)
        space = log_binom - n * math.log2(u / n)
        approx = False
    else:
        log_binom = (math.lgamma(u + 1) - math.lgamma(n + 1) - math.lgamma(u - n + 1)) / math.log(2)
        binom = None
        space = log_binom - n * math.log2(u / n)
        approx = True
    return BoundReport(
        u=u, n=n, log2_u=l2u, log_binom=log_binom, entropy_upper=upper, entropy_lower=lower,
        binom=binom, space_lower_bits=space, alpha=alpha,
        alpha_term=n * alpha * math.log2((1 + alpha) / alpha),
        alpha_bound=n * alpha * math.log2(1 / alpha) if alpha > 0 else 0.0,
        approximate=approx)


def bound_sweep(u_max, u_min=2):
    """Reports for every ``1 <= n < u`` with ``u_min <= u <= u_max``, row by row."""
    if u_max > EXACT_BINOM_MAX_U:
        raise InstanceTooLargeError("sweep limited to exact binomials")
    for u in range(max(2, u_min), u_max + 1):
        binom = 1
        for n in range(1, u):
            binom = binom * (u - n + 1) // n
            yield bound_report(u, n, binom=binom)


def _symbolic_report(l2u, n):
    # u >> n: log2 binom(u, n) = sum_{k<n} log2(u - k) - log2 n!, and u - k ~ u
    if l2u <= 64:
        u = 2 ** l2u
        if float(u).is_integer() and u <= EXACT_BINOM_MAX_U:
            return bound_report(int(u), n)
    lfact = math.lgamma(n + 1) / math.log(2)
    log_binom = n * l2u - lfact
    # (u - n) log2(u / (u - n)) -> n log2 e as u / n grows
    upper = n * (l2u - math.log2(n)) + n * math.log2(math.e)
    lower = upper - l2u
    return BoundReport(
        u=None, n=n, log2_u=l2u, log_binom=log_binom, entropy_upper=upper,
        entropy_lower=lower, binom=None,
        space_lower_bits=log_binom - n * (l2u - math.log2(n)),
        alpha=None, alpha_term=n * math.log2(math.e), alpha_bound=None,
        approximate=True)


EXAMPLE_COLORING = (1, 1, 2, 1, 3, 3, 2, 3, 1, 4, 4, 3, 5, 2, 5, 4, 5)
