"""Hierarchical random process over nested blocks, and its density analysis.

``[0..u)`` is split ``f``-ways into blocks of level 1, each of those ``f``-ways
again, down to level ``L = f**(n-1)`` whose blocks have ``lastlen`` elements,
so ``u = f**L * lastlen``.  A run of the process first picks levels
``0 = l_1 < l_2 < ... < l_n`` by repeatedly cutting the current level interval
into ``f`` parts and taking any part but the first.  It then picks ``x_i``
uniformly from the current block minus its last level-``l_{i+1}`` sub-block,
and descends into the level-``l_{i+1}`` block right after ``x_i``'s.

Exact quantities are rationals: :class:`fractions.Fraction` or integer
numerators over a shared denominator.
"""
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coloring import Coloring, encodes
from .errors import BudgetExceededError

MAX_UNIVERSE = 1 << 24
MC_MAX_UNIVERSE = 1 << 62
MAX_OUTCOMES = 2_000_000
CHUNK = 1 << 16
Z99 = 2.5758293035489004


# -- parameters ------------------------------------------------------------


@dataclass(frozen=True)
class ProcessParams:
    n: int
    f: int
    lastlen: int
    L: int
    u: int
    tau: Fraction
    sigma: float
    theta: float
    mc_only: bool = False

    def block_len(self, level):
        return self.f ** (self.L - level) * self.lastlen

    def span(self, stage):
        """Length of the level interval used on ``stage`` (1-based)."""
        return self.L // self.f ** (stage - 1)

    def as_dict(self):
        return {"n": self.n, "f": self.f, "lastlen": self.lastlen, "L": self.L, "u": self.u,
                "tau": str(self.tau), "sigma": self.sigma, "theta": self.theta}


def make_params(n, f, lastlen=None, tau=None, sigma=None, theta=None,
                max_universe=MAX_UNIVERSE, mc_only=False):
    """Derive ``L`` and ``u``; ``lastlen`` defaults to ``f``.

    Exact work needs ``u <= max_universe``; ``mc_only`` relaxes that to what
    sampling with 64-bit integers can handle.
    """
    if n < 2:
        raise ValueError("n >= 2 required")
    if f < 2:
        raise ValueError("f >= 2 required")
    lastlen = f if lastlen is None else int(lastlen)
    if lastlen < 1:
        raise ValueError("lastlen >= 1 required")
    L = f ** (n - 1)
    cap = MC_MAX_UNIVERSE if mc_only else max_universe
    if L * math.log2(f) + math.log2(lastlen) > math.log2(cap) + 1e-9:
        raise BudgetExceededError(
            f"u = {f}**{L} * {lastlen} exceeds the universe budget of 2**{cap.bit_length() - 1}"
            + ("" if mc_only else "; sampling-only parameters allow more"))
    u = f ** L * lastlen
    tau = Fraction(2, n) if tau is None else Fraction(tau)
    sigma = 2.0 ** (-n / 8) if sigma is None else float(sigma)
    theta = 1.0 - f ** -0.25 if theta is None else float(theta)
    return ProcessParams(n, f, lastlen, L, u, tau, sigma, theta, mc_only)


def _as_coloring(c, p):
    if not isinstance(c, Coloring):
        c = Coloring(np.asarray(c), p.n)
    if c.u != p.u:
        raise ValueError(f"coloring covers {c.u} elements, process universe is {p.u}")
    if c.n != p.n:
        raise ValueError(f"coloring uses {c.n} colors, process needs {p.n}")
    return c


def level_sequences(p):
    """All ``(l_1, ..., l_n)`` in lexicographic order of the part choices."""
    for ks in itertools.product(range(1, p.f), repeat=p.n - 1):
        yield levels_from_choices(p, ks)


def levels_from_choices(p, ks):
    levels = [0]
    for i, k in enumerate(ks, 1):
        levels.append(levels[-1] + k * p.span(i + 1))
    return tuple(levels)


def intervals_of(p, levels):
    return tuple((l, l + p.span(i)) for i, l in enumerate(levels, 1))


# -- sampling --------------------------------------------------------------


def make_rng(seed, stream=None):
    """Counter-based generator; ``stream`` picks an independent substream."""
    ss = np.random.SeedSequence(int(seed))
    if stream is not None:
        ss = ss.spawn(stream + 1)[stream]
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ProcessTrace:
    intervals: tuple
    blocks: tuple
    xs: tuple
    probability: Fraction

    @property
    def levels(self):
        return tuple(a for a, _ in self.intervals)


@dataclass(frozen=True)
class TraceClass:
    """Traces sharing levels and blocks; ``x_ranges[i]`` holds the possible ``x_i``."""
    intervals: tuple
    blocks: tuple
    x_ranges: tuple
    probability: Fraction

    @property
    def levels(self):
        return tuple(a for a, _ in self.intervals)


def sample_levels(p, rng):
    ks = [int(k) for k in rng.integers(1, p.f, size=p.n - 1)]
    levels = levels_from_choices(p, ks)
    return intervals_of(p, levels), levels


def sample_elements(p, levels, rng):
    n = p.n
    start, end = 0, p.u
    blocks, xs = [(0, p.u)], []
    prob = Fraction(1, (p.f - 1) ** (n - 1))
    for i in range(n - 1):
        b = p.block_len(levels[i + 1])
        width = end - b - start
        x = start + int(rng.integers(0, width))
        prob /= width
        xs.append(x)
        start = (x // b + 1) * b
        end = start + b
        blocks.append((start, end))
    xs.append(start + int(rng.integers(0, end - start)))
    prob /= end - start
    return ProcessTrace(intervals_of(p, levels), tuple(blocks), tuple(xs), prob)


def sample_trace(p, rng):
    _, levels = sample_levels(p, rng)
    return sample_elements(p, levels, rng)


@dataclass
class TraceBatch:
    """Column arrays for many sampled traces."""
    choices: np.ndarray
    levels: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    xs: np.ndarray

    def __len__(self):
        return self.xs.shape[0]


def _block_len_table(p):
    return np.array([p.block_len(l) for l in range(p.L + 1)], dtype=np.int64)


def sample_batch(p, size, rng):
    """Vectorised sampler returning a :class:`TraceBatch` of ``size`` traces."""
    if p.u > MC_MAX_UNIVERSE:
        raise BudgetExceededError("sampling needs u <= 2**62")
    n = p.n
    blen = _block_len_table(p)
    ks = rng.integers(1, p.f, size=(size, n - 1))
    spans = np.array([p.span(i + 1) for i in range(1, n)], dtype=np.int64)
    levels = np.zeros((size, n), dtype=np.int64)
    levels[:, 1:] = np.cumsum(ks * spans, axis=1)
    starts = np.zeros((size, n), dtype=np.int64)
    ends = np.zeros((size, n), dtype=np.int64)
    xs = np.zeros((size, n), dtype=np.int64)
    start = np.zeros(size, dtype=np.int64)
    end = np.full(size, p.u, dtype=np.int64)
    for i in range(n - 1):
        starts[:, i], ends[:, i] = start, end
        b = blen[levels[:, i + 1]]
        x = start + rng.integers(0, end - b - start)
        xs[:, i] = x
        start = (x // b + 1) * b
        end = start + b
    starts[:, -1], ends[:, -1] = start, end
    xs[:, -1] = start + rng.integers(0, end - start)
    return TraceBatch(ks, levels, starts, ends, xs)


def _chunked(total, seed, fn, workers=1):
    """Run ``fn(size, rng)`` over fixed chunks with one substream per chunk.

    Chunk boundaries and streams do not depend on ``workers``, so results are
    identical for any worker count.
    """
    sizes = [min(CHUNK, total - lo) for lo in range(0, total, CHUNK)]
    seq = np.random.SeedSequence(int(seed)).spawn(len(sizes))
    jobs = [(s, np.random.Generator(np.random.Philox(ss))) for s, ss in zip(sizes, seq)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda a: fn(*a), jobs))
    return [fn(*a) for a in jobs]


# -- exact enumeration -----------------------------------------------------


def outcome_count(p, granularity="trace"):
    """Number of items :func:`enumerate_outcomes` would yield."""
    total = 0
    for levels in level_sequences(p):
        c = 1
        for i in range(p.n - 1):
            m = p.f ** (levels[i + 1] - levels[i])
            c *= (m - 1) * (p.block_len(levels[i + 1]) if granularity == "trace" else 1)
        total += c * (p.block_len(levels[-1]) if granularity == "trace" else 1)
    return total


def enumerate_outcomes(p, granularity="trace", max_outcomes=MAX_OUTCOMES):
    """Every outcome with its exact probability, in a fixed order.

    ``granularity="trace"`` yields :class:`ProcessTrace` per element choice;
    ``"block"`` yields one :class:`TraceClass` per choice of levels and blocks,
    which keeps the count small when blocks are long.
    """
    if granularity not in ("trace", "block"):
        raise ValueError("granularity must be 'trace' or 'block'")
    count = outcome_count(p, granularity)
    if count > max_outcomes:
        hint = " (try granularity='block' or Monte Carlo)" if granularity == "trace" else ""
        raise BudgetExceededError(f"{count} outcomes exceed the budget of {max_outcomes}{hint}")
    return _enumerate(p, granularity)


def _enumerate(p, granularity):
    lvl_prob = Fraction(1, (p.f - 1) ** (p.n - 1))
    for levels in level_sequences(p):
        ivs = intervals_of(p, levels)
        yield from _descend(p, levels, ivs, 0, (0, p.u), [(0, p.u)], [], lvl_prob, granularity)


def _descend(p, levels, ivs, i, block, blocks, picks, prob, granularity):
    start, end = block
    if i == p.n - 1:
        if granularity == "block":
            yield TraceClass(ivs, tuple(blocks), tuple(picks) + ((start, end),), prob)
            return
        w = Fraction(1, end - start)
        for x in range(start, end):
            yield ProcessTrace(ivs, tuple(blocks), tuple(picks) + (x,), prob * w)
        return
    b = p.block_len(levels[i + 1])
    width = end - b - start
    if granularity == "block":
        w = Fraction(b, width)
        for s in range(start + b, end, b):
            nxt = (s, s + b)
            yield from _descend(p, levels, ivs, i + 1, nxt, blocks + [nxt],
                                picks + [(s - b, s)], prob * w, granularity)
        return
    w = Fraction(1, width)
    for x in range(start, end - b):
        s = (x // b + 1) * b
        nxt = (s, s + b)
        yield from _descend(p, levels, ivs, i + 1, nxt, blocks + [nxt], picks + [x],
                            prob * w, granularity)


# -- encoding probability --------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    value: object
    exact: bool
    stderr: float = 0.0
    ci99: float = 0.0
    samples: int = 0
    seed: object = None

    def as_dict(self):
        v = self.value
        d = {"value": float(v), "exact": self.exact, "stderr": self.stderr,
             "ci99_halfwidth": self.ci99, "samples": self.samples, "seed": self.seed}
        if isinstance(v, Fraction):
            d["value_exact"] = f"{v.numerator}/{v.denominator}"
        return d


class _Counts:
    """Per-block color counts, built once per (color, level)."""

    def __init__(self, p, colors):
        self.p = p
        self.colors = colors
        self._cache = {}

    def __call__(self, color, level):
        key = (color, level)
        got = self._cache.get(key)
        if got is None:
            deeper = self._cache.get((color, level + 1))
            if deeper is not None:
                got = deeper.reshape(-1, self.p.f).sum(axis=1)
            else:
                ind = (self.colors == color).astype(np.int64)
                got = ind.reshape(self.p.f ** level, -1).sum(axis=1)
            self._cache[key] = got
        return got


def _dtype_for(bound):
    return np.int64 if bound < 1 << 62 else object


def _encode_prob_given_levels(p, counts, levels):
    """``(numerator, denominator)`` of P(encoded | levels)."""
    n, f = p.n, p.f
    dt = _dtype_for(p.u ** n)
    b_n = p.block_len(levels[-1])
    num = counts(n, levels[-1]).astype(dt)
    den = b_n
    for i in range(n - 2, -1, -1):
        d = levels[i + 1] - levels[i]
        m = f ** d
        child = counts(i + 1, levels[i + 1]).astype(dt).reshape(-1, m)
        nxt = num.reshape(-1, m)
        w = child[:, :-1] * nxt[:, 1:]
        num = w.sum(axis=1)
        den *= (m - 1) * p.block_len(levels[i + 1])
    return int(num[0]), den


def encoding_probability(p, c, mode="exact", samples=100_000, seed=0, workers=1,
                         max_outcomes=MAX_OUTCOMES):
    """Probability that coloring ``c`` encodes the sequence the process emits.

    ``mode="exact"`` returns a Fraction (dynamic programme over blocks);
    ``mode="montecarlo"`` returns a sample mean with standard error and 99%
    confidence half-width.
    """
    c = _as_coloring(c, p)
    if mode == "exact":
        _exact_guard(p, max_outcomes)
        counts = _Counts(p, c.colors)
        total = Fraction(0)
        for levels in level_sequences(p):
            num, den = _encode_prob_given_levels(p, counts, levels)
            total += Fraction(num, den)
        return Estimate(total / (p.f - 1) ** (p.n - 1), True)
    if mode in ("montecarlo", "mc"):
        want = np.arange(1, p.n + 1)

        def run(size, rng):
            batch = sample_batch(p, size, rng)
            return int((c.colors[batch.xs] == want).all(axis=1).sum())

        hits = sum(_chunked(samples, seed, run, workers))
        return _mc_estimate(hits, samples, seed)
    raise ValueError(f"unknown mode {mode!r}")


def _mc_estimate(hits, samples, seed):
    est = hits / samples
    se = math.sqrt(est * (1 - est) / samples)
    return Estimate(est, False, se, Z99 * se, samples, seed)


def _exact_guard(p, max_outcomes):
    if p.u > MAX_UNIVERSE:
        raise BudgetExceededError(f"exact mode needs u <= {MAX_UNIVERSE}, got {p.u}")
    if (p.f - 1) ** (p.n - 1) > max_outcomes:
        raise BudgetExceededError("too many level sequences for exact mode")


def encoding_probability_by_traces(p, c, max_outcomes=MAX_OUTCOMES):
    """Reference value summed over every trace; slow, for cross-checks."""
    c = _as_coloring(c, p)
    total = Fraction(0)
    for t in enumerate_outcomes(p, "trace", max_outcomes):
        if encodes(c, t.xs):
            total += t.probability
    return total


# -- reachability ----------------------------------------------------------


def level_digits(p, level):
    """Base-``f`` digits of ``level``, most significant first, ``n-1`` of them."""
    out = []
    for _ in range(p.n - 1):
        level, d = divmod(level, p.f)
        out.append(d)
    return tuple(reversed(out))


def stage_levels(p, stage, level):
    """Levels ``l_1..l_stage`` forced by ``l_stage = level``, or None if not reachable."""
    digits = level_digits(p, level)
    if not 0 <= level < p.L:
        return None
    if any(d == 0 for d in digits[:stage - 1]) or any(digits[stage - 1:]):
        return None
    return levels_from_choices(p, digits[:stage - 1])


def _reach_mask(p, levels):
    """Blocks at ``levels[-1]`` reachable along ``levels``; each has probability 1/den."""
    mask = np.ones(1, dtype=bool)
    den = 1
    for a, b in zip(levels, levels[1:]):
        m = p.f ** (b - a)
        child = np.repeat(mask, m).reshape(-1, m)
        child[:, 0] = False
        mask = child.ravel()
        den *= m - 1
    return mask, den


@dataclass(frozen=True)
class Census:
    stage: int
    level: int
    valid: bool
    level_probability: Fraction
    blocks: int
    reachable: int
    block_probability: Fraction
    unreachable_fraction: Fraction
    uniform: bool
    probabilities: tuple = field(repr=False, default=())

    def as_dict(self):
        return {"stage": self.stage, "level": self.level, "valid": self.valid,
                "level_probability": str(self.level_probability), "blocks": self.blocks,
                "reachable": self.reachable, "block_probability": str(self.block_probability),
                "unreachable_fraction": str(self.unreachable_fraction),
                "uniform": self.uniform}


def reachability_census(p, stage, level, max_blocks=MAX_OUTCOMES):
    """Exact probability of reaching each level-``level`` block on ``stage``.

    Probabilities are conditional on ``l_stage = level``.
    """
    if not 1 <= stage <= p.n:
        raise ValueError(f"stage must be in [1..{p.n}]")
    nblocks = p.f ** level
    if nblocks > max_blocks:
        raise BudgetExceededError(f"{nblocks} blocks exceed the budget of {max_blocks}")
    levels = stage_levels(p, stage, level)
    if levels is None:
        z = Fraction(0)
        return Census(stage, level, False, z, nblocks, 0, z, Fraction(1), True,
                      (z,) * min(nblocks, 4096))
    mask, den = _reach_mask(p, levels)
    probs = np.where(mask, 1, 0)
    nz = probs[probs > 0]
    uniform = bool(nz.size == 0 or (nz == nz[0]).all())
    reach = int(mask.sum())
    lp = Fraction(1, (p.f - 1) ** (stage - 1))
    bp = Fraction(1, den)
    if Fraction(reach, den) != 1:
        raise AssertionError("reach probabilities do not sum to one")
    fr = tuple(bp if v else Fraction(0) for v in mask[:4096])
    return Census(stage, level, True, lp, nblocks, reach, bp,
                  Fraction(nblocks - reach, nblocks), uniform, fr)


def census_all(p, max_blocks=MAX_OUTCOMES):
    """Census for every stage and every level that stage can take."""
    out = []
    for stage in range(1, p.n + 1):
        for ks in itertools.product(range(1, p.f), repeat=stage - 1):
            level = levels_from_choices(p, ks)[-1]
            if p.f ** level <= max_blocks:
                out.append(reachability_census(p, stage, level, max_blocks))
    return out


def reach_by_enumeration(p, stage, max_outcomes=MAX_OUTCOMES):
    """``{(level, block_start): probability}`` from full block-level enumeration."""
    out = {}
    for t in enumerate_outcomes(p, "block", max_outcomes):
        key = (t.levels[stage - 1], t.blocks[stage - 1][0])
        out[key] = out.get(key, Fraction(0)) + t.probability
    return out


# -- density analysis ------------------------------------------------------


def mask_to_intervals(mask, offset, length):
    """Maximal runs of True in ``mask`` as absolute ``(start, end)`` pairs."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    edges = np.flatnonzero(m[1:] != m[:-1])
    return [(offset + int(a) * length, offset + int(b) * length)
            for a, b in zip(edges[::2], edges[1::2])]


def interval_size(ivs):
    return sum(b - a for a, b in ivs)


def _frac_ge(num, den, t):
    # num / den >= t for a Fraction t, elementwise
    return np.asarray(num, dtype=object) * t.denominator >= np.asarray(den, dtype=object) * t.numerator


class _Context:
    """Density data for every level-``lam0`` block at once, for one color."""

    def __init__(self, p, counts, color, lam0, span):
        self.p, self.color, self.lam0, self.span = p, color, lam0, span
        f = p.f
        if span % f:
            raise ValueError("level interval too short to split")
        self.step = span // f
        self.lambdas = [lam0 + k * self.step for k in range(f + 1)]
        top = lam0 + span - 1
        self.dense = {}
        for l in range(lam0, top + 1):
            cnt = counts(color, l)
            self.dense[l] = _frac_ge(cnt, p.block_len(l), p.tau).astype(bool)
        self.D = {}
        prev = None
        for l in range(lam0, top + 1):
            prev = self.dense[l] if prev is None else np.repeat(prev, f) & self.dense[l]
            self.D[l] = prev
        nb = f ** lam0
        blen0 = p.block_len(lam0)
        self.nB = nb
        # |D_l inside B| per context block, with D_{lam0 - 1} = B
        self.dsize = {lam0 - 1: np.full(nb, blen0, dtype=np.int64)}
        for l in range(lam0, top + 1):
            self.dsize[l] = self.D[l].reshape(nb, -1).sum(axis=1) * p.block_len(l)
        cntB = counts(color, lam0)
        thresh = p.tau + Fraction(p.sigma)
        self.almost_sparse = np.array(
            [int(cb) * thresh.denominator <= thresh.numerator * blen0 for cb in cntB.tolist()])
        theta = Fraction(p.theta)
        self.q_num = np.zeros((nb, f), dtype=np.int64)
        self.q_den = np.zeros((nb, f), dtype=np.int64)
        self.abnormal = np.zeros((nb, f), dtype=bool)
        for k in range(f):
            num = self.dsize[self.lambdas[k + 1] - 1]
            den = self.dsize[self.lambdas[k] - 1]
            self.q_num[:, k] = np.where(den > 0, num, 1)
            self.q_den[:, k] = np.where(den > 0, den, 1)
            if k >= 1:
                low = ~_frac_ge(self.q_num[:, k], self.q_den[:, k], theta).astype(bool)
                self.abnormal[:, k] = low & ~self.almost_sparse

    def q(self, bi, k):
        return Fraction(int(self.q_num[bi, k]), int(self.q_den[bi, k]))

    def final_flags(self, k, level):
        """Abnormal flag for every block at ``level`` inside ``[lambda_k..lambda_{k+1})``."""
        p = self.p
        lk = self.lambdas[k]
        if not lk <= level < self.lambdas[k + 1] or k < 1:
            raise ValueError("level outside the chosen part")
        per_b = p.f ** (level - self.lam0)
        bi = np.arange(p.f ** level) // per_b
        not_as = ~self.almost_sparse[bi]
        in_d = self.D[lk - 1][np.arange(p.f ** level) // p.f ** (level - lk + 1)]
        sparse = ~self.dense[level]
        return not_as & (self.abnormal[bi, k] | (in_d & sparse))


@dataclass
class DensityProfile:
    params: ProcessParams
    color: int
    block: tuple
    levels: tuple
    S: dict
    D: dict
    lambdas: tuple
    q: tuple
    abnormal: dict
    almost_sparse: bool
    partitions: dict
    abnormal_blocks: dict
    color_fraction: Fraction

    def as_dict(self):
        return {
            "color": self.color, "block": list(self.block), "levels": list(self.levels),
            "S": {str(l): v for l, v in self.S.items()},
            "D": {str(l): v for l, v in self.D.items()},
            "lambdas": list(self.lambdas), "q": [str(x) for x in self.q],
            "abnormal": {str(k): v for k, v in self.abnormal.items()},
            "almost_sparse": self.almost_sparse,
            "partitions": {str(k): {"S_bar": s, "D_bar": d}
                           for k, (s, d) in self.partitions.items()},
            "abnormal_blocks": {str(l): v for l, v in self.abnormal_blocks.items()},
            "color_fraction": str(self.color_fraction),
        }


def _check_context(p, B, H):
    h0, h1 = H
    span = h1 - h0
    stage = None
    for i in range(1, p.n):
        if p.span(i) == span:
            stage = i
    if stage is None or h0 % span or not 0 <= h0 < h1 <= p.L:
        raise ValueError(f"level interval {H} is not an aligned stage interval")
    blen = p.block_len(h0)
    b0, b1 = B
    if b1 - b0 != blen or b0 % blen or not 0 <= b0 < b1 <= p.u:
        raise ValueError(f"block {B} is not a level-{h0} block")
    return stage


def density_profile(p, c, B, H, color):
    """Sparse/dense structure of block ``B`` across levels ``H`` for ``color``."""
    c = _as_coloring(c, p)
    _check_context(p, B, H)
    if not 1 <= color <= p.n:
        raise ValueError("color out of range")
    counts = _Counts(p, c.colors)
    lam0, span = H[0], H[1] - H[0]
    ctx = _Context(p, counts, color, lam0, span)
    blen0 = p.block_len(lam0)
    bi = B[0] // blen0
    f = p.f
    S, D = {}, {}
    for l in range(lam0, lam0 + span):
        per = f ** (l - lam0)
        d = ctx.D[l][bi * per:(bi + 1) * per]
        D[l] = mask_to_intervals(d, B[0], p.block_len(l))
        S[l] = mask_to_intervals(~d, B[0], p.block_len(l))
    q = tuple(ctx.q(bi, k) for k in range(f))
    almost = bool(ctx.almost_sparse[bi])
    abnormal = {k: bool(ctx.abnormal[bi, k]) for k in range(1, f)}
    partitions, ab_blocks = {}, {}
    for k in range(1, f):
        lk = ctx.lambdas[k]
        b = p.block_len(lk)
        dprev = D[lk - 1]
        if not abnormal[k]:
            if almost:
                partitions[k] = ([B], [])
            elif interval_size(dprev) == blen0:
                partitions[k] = ([], [B])
            else:
                dbar = [(a, e - b) for a, e in dprev]
                partitions[k] = (_complement(dbar, B), dbar)
        for l in range(lk, ctx.lambdas[k + 1]):
            per = f ** (l - lam0)
            if almost:
                flags = np.zeros(per, dtype=bool)
            elif abnormal[k]:
                flags = np.ones(per, dtype=bool)
            else:
                sl = slice(bi * per, (bi + 1) * per)
                in_d = np.repeat(ctx.D[lk - 1][bi * f ** (lk - 1 - lam0):
                                               (bi + 1) * f ** (lk - 1 - lam0)], f ** (l - lk + 1))
                flags = in_d & ~ctx.dense[l][sl]
            ab_blocks[l] = mask_to_intervals(flags, B[0], p.block_len(l))
    cnt = int(counts(color, lam0)[bi])
    return DensityProfile(p, color, tuple(B), tuple(range(lam0, lam0 + span)), S, D,
                          tuple(ctx.lambdas), q, abnormal, almost, partitions, ab_blocks,
                          Fraction(cnt, blen0))


def _complement(ivs, B):
    out, pos = [], B[0]
    for a, b in ivs:
        if a > pos:
            out.append((pos, a))
        pos = max(pos, b)
    if pos < B[1]:
        out.append((pos, B[1]))
    return out


def color_count(c, ivs, color):
    """Elements of ``color`` inside an interval list."""
    colors = c.colors if isinstance(c, Coloring) else np.asarray(c)
    return sum(int((colors[a:b] == color).sum()) for a, b in ivs)


def abnormal_cap(p):
    """Most abnormal parts possible when ``B`` is not almost sparse."""
    return math.log2(1 / p.sigma) / -math.log2(p.theta)


# -- abnormal final blocks -------------------------------------------------


def _final_flag_table(p, counts, levels, contexts):
    """Abnormal flag for every block at ``levels[-1]``."""
    flags = np.zeros(p.f ** levels[-1], dtype=bool)
    for i in range(p.n - 1):
        key = (i, levels[i])
        ctx = contexts.get(key)
        if ctx is None:
            ctx = contexts[key] = _Context(p, counts, i + 1, levels[i], p.span(i + 1))
        k = (levels[i + 1] - levels[i]) // ctx.step
        flags |= ctx.final_flags(k, levels[-1])
    return flags


def abnormal_last_block_probability(p, c, mode="exact", samples=100_000, seed=0, workers=1,
                                    max_outcomes=MAX_OUTCOMES):
    """Probability that the final block of a run is abnormal in some stage context."""
    c = _as_coloring(c, p)
    _exact_guard(p, max_outcomes)
    counts = _Counts(p, c.colors)
    contexts = {}
    tables = {}
    for ks in itertools.product(range(1, p.f), repeat=p.n - 1):
        levels = levels_from_choices(p, ks)
        tables[ks] = (levels, _final_flag_table(p, counts, levels, contexts))
    if mode == "exact":
        total = Fraction(0)
        for levels, flags in tables.values():
            mask, den = _reach_mask(p, levels)
            total += Fraction(int((flags & mask).sum()), den)
        return Estimate(total / (p.f - 1) ** (p.n - 1), True)
    if mode in ("montecarlo", "mc"):
        def run(size, rng):
            batch = sample_batch(p, size, rng)
            hits = 0
            keys = [tuple(r) for r in batch.choices.tolist()]
            for ks in set(keys):
                levels, flags = tables[ks]
                sel = np.array([k == ks for k in keys])
                blk = batch.starts[sel, -1] // p.block_len(levels[-1])
                hits += int(flags[blk].sum())
            return hits

        hits = sum(_chunked(samples, seed, run, workers))
        return _mc_estimate(hits, samples, seed)
    raise ValueError(f"unknown mode {mode!r}")


# -- composed process ------------------------------------------------------


def _composition(u_total, n_total, p_inner):
    if n_total % p_inner.n:
        raise ValueError("n_total must be a multiple of the inner sequence length")
    m = n_total // p_inner.n
    blen = u_total // m
    if blen < p_inner.u:
        raise ValueError(f"blocks of length {blen} cannot hold the inner universe {p_inner.u}")
    return m, blen


def composed_process(u_total, n_total, p_inner, rng):
    """Concatenate independent inner runs, one per block of length ``u_total // m``."""
    m, blen = _composition(u_total, n_total, p_inner)
    out = []
    for j in range(m):
        t = sample_trace(p_inner, rng)
        out.extend(x + j * blen for x in t.xs)
    return np.array(out, dtype=np.int64)


def block_coloring(c, j, blen, p_inner):
    """Coloring of block ``j`` shifted back to the inner universe and palette."""
    colors = np.asarray(c.colors[j * blen:j * blen + p_inner.u]) - j * p_inner.n
    if colors.min() < 1 or colors.max() > p_inner.n:
        raise ValueError(f"block {j} uses colors outside its own range")
    return Coloring(colors, p_inner.n)


def composed_encoding_probability(u_total, n_total, p_inner, c, max_outcomes=MAX_OUTCOMES):
    """Exact probability over the joint outcome space of all blocks."""
    m, blen = _composition(u_total, n_total, p_inner)
    if c.u != u_total or c.n != n_total:
        raise ValueError("coloring does not match the composed universe")
    inner = list(enumerate_outcomes(p_inner, "trace", max_outcomes))
    if len(inner) ** m > max_outcomes:
        raise BudgetExceededError("joint outcome space exceeds the budget")
    total = Fraction(0)
    for combo in itertools.product(inner, repeat=m):
        xs = [x + j * blen for j, t in enumerate(combo) for x in t.xs]
        if encodes(c, xs):
            prob = Fraction(1)
            for t in combo:
                prob *= t.probability
            total += prob
    return total


def per_block_probabilities(u_total, n_total, p_inner, c):
    m, blen = _composition(u_total, n_total, p_inner)
    return [encoding_probability(p_inner, block_coloring(c, j, blen, p_inner)).value
            for j in range(m)]
