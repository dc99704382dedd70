from collections import Counter
from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import brute_density, mask_of, patchy_coloring, stage_contexts
from mmphlab import process as proc
from mmphlab.coloring import Coloring, encodes
from mmphlab.errors import BudgetExceededError

TUNED = dict(tau=Fraction(1, 2), sigma=1 / 16)


def test_make_params_examples():
    p = proc.make_params(2, 4, 1)
    assert (p.L, p.u) == (4, 256)
    p = proc.make_params(2, 2, 1)
    assert (p.L, p.u) == (2, 4)
    p = proc.make_params(3, 3, 1)
    assert (p.L, p.u) == (9, 19683)
    assert p.tau == Fraction(2, 3)
    assert math.isclose(p.sigma, 2 ** (-3 / 8)) and math.isclose(p.theta, 1 - 3 ** -0.25)
    assert proc.make_params(2, 3).lastlen == 3
    for level in range(p.L + 1):
        assert p.u % p.f ** level == 0 and p.block_len(level) == p.u // p.f ** level


def test_make_params_errors():
    with pytest.raises(ValueError):
        proc.make_params(1, 4)
    with pytest.raises(ValueError):
        proc.make_params(2, 1)
    with pytest.raises(ValueError):
        proc.make_params(2, 4, 0)
    with pytest.raises(BudgetExceededError):
        proc.make_params(3, 4, 1)
    p = proc.make_params(3, 4, 1, mc_only=True)
    assert p.u == 4 ** 16
    with pytest.raises(BudgetExceededError):
        proc.make_params(4, 4, 1, mc_only=True)


def test_sample_levels():
    rng = proc.make_rng(1)
    p = proc.make_params(2, 4, 1)
    seen = Counter(proc.sample_levels(p, rng)[1][1] for _ in range(3000))
    assert set(seen) == {1, 2, 3}
    assert all(abs(v / 3000 - 1 / 3) < 0.04 for v in seen.values())
    p = proc.make_params(3, 3, 1)
    for _ in range(200):
        ivs, levels = proc.sample_levels(p, rng)
        assert levels[1] in (3, 6)
        assert levels[2] in ((4, 5) if levels[1] == 3 else (7, 8))
        assert ivs[0] == (0, 9)
    p = proc.make_params(2, 2, 1)
    assert {proc.sample_levels(p, rng)[1] for _ in range(20)} == {(0, 1)}


def test_sample_elements_ranges():
    p = proc.make_params(2, 4, 1)
    rng = proc.make_rng(2)
    xs = []
    for _ in range(2000):
        t = proc.sample_elements(p, (0, 1), rng)
        x1, x2 = t.xs
        assert 0 <= x1 < 192
        k = x1 // 64 + 1
        assert t.blocks[1] == (64 * k, 64 * k + 64)
        assert t.blocks[1][0] <= x2 < t.blocks[1][1] and x2 > x1
        assert t.probability == Fraction(1, 3 * 192 * 64)
        xs.append(x1)
    assert max(xs) >= 180 and min(xs) <= 10


def test_enumerate_small():
    p = proc.make_params(2, 2, 1)
    outs = list(proc.enumerate_outcomes(p))
    assert len(outs) == 4
    assert all(t.probability == Fraction(1, 4) for t in outs)
    assert sorted(t.xs for t in outs) == [(0, 2), (0, 3), (1, 2), (1, 3)]


def test_enumerate_counts_and_sums():
    p = proc.make_params(2, 4, 1)
    outs = list(proc.enumerate_outcomes(p))
    assert len(outs) == proc.outcome_count(p) == 17136
    assert sum(t.probability for t in outs) == 1
    first = [t for t in outs if t.levels == (0, 1)]
    assert len(first) == 192 * 64
    assert all(t.probability == Fraction(1, 3 * 192 * 64) for t in first)
    p = proc.make_params(3, 3, 1)
    assert sum(t.probability for t in proc.enumerate_outcomes(p, "block")) == 1
    with pytest.raises(BudgetExceededError):
        proc.enumerate_outcomes(p, "trace")


def test_enumeration_is_deterministic():
    p = proc.make_params(3, 2, 1)
    a = [t.xs for t in proc.enumerate_outcomes(p)]
    assert a == [t.xs for t in proc.enumerate_outcomes(p)]


def test_encoding_probability_examples():
    p = proc.make_params(2, 2, 1)
    assert proc.encoding_probability(p, [1, 1, 2, 2]).value == 1
    assert proc.encoding_probability(p, [2, 2, 1, 1]).value == 0
    p = proc.make_params(2, 4, 1)
    assert proc.encoding_probability(p, Coloring(np.ones(256, dtype=int), 2)).value == 0
    with pytest.raises(ValueError):
        proc.encoding_probability(p, [1, 2])
    with pytest.raises(ValueError):
        proc.encoding_probability(p, [1] * 256, mode="guess")


@pytest.mark.parametrize("n,f", [(2, 2), (2, 3), (2, 4), (3, 2)])
def test_exact_matches_trace_oracle(n, f):
    p = proc.make_params(n, f, 1)
    rng = np.random.default_rng(n * 10 + f)
    for _ in range(5):
        c = patchy_coloring(p, rng)
        assert proc.encoding_probability(p, c).value == proc.encoding_probability_by_traces(p, c)


def test_montecarlo_reproducible_across_workers():
    p = proc.make_params(3, 3, 1)
    c = patchy_coloring(p, np.random.default_rng(0))
    a = proc.encoding_probability(p, c, "mc", samples=150_000, seed=9, workers=1)
    b = proc.encoding_probability(p, c, "mc", samples=150_000, seed=9, workers=4)
    assert a == b
    assert a.ci99 == pytest.approx(proc.Z99 * a.stderr)
    exact = proc.encoding_probability(p, c).value
    assert abs(a.value - exact) <= 4 * math.sqrt(exact * (1 - exact) / a.samples) + 1e-12


def test_exact_budget():
    p = proc.make_params(3, 3, 1)
    c = Coloring(np.ones(p.u, dtype=int), 3)
    with pytest.raises(BudgetExceededError):
        proc.encoding_probability(p, c, max_outcomes=2)


# -- reachability ----------------------------------------------------------


def test_census_examples():
    p = proc.make_params(2, 4, 1)
    c1 = proc.reachability_census(p, 1, 0)
    assert c1.valid and c1.reachable == 1 and c1.block_probability == 1
    for level in (1, 2, 3):
        c = proc.reachability_census(p, 2, level)
        # only the leftmost block is out of reach
        assert c.uniform and c.probabilities[0] == 0
        assert c.reachable == 4 ** level - 1
        assert c.unreachable_fraction == Fraction(1, 4 ** level)
        assert c.unreachable_fraction <= Fraction(p.n - 1, p.f)
    assert not proc.reachability_census(p, 2, 0).valid


@pytest.mark.parametrize("n,f", [(2, 2), (2, 4), (3, 3)])
def test_census_matches_enumeration(n, f):
    p = proc.make_params(n, f, 1)
    for stage in range(1, n + 1):
        got = proc.reach_by_enumeration(p, stage)
        by_level = {}
        for (level, start), pr in got.items():
            by_level.setdefault(level, {})[start // p.block_len(level)] = pr
        for level, probs in by_level.items():
            c = proc.reachability_census(p, stage, level)
            lp = c.level_probability
            assert all(pr == lp * c.block_probability for pr in probs.values())
            assert len(probs) == c.reachable
            assert c.uniform
            assert c.unreachable_fraction <= Fraction(n - 1, f)


def test_census_budget():
    p = proc.make_params(3, 3, 1)
    with pytest.raises(BudgetExceededError):
        proc.reachability_census(p, 3, 8, max_blocks=100)


# -- density ---------------------------------------------------------------


def example_coloring(p):
    c = np.full(256, 2)
    c[64:] = 1
    return Coloring(c, 2)


def test_density_example_tuned():
    p = proc.make_params(2, 4, 1, **TUNED)
    prof = proc.density_profile(p, example_coloring(p), (0, 256), (0, 4), 1)
    assert prof.S[1] == [(0, 64)] and prof.D[1] == [(64, 256)]
    assert prof.q == (Fraction(1), Fraction(3, 4), Fraction(1), Fraction(1))
    assert not prof.almost_sparse
    assert prof.partitions[2] == ([(0, 64), (240, 256)], [(64, 240)])


def test_density_example_default_tau():
    # at tau = 1 the whole block is already sparse at its own level
    p = proc.make_params(2, 4, 1)
    prof = proc.density_profile(p, example_coloring(p), (0, 256), (0, 4), 1)
    assert prof.S[0] == [(0, 256)] and prof.D[0] == []
    assert prof.almost_sparse
    assert all(v == ([(0, 256)], []) for v in prof.partitions.values())


def test_density_degenerate_cases():
    p = proc.make_params(2, 4, 1)
    ones = Coloring(np.ones(256, dtype=int), 2)
    # with n = 2 defaults tau + sigma > 1, so even this block counts as almost sparse
    assert proc.density_profile(p, ones, (0, 256), (0, 4), 1).almost_sparse
    p = proc.make_params(2, 4, 1, **TUNED)
    prof = proc.density_profile(p, ones, (0, 256), (0, 4), 1)
    assert all(s == [] for s in prof.S.values())
    assert all(d == [(0, 256)] for d in prof.D.values())
    assert set(prof.q) == {1} and not any(prof.abnormal.values())
    assert all(v == ([], [(0, 256)]) for v in prof.partitions.values())
    twos = Coloring(np.full(256, 2), 2)
    prof = proc.density_profile(p, twos, (0, 256), (0, 4), 1)
    assert prof.almost_sparse
    assert all(v == ([(0, 256)], []) for v in prof.partitions.values())


def test_density_alignment_errors():
    p = proc.make_params(3, 3, 1)
    c = Coloring(np.ones(p.u, dtype=int), 3)
    with pytest.raises(ValueError):
        proc.density_profile(p, c, (0, 100), (0, 9), 1)
    with pytest.raises(ValueError):
        proc.density_profile(p, c, (0, p.u), (1, 4), 1)
    with pytest.raises(ValueError):
        proc.density_profile(p, c, (0, 729), (3, 6), 9)


@pytest.mark.parametrize("n,f,kw", [(2, 4, {}), (3, 3, {}), (2, 4, TUNED), (3, 3, TUNED),
                                    (2, 4, dict(TUNED, theta=0.9)),
                                    (3, 3, dict(tau=Fraction(1, 3), sigma=1 / 32, theta=0.95))])
def test_density_matches_brute_force(n, f, kw):
    p = proc.make_params(n, f, 1, **kw)
    rng = np.random.default_rng(n + f)
    for _ in range(40):
        for stage, B, H in stage_contexts(p, rng):
            c = patchy_coloring(p, rng, stage)
            prof = proc.density_profile(p, c, B, H, stage)
            D, q, abnormal, almost, parts = brute_density(p, c.colors, B, H, stage)
            assert prof.q == tuple(q)
            assert prof.abnormal == abnormal and prof.almost_sparse == almost
            for l, ivs in prof.D.items():
                assert np.array_equal(mask_of(ivs, B), D[l])
                assert np.array_equal(mask_of(prof.S[l], B), ~D[l])
            assert set(prof.partitions) == set(parts)
            for k, (sbar, dbar) in prof.partitions.items():
                assert np.array_equal(mask_of(dbar, B), parts[k])
                assert np.array_equal(mask_of(sbar, B), ~parts[k])


def tuned_abnormal_coloring():
    c = np.full(256, 2)
    c[:64] = 1
    for blk in (1, 2, 3):
        c[64 * blk:64 * blk + 31] = 1
    return Coloring(c, 2)


def test_abnormal_example():
    p = proc.make_params(2, 4, 1, **TUNED)
    c = tuned_abnormal_coloring()
    prof = proc.density_profile(p, c, (0, 256), (0, 4), 1)
    assert not prof.almost_sparse
    assert prof.q == (1, Fraction(1, 4), 1, 1)
    assert prof.abnormal == {1: True, 2: False, 3: False}
    assert 1 not in prof.partitions
    assert prof.abnormal_blocks[1] == [(0, 256)]
    got = proc.abnormal_last_block_probability(p, c)
    assert got.exact and got.value == Fraction(1, 3)


def test_abnormal_probability_trivial_and_structure():
    p = proc.make_params(2, 4, 1)
    ones = Coloring(np.ones(256, dtype=int), 2)
    assert proc.abnormal_last_block_probability(p, ones).value == 0
    p = proc.make_params(2, 4, 1, **dict(TUNED, theta=0.9))
    rng = np.random.default_rng(8)
    denom = (p.f - 1) ** (p.n - 1) * math.prod((p.f ** d - 1) for d in range(1, p.f))
    for _ in range(20):
        v = proc.abnormal_last_block_probability(p, patchy_coloring(p, rng, 1)).value
        assert 0 <= v <= 1
        assert denom % v.denominator == 0


def test_abnormal_exact_vs_mc():
    p = proc.make_params(2, 4, 1, **dict(TUNED, theta=0.9))
    rng = np.random.default_rng(3)
    ok = 0
    for i in range(10):
        c = patchy_coloring(p, rng, 1)
        exact = proc.abnormal_last_block_probability(p, c).value
        mc = proc.abnormal_last_block_probability(p, c, "mc", samples=100_000, seed=i)
        se = math.sqrt(float(exact) * (1 - float(exact)) / mc.samples)
        ok += abs(mc.value - float(exact)) <= 3 * se + 1e-12
    assert ok >= 9


# -- composition ------------------------------------------------------------


def test_composed_process():
    inner = proc.make_params(2, 2, 1)
    rng = proc.make_rng(4)
    for _ in range(100):
        xs = proc.composed_process(8, 4, inner, rng)
        assert len(xs) == 4 and (np.diff(xs) > 0).all()
        assert (xs[:2] < 4).all() and (xs[2:] >= 4).all()
    with pytest.raises(ValueError):
        proc.composed_process(8, 3, inner, rng)
    with pytest.raises(ValueError):
        proc.composed_process(6, 4, inner, rng)


def test_product_law():
    inner = proc.make_params(2, 2, 1)
    rng = np.random.default_rng(6)
    for _ in range(20):
        blocks = [rng.integers(1, 3, size=4) + 2 * j for j in range(2)]
        c = Coloring(np.concatenate(blocks), 4)
        joint = proc.composed_encoding_probability(8, 4, inner, c)
        per = proc.per_block_probabilities(8, 4, inner, c)
        assert joint == per[0] * per[1]


# -- sampler invariants -----------------------------------------------------


@given(st.sampled_from([(2, 2, 1), (2, 4, 1), (3, 3, 1), (3, 2, 3), (2, 5, 2)]),
       st.integers(0, 2 ** 32))
def test_trace_invariants(params, seed):
    p = proc.make_params(*params)
    t = proc.sample_trace(p, proc.make_rng(seed))
    levels = t.levels
    assert levels[0] == 0 and all(a < b for a, b in zip(levels, levels[1:]))
    assert t.intervals[0] == (0, p.L)
    for (a, b), (c, d) in zip(t.intervals, t.intervals[1:]):
        assert a <= c < d <= b and (d - c) * p.f == b - a
    assert t.blocks[0] == (0, p.u)
    for i, (b0, b1) in enumerate(t.blocks):
        assert b1 - b0 == p.block_len(levels[i]) and b0 % (b1 - b0) == 0
        assert b0 <= t.xs[i] < b1
    for i in range(p.n - 1):
        assert t.blocks[i][0] <= t.blocks[i + 1][0] < t.blocks[i + 1][1] <= t.blocks[i][1]
        assert t.blocks[i + 1][0] > t.xs[i]
        assert t.blocks[i + 1][0] - t.xs[i] <= p.block_len(levels[i + 1])
    assert all(a < b for a, b in zip(t.xs, t.xs[1:]))


def test_batch_sampler_matches_scalar_distribution():
    p = proc.make_params(2, 2, 1)
    b = proc.sample_batch(p, 40_000, proc.make_rng(0))
    counts = Counter(map(tuple, b.xs.tolist()))
    assert set(counts) == {(0, 2), (0, 3), (1, 2), (1, 3)}
    assert all(abs(v / 40_000 - 0.25) < 0.02 for v in counts.values())
    c = Coloring([1, 1, 2, 2], 2)
    assert all(encodes(c, xs) for xs in counts)
