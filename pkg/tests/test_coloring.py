import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmphlab.coloring import (EXAMPLE_COLORING, Coloring, bound_report, bound_sweep,
                              color_class_sizes, encodes, is_all_encoding, max_encodable,
                              min_family_size)
from mmphlab.errors import InstanceTooLargeError

EXAMPLE = Coloring(EXAMPLE_COLORING, 5)


def test_example_coloring():
    for seq in ((3, 6, 7, 10, 14), (1, 2, 4, 9, 12), (1, 6, 11, 15, 16)):
        assert encodes(EXAMPLE, seq)
    assert not encodes(EXAMPLE, (0, 1, 4, 9, 12))
    assert color_class_sizes(EXAMPLE) == (4, 3, 4, 3, 3)
    prod, cap = max_encodable(EXAMPLE)
    assert prod == 432 and cap == Fraction(17, 5) ** 5


def test_encodes_rejects_bad_sequences():
    with pytest.raises(ValueError):
        encodes(EXAMPLE, (1, 2, 3))
    with pytest.raises(ValueError):
        encodes(EXAMPLE, (1, 1, 2, 3, 4))
    with pytest.raises(ValueError):
        encodes(EXAMPLE, (1, 2, 3, 4, 17))


def test_coloring_validation():
    with pytest.raises(ValueError):
        Coloring([1, 2, 3], 2)
    with pytest.raises(ValueError):
        Coloring([0, 1], 2)
    c = Coloring.from_segments([(0, 3, 1), (3, 5, 2)], 5, 2)
    assert c.colors.tolist() == [1, 1, 1, 2, 2]
    with pytest.raises(ValueError):
        Coloring.from_segments([(0, 3, 1)], 5, 2)
    with pytest.raises(InstanceTooLargeError):
        Coloring.from_segments([(0, 1 << 30, 1)], 1 << 30, 1)


def brute_min_family(u, n):
    seqs = list(itertools.combinations(range(u), n))
    cols = list(itertools.product(range(1, n + 1), repeat=u))
    cover = [frozenset(i for i, s in enumerate(seqs)
                       if all(c[x] == j for j, x in enumerate(s, 1))) for c in cols]
    for k in range(1, len(seqs) + 1):
        for combo in itertools.combinations(range(len(cols)), k):
            if len(frozenset().union(*(cover[j] for j in combo))) == len(seqs):
                return k


@pytest.mark.parametrize("u,n", [(2, 1), (3, 1), (3, 2), (4, 2), (5, 2), (4, 3), (5, 3)])
def test_min_family_matches_brute_force(u, n):
    r = min_family_size(u, n)
    assert r.size == brute_min_family(u, n)
    assert is_all_encoding(r.family, u, n)


def test_min_family_small_values():
    assert min_family_size(3, 2).size == 2
    r = min_family_size(4, 2)
    assert r.size == 2 and is_all_encoding(r.family, 4, 2)
    assert not is_all_encoding(r.family[:1], 4, 2)
    assert r.weak_bound == Fraction(3, 2)


def test_min_family_budget():
    with pytest.raises(InstanceTooLargeError):
        min_family_size(30, 10)
    with pytest.raises(InstanceTooLargeError):
        min_family_size(9, 4, max_nodes=10)


def test_bound_report_small():
    r = bound_report(4, 2)
    assert abs(r.entropy_lower - 1.678071905112638) < 1e-9
    assert abs(r.log_binom - math.log2(6)) < 1e-9
    assert abs(r.entropy_upper - 4.0) < 1e-9
    assert r.weak_family_bound == Fraction(3, 2)
    assert r.binom == 6 and not r.approximate
    d = r.as_dict()
    assert d["weak_family_bound"] == 1.5 and d["weak_family_bound_exact"] == "3/2"


def test_bound_report_large_and_symbolic():
    r = bound_report(10 ** 9, 1000)
    assert r.approximate and r.entropy_lower <= r.log_binom <= r.entropy_upper
    s = bound_report(n=8, log2_u=2 ** 20)
    assert s.approximate and s.u is None and s.alpha is None
    assert s.entropy_lower <= s.log_binom <= s.entropy_upper
    # log2_u small enough to fall back to exact arithmetic
    assert bound_report(n=2, log2_u=2).binom == 6
    with pytest.raises(ValueError):
        bound_report(4, 4)


def test_sweep_matches_direct():
    direct = [bound_report(u, n) for u in range(2, 40) for n in range(1, u)]
    swept = list(bound_sweep(39))
    assert [(r.u, r.n, r.binom) for r in direct] == [(r.u, r.n, r.binom) for r in swept]
    assert all(r.binom == math.comb(r.u, r.n) for r in swept)


@given(st.integers(2, 2000).flatmap(lambda u: st.tuples(st.just(u), st.integers(1, u - 1))))
def test_sandwich_property(case):
    u, n = case
    r = bound_report(u, n)
    assert r.entropy_lower <= r.log_binom <= r.entropy_upper


@given(st.lists(st.integers(1, 4), min_size=4, max_size=12))
def test_encodes_matches_definition(colors):
    n = max(colors)
    c = Coloring(colors, n)
    for seq in itertools.islice(itertools.combinations(range(len(colors)), n), 200):
        assert encodes(c, seq) == all(colors[x] == i for i, x in enumerate(seq, 1))
    prod, _ = max_encodable(c)
    count = sum(encodes(c, s) for s in itertools.combinations(range(len(colors)), n))
    assert count <= prod
