"""Shared generators and brute-force references for the test-suite."""
from fractions import Fraction

import numpy as np

from mmphlab.coloring import Coloring


def patchy_coloring(p, rng, color=None):
    """Random coloring with block-aligned patches, so dense and sparse blocks both occur.

    Uniform random colors leave every block near density ``1/n``; patches at
    random levels push some blocks towards one color and others away from it.
    """
    colors = rng.integers(1, p.n + 1, size=p.u)
    for _ in range(int(rng.integers(1, 3 * p.f + 2))):
        level = int(rng.integers(0, p.L + 1))
        blen = p.block_len(level)
        start = int(rng.integers(0, p.f ** level)) * blen
        c = color if color is not None and rng.random() < 0.6 else int(rng.integers(1, p.n + 1))
        rho = rng.random()
        hit = rng.random(blen) < rho
        colors[start:start + blen][hit] = c
    return Coloring(colors, p.n)


def brute_density(p, colors, B, H, color):
    """Recompute S, D, q, abnormal flags and partitions straight from the definitions."""
    b0, b1 = B
    h0, h1 = H
    f = p.f
    inside = np.ones(b1 - b0, dtype=bool)    # D_{h0 - 1} = B
    is_c = colors[b0:b1] == color
    D = {h0 - 1: inside.copy()}
    for l in range(h0, h1):
        blen = p.block_len(l)
        cnt = is_c.reshape(-1, blen).sum(axis=1)
        dense = np.array([Fraction(int(c), blen) >= p.tau for c in cnt])
        D[l] = D[l - 1] & np.repeat(dense, blen)
    step = (h1 - h0) // f
    lambdas = [h0 + k * step for k in range(f + 1)]
    size = {l: int(m.sum()) for l, m in D.items()}
    q = []
    for k in range(f):
        den = size[lambdas[k] - 1]
        q.append(Fraction(size[lambdas[k + 1] - 1], den) if den else Fraction(1))
    frac = Fraction(int(is_c.sum()), b1 - b0)
    almost = frac <= p.tau + Fraction(p.sigma)
    theta = Fraction(p.theta)
    abnormal = {k: (q[k] < theta) and not almost for k in range(1, f)}
    parts = {}
    for k in range(1, f):
        if abnormal[k]:
            continue
        dm = D[lambdas[k] - 1]
        if almost:
            dbar = np.zeros_like(dm)
        elif dm.all():
            dbar = dm.copy()
        else:
            dbar = dm.copy()
            blen = p.block_len(lambdas[k])
            ends = np.flatnonzero(dm & ~np.append(dm[1:], False))
            for e in ends:
                dbar[e + 1 - blen:e + 1] = False
        parts[k] = dbar
    return D, q, abnormal, almost, parts


def mask_of(ivs, B):
    m = np.zeros(B[1] - B[0], dtype=bool)
    for a, b in ivs:
        m[a - B[0]:b - B[0]] = True
    return m


def stage_contexts(p, rng, per_stage=2):
    """Some ``(stage, B, H)`` triples: the whole universe plus random deeper blocks."""
    out = [(1, (0, p.u), (0, p.L))]
    for stage in range(2, p.n):
        span = p.span(stage)
        for _ in range(per_stage):
            h0 = int(rng.integers(1, p.L // span)) * span
            blen = p.block_len(h0)
            b0 = int(rng.integers(0, p.f ** h0)) * blen
            out.append((stage, (b0, b0 + blen), (h0, h0 + span)))
    return out
