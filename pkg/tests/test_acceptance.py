"""Acceptance checks, one test per criterion.

Each test records a one-line verdict in RESULTS; conftest.py prints them at
the end of the session, and running this file directly prints them too.
Seeds are fixed up front so every run draws the same randomness.
"""

import math
import sys
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import norm

from idla.aggregate import Aggregate, build_A_n_M, build_A_n_M_clocks, build_truncated_infinite, build_waves
from idla.donut import (crossing_bound, donut_family, exterior_exit_experiment,
                        mc_crossing_experiment, outer_ring)
from idla.lattice import Ball, ConeSpec, Tile
from idla.render import color_fractions, projection_image, slice_image
from idla.stats import fluctuation, line_occupancy, stabilization_rate, tile_expectation_experiment
from idla.walk import (RngKey, empirical_distribution, exact_exit_distribution,
                       sample_exit_sites, total_variation)

RESULTS = {}


def record(num: int, ok: bool, detail: str) -> None:
    RESULTS[num] = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[num])


def two_proportion_p(k1: int, n1: int, k2: int, n2: int) -> float:
    """Two-sided p-value of the pooled two-proportion z-test."""
    pooled = (k1 + k2) / (n1 + n2)
    var = pooled * (1 - pooled) * (1 / n1 + 1 / n2)
    if var == 0:
        return 1.0  # both samples constant and equal
    z = (k1 / n1 - k2 / n2) / math.sqrt(var)
    return 2 * norm.sf(abs(z))


def occupancy_counts(aggs, sites):
    return np.array([sum(s in A for A in aggs) for s in sites])


# 1 -------------------------------------------------------------------------


def test_01_cardinality_identity():
    gen = np.random.default_rng(20240101)
    bad = []
    for t in range(50):
        n, M = int(gen.integers(0, 11)), int(gen.integers(0, 6))
        d = int(gen.choice([2, 3, 4]))
        seed = int(gen.integers(0, 2**63))
        A = build_A_n_M(n, M, d, RngKey(seed)).aggregate
        if A.count != n * (2 * M + 1) ** (d - 1) or len(A.sites()) != A.count:
            bad.append((n, M, d, seed))
    record(1, not bad, f"50 tuples, mismatches={len(bad)}")
    assert not bad


# 2 -------------------------------------------------------------------------


def _oracle_cases():
    L = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (0, 1), (0, 2)]
    cases = [
        ("d2 point", [(0, 0)], (0, 0)),
        ("d2 segment", [(x, 0) for x in range(-2, 3)], (0, 0)),
        ("d2 L-shape", L, (2, 1)),
        ("d2 ball r2", Ball((0, 0), 2).sites(), (0, 0)),
        ("d2 ball r5 off-centre", Ball((0, 0), 5).sites(), (2, -1)),
        ("d2 A_3[4]", list(build_A_n_M(3, 4, 2, RngKey(5)).aggregate), (0, 0)),
        ("d3 point", [(0, 0, 0)], (0, 0, 0)),
        ("d3 ball r1", Ball((0, 0, 0), 1).sites(), (0, 0, 0)),
        ("d3 ball r2", Ball((0, 0, 0), 2).sites(), (1, 0, -1)),
        ("d3 A_2[2]", list(build_A_n_M(2, 2, 3, RngKey(6)).aggregate), (0, 0, 0)),
    ]
    return cases


def test_02_oracle_equivalence():
    worst = 0.0
    details = []
    for i, (name, sites, start) in enumerate(_oracle_cases()):
        assert len(sites) <= 1000 and start in set(sites)
        exact = exact_exit_distribution(sites, start)
        A = Aggregate(len(start), sites)
        samples = sample_exit_sites(A, start, RngKey(202, (i,)), 100_000)
        tv = total_variation(empirical_distribution(samples), exact.probs)
        worst = max(worst, tv)
        details.append(f"{name}={tv:.4f}")
    ok = worst <= 0.02
    record(2, ok, f"max TV={worst:.4f} (<=0.02) over 10 aggregates")
    print("  " + ", ".join(details))
    assert ok


# 3 -------------------------------------------------------------------------


def test_03_donut_crossing_bound():
    fam = donut_family(200, 20, Fraction(1, 10))
    cone = ConeSpec(Fraction(1, 10))
    rep = mc_crossing_experiment(fam, cone, outer_ring(fam, 3), 10_000, RngKey(303), confidence=0.99)
    rows = [rep.rows[i] for i in range(1, 6)]
    ok = all(r.ci_high <= crossing_bound(r.i, 3) for r in rows)
    shown = ", ".join(f"i={r.i}: p={r.empirical_p:.4f} ub={r.ci_high:.4f} bound={r.bound:.4f}" for r in rows)
    record(3, ok, f"k={fam.k}, censored={rep.censored}; {shown}")
    assert ok


# 4 -------------------------------------------------------------------------


def test_04_exterior_face_exit():
    fam = donut_family(200, 20, Fraction(1, 10))
    gen = np.random.default_rng(404)
    starts = []
    for i in range(5):  # four start points on each of the slices m_0..m_4
        ms = fam.middling_slice(i, 3)
        for y in ms[gen.choice(len(ms), 4, replace=False)]:
            starts.append((i, y))
    worst = None
    fails = 0
    for s, (i, y) in enumerate(starts):
        res = exterior_exit_experiment(fam, i, [y], 10_000, RngKey(404, (s,)))[0]
        margin = res.p - (1 / 6 - 3 * res.sigma)
        fails += margin < 0
        if worst is None or margin < worst[0]:
            worst = (margin, res.p, res.sigma, res.start)
    ok = fails == 0
    record(4, ok, f"20 starts x 10^4 walks, min p={worst[1]:.4f} (sigma={worst[2]:.4f}) at {worst[3]}, "
                  f"failures={fails}")
    assert ok


# 5 -------------------------------------------------------------------------


def test_05_mean_line_occupancy():
    n, W, reps = 5, 10, 200
    levels = [W, 2 * W, 4 * W]  # truncation level doubles; same keys, so builds are nested
    occ = np.zeros((reps, len(levels)))
    for r in range(reps):
        for c, L in enumerate(levels):
            A = build_truncated_infinite(n, W, 1, L - W, 3, RngKey(505, (r,))).aggregate
            occ[r, c] = line_occupancy(A, (0, 0))
    means = occ.mean(axis=0)
    se = occ.std(axis=0, ddof=1) / math.sqrt(reps)
    dev = np.abs(means - n)
    close = all(dev[c] <= max(3 * se[c], 0.1 * n) for c in range(len(levels)))
    trend = all(dev[c + 1] <= dev[c] for c in range(len(levels) - 1))
    ok = close and trend
    shown = ", ".join(f"L={L}: mean={m:.3f} se={s:.3f} dev={d:.3f}" for L, m, s, d in zip(levels, means, se, dev))
    record(5, ok, f"{shown}; within tolerance={close}, deviation non-increasing={trend}")
    assert ok


# 6 -------------------------------------------------------------------------

PROBES_6 = [(0, 0, 0), (1, 0, 0), (-1, 0, 0), (1, 1, 1), (-1, 2, 0), (0, 2, -2), (1, -2, 2),
            (-1, -1, 1), (2, 0, 0), (-2, 1, 0)]


def test_06_abelian_property():
    reps, alpha = 2000, 0.01
    lv = [build_A_n_M(3, 2, 3, RngKey(606, (r,))).aggregate for r in range(reps)]
    ck = [build_A_n_M_clocks(3, 2, 3, RngKey(607, (r,))).aggregate for r in range(reps)]
    a, b = occupancy_counts(lv, PROBES_6), occupancy_counts(ck, PROBES_6)
    pvals = [two_proportion_p(int(x), reps, int(y), reps) for x, y in zip(a, b)]
    rejected = [s for s, p in zip(PROBES_6, pvals) if p < alpha / len(PROBES_6)]
    ok = not rejected
    record(6, ok, f"min p={min(pvals):.4f} vs Bonferroni {alpha / len(PROBES_6):.4f}; rejections={len(rejected)}")
    assert ok


# 7 -------------------------------------------------------------------------

PAIRS_7 = [((0, 0, 0), (0, 3, 0)), ((1, 0, 0), (1, 0, -4)), ((-1, 0, 0), (-1, 2, 2)),
           ((2, 0, 0), (2, -3, 1)), ((-2, 0, 0), (-2, 4, 4)), ((1, 1, 1), (1, -2, 3)),
           ((-1, -1, 0), (-1, 3, -2)), ((2, 1, -1), (2, -1, 1)), ((-2, 2, 2), (-2, -2, -2)),
           ((1, 0, 2), (1, 4, 0))]


def test_07_translation_invariance():
    reps, alpha, n, W, margin = 2000, 0.01, 3, 4, 8
    for z, tz in PAIRS_7:
        assert z[0] == tz[0] and max(map(abs, tz[1:])) <= W
    first = [build_truncated_infinite(n, W, 1, margin, 3, RngKey(707, (r,))).aggregate for r in range(reps)]
    second = [build_truncated_infinite(n, W, 1, margin, 3, RngKey(708, (r,))).aggregate for r in range(reps)]
    a = occupancy_counts(first, [z for z, _ in PAIRS_7])
    b = occupancy_counts(second, [tz for _, tz in PAIRS_7])
    pvals = [two_proportion_p(int(x), reps, int(y), reps) for x, y in zip(a, b)]
    rejected = sum(p < alpha / len(PAIRS_7) for p in pvals)
    ok = rejected == 0
    record(7, ok, f"min p={min(pvals):.4f} vs Bonferroni {alpha / len(PAIRS_7):.4f}; rejections={rejected}")
    assert ok


# 8 -------------------------------------------------------------------------


@pytest.mark.slow
def test_08_shape_fluctuations():
    reps = 20
    norm_vals = {}
    raw = {}
    for n in (20, 40, 80):
        vals, pairs = [], []
        for r in range(reps):
            # window Z_n (alpha = 1); margin n keeps the truncation edge away from the window
            A = build_truncated_infinite(n, n, 1, n, 3, RngKey(808, (n, r))).aggregate
            f = fluctuation(A, n, n)
            vals.append(max(f.delta_inner, f.delta_outer) / math.sqrt(math.log(n)))
            pairs.append((f.delta_inner, f.delta_outer))
        norm_vals[n] = vals
        raw[n] = pairs
    means = {n: float(np.mean(v)) for n, v in norm_vals.items()}
    c_star = max(max(v) for v in norm_vals.values())
    ok = means[80] <= 1.5 * means[20]
    shown = ", ".join(f"n={n}: mean={m:.3f}" for n, m in means.items())
    record(8, ok, f"{shown}; ratio 80/20={means[80] / means[20]:.3f} (<=1.5); fitted C*={c_star:.3f}")
    for n in raw:
        print(f"  n={n} (delta_I, delta_O) per replicate: {raw[n]}")
    assert ok


# 9 -------------------------------------------------------------------------


def test_09_stabilization_trend():
    reps = [build_waves(1, 2, 2, 5, 3, RngKey(909, (r,))) for r in range(100)]
    rows = stabilization_rate(reps, 2)
    p = [row.fraction for row in rows]
    half = [1.96 * math.sqrt(max(q * (1 - q), 0.25 / 100) / 100) for q in p]
    inversions = [(j, j + 1) for j in range(len(p) - 1) if p[j + 1] > p[j]]
    overlap = all(p[b] - half[b] <= p[a] + half[a] for a, b in inversions)
    ok = len(inversions) <= 1 and overlap and p[-1] == 0
    record(9, ok, f"P(E_M,j) for j=0..5: {p}; inversions={len(inversions)}")
    assert ok


# 10 ------------------------------------------------------------------------


def test_10_tile_expectation():
    tile = Tile.of((6, 0, 0), 2, 6)
    assert len(tile.sites()) == 25
    est = tile_expectation_experiment(tile, 5000, RngKey(1010))
    ok = abs(est.mean - 12.5) <= 3 * est.se
    record(10, ok, f"mean={est.mean:.3f} se={est.se:.3f} target=12.5 (window {est.window} sources)")
    assert ok


# 11 ------------------------------------------------------------------------


def test_11_performance_and_render(tmp_path):
    t0 = time.perf_counter()
    rep = build_A_n_M(20, 40, 3, RngKey(1111))
    elapsed = time.perf_counter() - t0
    A = rep.aggregate
    fr_proj = color_fractions(projection_image(A, 20, 40))
    fr_slice = color_fractions(slice_image(A, 20, 40))
    looks = all(f["red"] < f["green"] + f["blue"] and f["red"] < 0.1 for f in (fr_proj, fr_slice))
    ok = A.count == 131_220 and elapsed < 120 and looks
    record(11, ok, f"A_20[40]: {A.count} sites in {elapsed:.2f}s; projection red={fr_proj['red']:.3f}, "
                   f"slice red={fr_slice['red']:.3f}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
