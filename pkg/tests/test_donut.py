import io
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idla import _kernels as K
from idla.donut import (EmptyFamily, InvalidAngle, K_bound, classify_crossings, crossing_bound,
                        donut_family, exterior_exit_experiment, mc_crossing_experiment,
                        outer_ring, write_crossing_csv)
from idla.lattice import ConeSpec
from idla.walk import MissingPath, ParticleTrace, RngKey


def test_family_quarter_angle():
    fam = donut_family(64, 4, "1/4")
    assert [int(r) for r in fam.radii] == [64, 32, 16, 8, 4]
    assert fam.widths()[:4] == [32, 16, 8, 4]
    assert fam.k == 3 and fam.n_fitting == 4 and fam.crossable == 3
    assert fam.lower_bound() == pytest.approx(2.0, rel=1e-12)
    assert fam.lower_bound() <= fam.k


def test_family_used_in_the_crossing_experiment():
    fam = donut_family(200, 20, Fraction(1, 10))
    assert fam.k == 9
    assert fam.radii[1] == 160 and fam.radii[2] == 128


def test_family_errors():
    with pytest.raises(EmptyFamily):
        donut_family(10, 10, "1/4")
    with pytest.raises(EmptyFamily):
        donut_family(10, 9.5, "1/4")  # first donut (width 5) does not fit
    with pytest.raises(InvalidAngle):
        donut_family(10, 1, "1/2")
    with pytest.raises(InvalidAngle):
        donut_family(10, 1, 0)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 9), st.integers(2, 40), st.integers(10, 5000), st.integers(1, 9))
def test_k_is_maximal(p, q, l, m):
    eps = Fraction(p, 2 * p + q)  # always < 1/2
    M = Fraction(m * l, 10)
    if 2 * eps * l > l - M:
        with pytest.raises(EmptyFamily):
            donut_family(l, M, eps)
        return
    fam = donut_family(l, M, eps)
    s = lambda k: sum(2 * eps * fam.l0 * (1 - 2 * eps) ** i for i in range(k + 1))
    assert s(fam.k) <= fam.l0 - M < s(fam.k + 1)
    assert all(a > b for a, b in zip(fam.radii, fam.radii[1:]))
    if eps <= Fraction(1, 4):
        assert fam.k >= math.floor(fam.lower_bound() - 1e-9)


def test_crossing_bound_values():
    assert crossing_bound(0, 3) == 1.0
    assert crossing_bound(2, 3) == pytest.approx((35 / 36) ** 2, rel=1e-15)
    assert crossing_bound(2, 3) == pytest.approx(0.9452160494, abs=1e-10)
    # (15/16)^10 exactly; written out it is 0.52446047...
    assert crossing_bound(10, 2) == pytest.approx(float(Fraction(15, 16) ** 10), rel=1e-15)
    assert crossing_bound(10, 2) == pytest.approx(0.5244604750, abs=1e-10)


def test_K_bound():
    assert K_bound("1/4") == pytest.approx(1 / (2 * math.log(2)))


def _line(x, rho_from, rho_to):
    return np.array([(x, r, 0) for r in range(rho_from, rho_to - 1, -1)], dtype=np.int64)


def test_straight_inward_path_crosses_every_crossable_donut():
    fam = donut_family(64, 4, "1/4")
    cone = ConeSpec("1/4")
    path = _line(0, 64, 4)
    assert classify_crossings(path, fam, cone) == fam.crossable == 3
    tr = ParticleTrace((0, 64, 0), (0, 4, 0), len(path) - 1, path=path)
    assert classify_crossings(tr, fam, cone) == 3


def test_path_leaving_the_cone_early():
    fam = donut_family(64, 4, "1/4")
    cone = ConeSpec("1/4")
    # climbs out of the cone at radius 64 before reaching (1 - eps) l0 = 48
    up = np.array([(x, 64, 0) for x in range(0, 20)], dtype=np.int64)
    assert classify_crossings(up, fam, cone) == 0
    # leaves at radius 50, then comes back inward inside the cone
    p = np.concatenate([_line(0, 64, 50), [(x, 50, 0) for x in range(1, 14)],
                        [(x, 50, 0) for x in range(12, -1, -1)], _line(0, 49, 4)])
    assert classify_crossings(p, fam, cone) == 0


def test_path_starting_inside_the_donut_is_not_armed():
    fam = donut_family(64, 4, "1/4")
    cone = ConeSpec("1/4")
    # starts at radius 40, strictly inside D^0: it never entered D^0 from the
    # outer ring, and crossings only count in order from D^0
    assert classify_crossings(_line(0, 40, 4), fam, cone) == 0


def test_leaving_a_donut_sideways_breaks_the_crossing():
    fam = donut_family(64, 4, "1/4")
    wide = ConeSpec("9/20")  # 17 <= 9/20 * 40, so the detour stays inside this cone
    # enter D^0, climb to |x| = 17 > 16 (out of D^0), come back and continue inward
    p = np.concatenate([_line(0, 64, 40), [(x, 40, 0) for x in range(1, 18)],
                        [(x, 40, 0) for x in range(16, -1, -1)], _line(0, 39, 4)])
    assert classify_crossings(p, fam, wide) == 0
    assert classify_crossings(np.concatenate([_line(0, 64, 40), _line(0, 39, 4)]), fam, wide) == 3


def test_missing_path():
    fam = donut_family(64, 4, "1/4")
    with pytest.raises(MissingPath):
        classify_crossings(ParticleTrace((0, 64, 0), (0, 64, 0), 0), fam, ConeSpec("1/4"))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**40), st.integers(1, 4000))
def test_prefix_never_has_more_crossings(seed, cut):
    fam = donut_family(30, 3, "1/4")
    cone = ConeSpec("1/4")
    path = K.replay(np.array([0, 30, 0], dtype=np.int64), RngKey(seed).value, 4000)
    full = classify_crossings(path, fam, cone)
    assert classify_crossings(path[:cut], fam, cone) <= full


def test_online_and_recorded_classification_agree():
    fam = donut_family(30, 3, "1/4")
    cone = ConeSpec("1/4")
    starts = outer_ring(fam, 3)[:50]
    rf, half = fam.arrays()
    out = np.zeros(len(starts), dtype=np.int64)
    cen = np.zeros(len(starts), dtype=np.bool_)
    base = RngKey(5).value
    K.crossing_walks(starts, base, 1, 4, rf, half, fam.crossable, 10**9, 10**7, out, cen)
    for w, s in enumerate(starts):
        key = np.uint64(K.fold(base, np.uint64(w)))
        path = K.replay(s, key, 20000)
        assert classify_crossings(path, fam, cone) == out[w]


def test_crossing_experiment_report():
    fam = donut_family(60, 6, "1/5")
    cone = ConeSpec("1/5")
    rep = mc_crossing_experiment(fam, cone, outer_ring(fam, 3), 3000, RngKey(1))
    assert len(rep.rows) == fam.k + 1
    assert rep.rows[0].empirical_p == 1.0
    ps = [r.empirical_p for r in rep.rows]
    assert all(a >= b for a, b in zip(ps, ps[1:]))
    for r in rep.rows:
        assert r.ci_low <= r.empirical_p <= r.ci_high
        assert r.bound == crossing_bound(r.i, 3)
    assert mc_crossing_experiment(fam, cone, outer_ring(fam, 3), 0, RngKey(1)).rows == []
    buf = io.StringIO()
    write_crossing_csv(buf, rep)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "i,empirical_p,ci_low,ci_high,bound"
    assert lines[1].startswith("0,1.000000,")
    with pytest.raises(ValueError):
        mc_crossing_experiment(fam, cone, [(0, 5, 0)], 10, RngKey(1))


def test_middling_slice_and_exterior():
    fam = donut_family(100, 20, "1/10")
    ms = fam.middling_slice(0, 3)
    assert len(ms) == 21 * 8 * 90
    assert all(fam.in_middling_slice(z, 0) for z in ms[::97].tolist())
    assert fam.in_exterior((10, 90, 0), 0) and fam.in_exterior((-25, 81, 3), 0)
    assert not fam.in_exterior((9, 90, 0), 0) and not fam.in_exterior((15, 80, 0), 0)
    res = exterior_exit_experiment(fam, 0, ms[[0, 5000]], 2000, RngKey(3))
    assert all(r.p >= 1 / 6 - 4 * r.sigma for r in res)
    with pytest.raises(ValueError):
        exterior_exit_experiment(fam, 0, [(0, 50, 0)], 10, RngKey(3))
