"""Donut families wrapping the cone, crossing classification, and the
Monte Carlo experiments that go with them.

Donut D^i is the box [-eps*l_i, eps*l_i] x (B(l_i) minus B(l_{i+1})) in
(z_1, p_H z) coordinates, with l_{i+1} = (1 - 2 eps) l_i.  Radii are kept
as exact fractions; lattice tests floor them once.

Two counts are reported.  ``k`` is the greatest integer with
sum_{i=0..k} 2 eps l_i <= l0 - M, so donuts D^0..D^k all fit above level
M (``n_fitting = k + 1``).  Crossing classification follows the picture
where D^0..D^{k-1} are the crossable donuts and D^k is the last ring
before level M, so a path crosses at most ``k`` donuts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from . import _kernels as K
from .lattice import ConeSpec, Site, as_fraction, as_site, lateral_norm, level_sources_array
from .walk import (DEFAULT_MAX_STEPS, MissingPath, ParticleTrace, StepBudgetExceeded,
                   _key_value)


class InvalidAngle(ValueError):
    pass


class EmptyFamily(ValueError):
    pass


def K_bound(epsilon) -> float:
    """K(eps) = -1 / (2 log(1 - 2 eps)), natural log."""
    eps = as_fraction(epsilon)
    return -1.0 / (2.0 * math.log(1 - 2 * float(eps)))


@dataclass(frozen=True)
class DonutFamily:
    epsilon: Fraction
    l0: Fraction
    M: Fraction
    radii: tuple  # l_0 .. l_{k+1}, exact
    k: int

    @property
    def n_fitting(self) -> int:
        return self.k + 1

    @property
    def crossable(self) -> int:
        return self.k

    def lower_bound(self) -> float:
        return K_bound(self.epsilon) * math.log(self.l0 / self.M)

    def widths(self) -> list:
        return [self.radii[i] - self.radii[i + 1] for i in range(len(self.radii) - 1)]

    def radius_floor(self, i: int) -> int:
        return math.floor(self.radii[i])

    def half_width(self, i: int) -> int:
        return math.floor(self.epsilon * self.radii[i])

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        rf = np.array([math.floor(r) for r in self.radii], dtype=np.int64)
        half = np.array([math.floor(self.epsilon * r) for r in self.radii], dtype=np.int64)
        return rf, half

    # -- sets --------------------------------------------------------------

    def in_donut(self, z: Sequence[int], i: int) -> bool:
        rho = lateral_norm(z)
        return (abs(z[0]) <= self.half_width(i)
                and self.radius_floor(i + 1) < rho <= self.radius_floor(i))

    def in_exterior(self, z: Sequence[int], i: int) -> bool:
        """D_ext^i: |z_1| >= eps*l_i with the lateral part in the donut's shell."""
        rho = lateral_norm(z)
        return (abs(z[0]) >= math.ceil(self.epsilon * self.radii[i])
                and self.radius_floor(i + 1) < rho <= self.radius_floor(i))

    def middle_radius(self, i: int) -> int:
        # (l_i + l_{i+1}) / 2 = (1 - eps) l_i, floored onto the lattice
        return math.floor((1 - self.epsilon) * self.radii[i])

    def in_middling_slice(self, z: Sequence[int], i: int) -> bool:
        return abs(z[0]) <= self.half_width(i) and lateral_norm(z) == self.middle_radius(i)

    def middling_slice(self, i: int, dim: int) -> np.ndarray:
        """All sites of m_i as an (N, dim) array, ordered by (z_1, z_2, ...)."""
        ring = level_sources_array(self.middle_radius(i), dim)
        h = self.half_width(i)
        xs = np.arange(-h, h + 1, dtype=np.int64)
        out = np.repeat(ring[None, :, :], len(xs), axis=0)
        out[:, :, 0] = xs[:, None]
        return out.reshape(-1, dim)


def donut_family(l, M, epsilon) -> DonutFamily:
    eps = as_fraction(epsilon)
    if not (0 < eps < Fraction(1, 2)):
        raise InvalidAngle(f"epsilon must lie in (0, 1/2), got {eps}")
    l0, M = as_fraction(l), as_fraction(M)
    if M <= 0:
        raise ValueError("M must be positive")
    if M >= l0:
        raise EmptyFamily(f"no donut fits between l={l0} and M={M}")
    budget = l0 - M
    radii = [l0]
    total = Fraction(0)
    k = -1
    # the widths sum to l0 - lim l_i = l0 > budget, so this terminates
    while total + 2 * eps * radii[-1] <= budget:
        total += 2 * eps * radii[-1]
        k += 1
        radii.append(radii[-1] * (1 - 2 * eps))
    if k < 0:
        raise EmptyFamily(f"no donut fits between l={l0} and M={M}")
    return DonutFamily(eps, l0, M, tuple(radii), k)


def crossing_bound(i: int, d: int) -> float:
    if i < 0 or d < 2:
        raise ValueError("need i >= 0 and d >= 2")
    return (1.0 - 1.0 / (4 * d * d)) ** i


def _path_of(trace) -> np.ndarray:
    if isinstance(trace, ParticleTrace):
        if trace.path is None:
            raise MissingPath("trace has no recorded path")
        return np.asarray(trace.path, dtype=np.int64)
    if trace is None:
        raise MissingPath("no path")
    return np.asarray(trace, dtype=np.int64)


def classify_crossings(trace, fam: DonutFamily, cone: ConeSpec) -> int:
    """Number of donuts D^0, D^1, ... crossed in order before the path leaves the cone.

    Crossing D^i means entering it from its outer ring, then reaching a site
    with lateral radius <= l_{i+1} and |z_1| <= eps*l_i without having left
    D^i in between.  ``trace`` is a ParticleTrace with a path, or a path array.
    """
    path = _path_of(trace)
    if path.ndim != 2 or len(path) == 0:
        return 0
    rf, half = fam.arrays()
    e = cone.epsilon
    return int(K.crossing_scan(path, e.numerator, e.denominator, rf, half, fam.crossable))


# -- experiments -------------------------------------------------------------


@dataclass
class CrossingRow:
    i: int
    count: int
    empirical_p: float
    ci_low: float
    ci_high: float
    bound: float


@dataclass
class CrossingReport:
    walks: int
    dim: int
    rows: list = field(default_factory=list)
    censored: int = 0
    counts: Optional[np.ndarray] = None

    def row(self, i: int) -> CrossingRow:
        return self.rows[i]


def wilson_interval(count: int, total: int, confidence: float = 0.99) -> tuple[float, float]:
    ci = binomtest(count, total).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def outer_ring(fam: DonutFamily, dim: int) -> np.ndarray:
    """Sources of H at lateral radius floor(l0)."""
    from .lattice import level_sources_array

    return level_sources_array(math.floor(fam.l0), dim)


def mc_crossing_experiment(fam: DonutFamily, cone: ConeSpec, starts, reps: int, rng, *,
                           confidence: float = 0.99, cutoff: Optional[int] = None,
                           max_steps: int = DEFAULT_MAX_STEPS) -> CrossingReport:
    """Free walks from `starts` (cycled), classified by donuts crossed inside the cone.

    Reports, for i = 0..k, the frequency of {crossings >= i} with a Wilson
    interval.  ``cutoff`` optionally stops walks whose lateral radius
    exceeds it; such walks are counted in ``censored``.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=np.int64))
    dim = starts.shape[1]
    if reps <= 0:
        return CrossingReport(0, dim)
    if len(starts) == 0:
        raise ValueError("no start sites")
    rho = np.abs(starts[:, 1:]).max(axis=1)
    if (starts[:, 0] != 0).any() or (rho < math.floor(fam.l0)).any():
        raise ValueError("starts must be sources of H at radius >= l0")
    walk_starts = starts[np.arange(reps) % len(starts)]
    out = np.zeros(reps, dtype=np.int64)
    cen = np.zeros(reps, dtype=np.bool_)
    rf, half = fam.arrays()
    e = cone.epsilon
    lim = np.iinfo(np.int64).max if cutoff is None else int(cutoff)
    done = K.crossing_walks(walk_starts, _key_value(rng), e.numerator, e.denominator, rf, half,
                            fam.crossable, lim, max_steps, out, cen)
    if done < reps:
        raise StepBudgetExceeded(f"walk {done} exceeded {max_steps} steps")
    rep = CrossingReport(reps, dim, censored=int(cen.sum()), counts=out)
    for i in range(fam.k + 1):
        c = int((out >= i).sum())
        lo, hi = wilson_interval(c, reps, confidence)
        rep.rows.append(CrossingRow(i, c, c / reps, lo, hi, crossing_bound(i, dim)))
    return rep


def write_crossing_csv(fh: IO[str], report: CrossingReport) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["i", "empirical_p", "ci_low", "ci_high", "bound"])
    for r in report.rows:
        w.writerow([r.i, f"{r.empirical_p:.6f}", f"{r.ci_low:.6f}", f"{r.ci_high:.6f}", f"{r.bound:.6f}"])


@dataclass
class FaceExitResult:
    start: Site
    walks: int
    hits: int

    @property
    def p(self) -> float:
        return self.hits / self.walks

    @property
    def sigma(self) -> float:
        p = self.p
        return math.sqrt(p * (1 - p) / self.walks)


def exterior_exit_experiment(fam: DonutFamily, i: int, starts, walks: int, rng, *,
                             max_steps: int = DEFAULT_MAX_STEPS) -> list:
    """For each start y on the middling slice m_i, how often the walk leaves
    B(y, eps*l_i) at a site of D_ext^i."""
    r = fam.half_width(i)
    lo_rho, hi_rho = fam.radius_floor(i + 1), fam.radius_floor(i)
    xmin = math.ceil(fam.epsilon * fam.radii[i])
    base = _key_value(rng)
    results = []
    for s, y in enumerate(np.atleast_2d(np.asarray(starts, dtype=np.int64))):
        if not fam.in_middling_slice(y.tolist(), i):
            raise ValueError(f"{tuple(y.tolist())} is not on the middling slice of donut {i}")
        ys = np.repeat(y[None, :], walks, axis=0)
        ex, ok = K.ball_exit_batch(y, ys, r, np.uint64(K.fold(base, np.uint64(s))), max_steps)
        if not ok:
            raise StepBudgetExceeded(f"ball exit from {tuple(y.tolist())} exceeded {max_steps} steps")
        rho = np.abs(ex[:, 1:]).max(axis=1)
        good = (np.abs(ex[:, 0]) >= xmin) & (rho > lo_rho) & (rho <= hi_rho)
        results.append(FaceExitResult(as_site(y), walks, int(good.sum())))
    return results
