"""Observables of built aggregates and of particle trajectories.

Line statistics read the per-line extreme array kept by `Aggregate`, so
they cost one pass over the (d-1)-dimensional line grid.  An unoccupied
line has no extreme: `x_extreme` returns None for it rather than 0, since
0 would wrongly pass every cone test.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .aggregate import Aggregate, BuildReport
from .lattice import Ball, RegionSpec, Tile, as_fraction, as_site
from .walk import DEFAULT_MAX_STEPS, MissingPath, StepBudgetExceeded, _key_value


class MissingWaveData(ValueError):
    pass


def _line_key(A: Aggregate, y: Sequence[int]) -> Optional[int]:
    y = tuple(int(c) for c in y)
    if len(y) == A.dim:
        y = y[1:]
    if len(y) != A.dim - 1:
        raise ValueError(f"line key {y} does not fit dimension {A.dim}")
    rel = np.asarray(y, dtype=np.int64) - A.lo[1:]
    if (rel < 0).any() or (rel >= A.shape[1:]).any():
        return None
    return int(np.ravel_multi_index(tuple(rel), tuple(A.shape[1:])))


def line_occupancy(A: Aggregate, y: Sequence[int]) -> int:
    """|A intersected with Z x {y}|; y is a (d-1)-tuple or a site of H."""
    li = _line_key(A, y)
    if li is None:
        return 0
    col = A.occ.reshape(int(A.shape[0]), -1)[:, li]
    return int(col.sum())


def x_extreme(A: Aggregate, z: Sequence[int]) -> Optional[int]:
    """X_z = max |z'_1| over A on the line through z, or None for an empty line."""
    li = _line_key(A, z)
    if li is None:
        return None
    v = int(A.line_max[li])
    return None if v < 0 else v


def _line_table(A: Aggregate):
    """(lateral coordinates (L, d-1), extremes (L,)) for the occupied lines."""
    lm = A.line_max.reshape(tuple(A.shape[1:]))
    idx = np.nonzero(lm >= 0)
    lat = np.stack(idx, axis=1).astype(np.int64) + A.lo[1:]
    return lat, lm[idx].astype(np.int64)


# -- Over(M, eps) -------------------------------------------------------------


@dataclass
class OverReport:
    epsilon: Fraction
    M: int
    violated: bool
    witnesses: list = field(default_factory=list)  # (line key, level, X_z)

    def record(self) -> dict:
        return {"kind": "over", "epsilon": str(self.epsilon), "M": self.M,
                "violated": self.violated,
                "witnesses": [[list(y), l, x] for y, l, x in self.witnesses]}


def over_event(A: Aggregate, M: int, eps) -> OverReport:
    """Lines at lateral level l >= M whose extreme X_z exceeds eps * l."""
    eps = as_fraction(eps)
    lat, xs = _line_table(A)
    level = np.abs(lat).max(axis=1) if lat.shape[1] else np.zeros(len(xs), dtype=np.int64)
    bad = (level >= M) & (xs * eps.denominator > eps.numerator * level)
    wit = [(tuple(lat[i].tolist()), int(level[i]), int(xs[i])) for i in np.nonzero(bad)[0]]
    wit.sort()
    return OverReport(eps, int(M), bool(wit), wit)


# -- fluctuations -------------------------------------------------------------


@dataclass
class FluctuationReport:
    n: int
    window: int
    delta_inner: int
    delta_outer: int
    norm_inner: Optional[float]
    norm_outer: Optional[float]

    def record(self) -> dict:
        return {"kind": "fluctuation", **asdict(self)}


def fluctuation(A: Aggregate, n: int, W: int) -> FluctuationReport:
    """Inner and outer errors of A against the slab R_{n/2}, inside the strip Z_W.

    delta_inner = max of floor(n/2) - |z_1| over sites of R_{n/2} cap Z_W
    missing from A (0 if none); delta_outer = max(0, X - floor(n/2)) with X the
    largest |z_1| over A cap Z_W.  Normalised values divide by sqrt(log n).
    """
    h = n // 2
    side = np.arange(-W, W + 1, dtype=np.int64)
    grids = np.meshgrid(*([side] * (A.dim - 1)), indexing="ij")
    lat = np.stack([g.ravel() for g in grids], axis=1)
    xs = np.arange(-h, h + 1, dtype=np.int64)
    # every site of R_{n/2} cap Z_W, as (x, y) pairs
    pts = np.empty((len(xs) * len(lat), A.dim), dtype=np.int64)
    pts[:, 0] = np.repeat(xs, len(lat))
    pts[:, 1:] = np.tile(lat, (len(xs), 1))
    missing = ~_occupied(A, pts)
    inner = int(h - np.abs(pts[missing, 0]).min()) if missing.any() else 0
    lines, ext = _line_table(A)
    in_strip = (np.abs(lines) <= W).all(axis=1)
    outer_x = int(ext[in_strip].max()) if in_strip.any() else -1
    outer = max(0, outer_x - h)
    if n > 1:
        s = math.sqrt(math.log(n))
        ni, no = inner / s, outer / s
    else:
        ni = no = None
    return FluctuationReport(n, W, inner, outer, ni, no)


def _occupied(A: Aggregate, pts: np.ndarray) -> np.ndarray:
    rel = pts - A.lo
    ok = ((rel >= 0) & (rel < A.shape)).all(axis=1)
    out = np.zeros(len(pts), dtype=bool)
    if ok.any():
        flat = (rel[ok] * A.strides).sum(axis=1)
        out[ok] = A.occ[flat] != 0
    return out


# -- tiles -------------------------------------------------------------------


def _mask(region, pts: np.ndarray) -> np.ndarray:
    if hasattr(region, "mask"):
        return region.mask(pts)
    return np.array([region.contains(tuple(p)) for p in pts.tolist()], dtype=bool)


def _first_border(path: np.ndarray, h: int) -> int:
    """Index of the first site with |z_1| >= h, or the last index if none."""
    hit = np.nonzero(np.abs(path[:, 0]) >= h)[0]
    return int(hit[0]) if len(hit) else len(path) - 1


def tile_counters(traces: Iterable, r, tiles: Sequence[RegionSpec], *,
                  max_steps: int = DEFAULT_MAX_STEPS) -> dict:
    """For each tile B: (W, M) where

    W = number of particles whose trajectory (stopped at settlement) meets B
        up to its first visit of the slab border |z_1| = floor(r);
    M = number of the underlying free walks (same key, not stopped at
        settlement) that meet B up to their first visit of that border.
    """
    h = math.floor(r)
    out = {t: [0, 0] for t in tiles}
    for tr in traces:
        if tr.path is None:
            raise MissingPath("tile counters need recorded paths")
        path = np.asarray(tr.path, dtype=np.int64)
        wpath = path[: _first_border(path, h) + 1]
        start = np.asarray(tr.start, dtype=np.int64)
        _, c = K.walk_to_slab_border(start, np.uint64(tr.key), h, max_steps)
        if c < 0:
            raise StepBudgetExceeded(f"free walk from {tr.start} exceeded {max_steps} steps")
        mpath = K.replay(start, np.uint64(tr.key), c)
        for t in tiles:
            if _mask(t, wpath).any():
                out[t][0] += 1
            if _mask(t, mpath).any():
                out[t][1] += 1
    return {t: tuple(v) for t, v in out.items()}


@dataclass
class TileEstimate:
    tile: Tile
    walks: int
    hits: int
    window: int
    mean: float
    se: float
    expected: float

    def record(self) -> dict:
        return {"kind": "tile", "center": list(self.tile.center), "radius": self.tile.radius,
                "h": self.tile.half_width, "walks": self.walks, "hits": self.hits,
                "window": self.window, "mean": self.mean, "se": self.se, "expected": self.expected}


def tile_expectation_experiment(tile: Tile, walks: int, rng, *, window_radius: Optional[int] = None,
                                max_steps: int = DEFAULT_MAX_STEPS) -> TileEstimate:
    """Monte Carlo estimate of E[M_r(1_H, tile)], one walk per source of H.

    Sources are drawn uniformly from the (d-1)-box of radius `window_radius`
    around the tile's lateral centre (default 4h, where walks from farther
    away reach the tile with negligible probability).  The estimate is
    |window| * (fraction of walks whose first visit of |z_1| = h is in the
    tile).  Its expectation is #tile / 2 by symmetry.
    """
    h = tile.half_width
    if abs(tile.center[0]) != h:
        raise ValueError("tile centre must lie on the slab border")
    d = len(tile.center)
    R = 4 * h if window_radius is None else int(window_radius)
    side = 2 * R + 1
    window = side ** (d - 1)
    key = _key_value(rng)
    gen = np.random.default_rng(int(key))
    starts = np.zeros((walks, d), dtype=np.int64)
    starts[:, 1:] = gen.integers(-R, R + 1, size=(walks, d - 1)) + np.asarray(tile.center[1:])
    lo = np.asarray(tile.center, dtype=np.int64) - tile.radius
    hi = np.asarray(tile.center, dtype=np.int64) + tile.radius
    lo[0] = hi[0] = tile.center[0]
    hits, done = K.tile_hits(starts, np.uint64(K.fold(key, np.uint64(1))), h, lo, hi, max_steps)
    if done < walks:
        raise StepBudgetExceeded(f"walk {done} exceeded {max_steps} steps")
    k = int(hits.sum())
    p = k / walks if walks else 0.0
    se = window * math.sqrt(p * (1 - p) / walks) if walks else float("nan")
    return TileEstimate(tile, walks, k, window, window * p, se, len(tile.sites()) / 2)


def tentacle_scan(A: Aggregate, z: Sequence[int], r, b: float = 0.1) -> tuple[int, bool]:
    """(|A cap B(z, r)|, count <= b r^d).  Exploratory; b has no proven value."""
    if r <= 0:
        raise ValueError("r must be positive")
    ball = Ball.of(as_site(z), r)
    rr = ball.radius
    sl = []
    for a in range(A.dim):
        lo = ball.center[a] - rr - int(A.lo[a])
        hi = ball.center[a] + rr - int(A.lo[a]) + 1
        sl.append(slice(max(lo, 0), max(min(hi, int(A.shape[a])), 0)))
    count = int(A.grid[tuple(sl)].sum())
    return count, count <= b * float(r) ** A.dim


# -- stabilization -------------------------------------------------------------


@dataclass
class StabilizationRow:
    j: int
    replicates: int
    occurred: int
    fraction: float
    visits: list

    def record(self) -> dict:
        return {"kind": "stabilization", **asdict(self)}


def stabilization_rate(reports, M: Optional[int] = None) -> list:
    """Per wave j, the fraction of replicates in which E_{M,j} occurred (some
    wave-j particle visited Z_M), plus the raw per-replicate visit counts."""
    if isinstance(reports, BuildReport):
        reports = [reports]
    reports = list(reports)
    if not reports:
        return []
    for rep in reports:
        if rep.per_wave is None:
            raise MissingWaveData("report was not built by build_waves")
        if M is not None and rep.extra.get("M") not in (None, M):
            raise ValueError(f"report built for M={rep.extra.get('M')}, asked for M={M}")
    J = min(len(rep.per_wave) for rep in reports)
    rows = []
    for j in range(J):
        v = [int(rep.per_wave[j]["visits"]) for rep in reports]
        occ = sum(1 for x in v if x > 0)
        rows.append(StabilizationRow(j, len(reports), occ, occ / len(reports), v))
    return rows


# -- output --------------------------------------------------------------------


def write_ndjson(fh: IO[str], records: Iterable[dict]) -> None:
    for rec in records:
        fh.write(json.dumps(rec, separators=(",", ":"), sort_keys=True) + "\n")


def write_csv(fh: IO[str], header: Sequence[str], rows: Iterable[Sequence]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in row])
