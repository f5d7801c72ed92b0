"""Aggregates and the construction protocols for hyperplane-source IDLA.

The occupied set lives in a dense, automatically enlarged uint8 grid
(aggregates are compact slabs, so a box is far cheaper than a hash set at
the sizes of interest).  Alongside it we keep, for every line
Z x {y}, the largest |z_1| among its occupied sites.

Sources are numbered canonically: level 0, then level 1 in lexicographic
order of (z_2, ..., z_d), and so on.  Particle i of source s walks with key
``RngKey(seed, (replicate, s, i))``, independent of the protocol and of
how far the build goes, so A_n[M] built with a given prefix is literally
contained in A_n[M+1] built with the same prefix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional, Sequence

import numpy as np

from . import _kernels as K
from .lattice import Site, as_site, first_index, level_sources_array, sources_up_to
from .walk import (DEFAULT_MAX_STEPS, ParticleTrace, RngKey, StepBudgetExceeded,
                   run_until_exit)

_EMPTY_LINE = -1
_CLOCK_LABEL = 0xC10C


class Aggregate:
    """A finite subset of Z^d with exact cardinality and per-line extremes."""

    def __init__(self, dim: int, sites: Iterable[Sequence[int]] = (), *,
                 lo: Optional[Sequence[int]] = None, hi: Optional[Sequence[int]] = None):
        if dim < 2:
            raise ValueError("dimension must be at least 2")
        self.dim = dim
        if lo is None:
            lo = [-4] * dim
        if hi is None:
            hi = [4] * dim
        self._allocate(np.asarray(lo, dtype=np.int64), np.asarray(hi, dtype=np.int64))
        self.count = 0
        for z in sites:
            self.add(z)

    # -- storage ---------------------------------------------------------

    def _allocate(self, lo: np.ndarray, hi: np.ndarray) -> None:
        self.lo = lo.copy()
        self.shape = (hi - lo + 1).astype(np.int64)
        self.strides = np.ones(self.dim, dtype=np.int64)
        for a in range(self.dim - 2, -1, -1):
            self.strides[a] = self.strides[a + 1] * self.shape[a + 1]
        self.occ = np.zeros(int(np.prod(self.shape)), dtype=np.uint8)
        self.line_max = np.full(int(np.prod(self.shape[1:])), _EMPTY_LINE, dtype=np.int32)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.shape - 1

    @property
    def grid(self) -> np.ndarray:
        return self.occ.reshape(tuple(self.shape))

    def _regrow(self, need_lo: np.ndarray, need_hi: np.ndarray) -> None:
        old_grid, old_lines = self.grid, self.line_max.reshape(tuple(self.shape[1:]))
        old_lo, old_shape = self.lo, self.shape
        span = self.shape
        new_lo = np.where(need_lo < self.lo, need_lo - np.maximum(4, span // 2), self.lo)
        new_hi = np.where(need_hi > self.hi, need_hi + np.maximum(4, span // 2), self.hi)
        self._allocate(new_lo, new_hi)
        off = old_lo - self.lo
        sl = tuple(slice(int(o), int(o + s)) for o, s in zip(off, old_shape))
        self.grid[sl] = old_grid
        self.line_max.reshape(tuple(self.shape[1:]))[sl[1:]] = old_lines

    def reserve(self, lo: Sequence[int], hi: Sequence[int], pad: int = 1) -> None:
        """Make sure the box [lo - pad, hi + pad] is inside the grid."""
        need_lo = np.asarray(lo, dtype=np.int64) - pad
        need_hi = np.asarray(hi, dtype=np.int64) + pad
        if np.any(need_lo < self.lo) or np.any(need_hi > self.hi):
            self._regrow(need_lo, need_hi)

    def _index(self, z: Sequence[int]) -> Optional[int]:
        rel = np.asarray(z, dtype=np.int64) - self.lo
        if np.any(rel < 0) or np.any(rel >= self.shape):
            return None
        return int(rel @ self.strides)

    # -- set interface ---------------------------------------------------

    def __contains__(self, z) -> bool:
        if len(z) != self.dim:
            return False
        idx = self._index(z)
        return idx is not None and bool(self.occ[idx])

    def __len__(self) -> int:
        return self.count

    def __iter__(self) -> Iterator[Site]:
        return iter(map(tuple, self.sites().tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Aggregate):
            return NotImplemented
        return self.dim == other.dim and self.count == other.count and \
            np.array_equal(self.sites(), other.sites())

    def __repr__(self) -> str:
        return f"Aggregate(dim={self.dim}, count={self.count})"

    def add(self, z: Sequence[int]) -> bool:
        """Occupy z; returns False if it was already occupied."""
        z = as_site(z)
        if len(z) != self.dim:
            raise ValueError(f"site {z} is not in Z^{self.dim}")
        self.reserve(z, z)
        idx = self._index(z)
        if self.occ[idx]:
            return False
        self.occ[idx] = 1
        self.count += 1
        li = idx % int(self.strides[0])
        self.line_max[li] = max(int(self.line_max[li]), abs(z[0]))
        return True

    def sites(self) -> np.ndarray:
        """Occupied sites as a (count, dim) array in lexicographic order."""
        idx = np.nonzero(self.grid)
        return np.stack(idx, axis=1).astype(np.int64) + self.lo

    def copy(self) -> "Aggregate":
        new = Aggregate.__new__(Aggregate)
        new.dim = self.dim
        new.lo, new.shape, new.strides = self.lo.copy(), self.shape.copy(), self.strides.copy()
        new.occ, new.line_max = self.occ.copy(), self.line_max.copy()
        new.count = self.count
        return new

    # -- line bookkeeping --------------------------------------------------

    def line_extreme(self, y: Sequence[int]) -> Optional[int]:
        """max |z_1| over occupied sites of the line Z x {y}, or None if the line is empty."""
        y = tuple(int(c) for c in y)
        if len(y) != self.dim - 1:
            raise ValueError(f"line label {y} should have {self.dim - 1} coordinates")
        rel = np.asarray(y, dtype=np.int64) - self.lo[1:]
        if np.any(rel < 0) or np.any(rel >= self.shape[1:]):
            return None
        v = int(self.line_max.reshape(tuple(self.shape[1:]))[tuple(rel)])
        return None if v == _EMPTY_LINE else v

    def line_extremes(self) -> dict:
        """{y: max |z_1|} over all non-empty lines."""
        lines = self.line_max.reshape(tuple(self.shape[1:]))
        idx = np.nonzero(lines != _EMPTY_LINE)
        out = {}
        for rel in zip(*idx):
            y = tuple(int(r + l) for r, l in zip(rel, self.lo[1:]))
            out[y] = int(lines[rel])
        return out

    def check_invariants(self) -> None:
        """Rescan the grid and compare with count and the per-line maxima."""
        grid = self.grid
        if int(grid.sum()) != self.count:
            raise AssertionError(f"count {self.count} != occupied {int(grid.sum())}")
        xs = np.abs(np.arange(self.shape[0]) + self.lo[0])
        shaped = xs.reshape((-1,) + (1,) * (self.dim - 1))
        rescan = np.where(grid.astype(bool), shaped, _EMPTY_LINE).max(axis=0)
        if not np.array_equal(rescan, self.line_max.reshape(tuple(self.shape[1:]))):
            raise AssertionError("per-line maxima disagree with a rescan")
        edge = [grid.take(0, axis=a).any() or grid.take(-1, axis=a).any() for a in range(self.dim)]
        if any(edge):
            raise AssertionError("occupied site on the grid border")


# -- protocols -------------------------------------------------------------


@dataclass
class BuildReport:
    aggregate: Aggregate
    particles_launched: int
    sources_fired: int
    n: int
    protocol: str
    level: int
    total_steps: int = 0
    traces: Optional[list] = None
    per_wave: Optional[list] = None
    extra: dict = field(default_factory=dict)


def _launch(agg: Aggregate, starts: np.ndarray, keys: np.ndarray, tags: np.ndarray, n_tags: int,
            strip: Optional[int], record: bool, max_steps: int):
    """Fire particles in order onto `agg`; returns (visits, counts, steps, records)."""
    visits = np.zeros(n_tags, dtype=np.int64)
    counts = np.zeros(n_tags, dtype=np.int64)
    P, d = starts.shape
    if P == 0:
        return visits, counts, 0, None
    agg.reserve(starts.min(axis=0), starts.max(axis=0))
    exits = np.zeros((P if record else 0, d), dtype=np.int64)
    steps = np.zeros(P if record else 0, dtype=np.int64)
    visited = np.zeros(P if record else 0, dtype=np.bool_)
    strip_r = -1 if strip is None else int(strip)
    first, total = 0, 0
    while True:
        first, status, taken = K.fire(agg.occ, agg.line_max, agg.lo, agg.shape, agg.strides,
                                      starts, keys, tags, first, 1, max_steps, strip_r,
                                      visits, counts, exits, steps, visited, record)
        total += taken
        if status == K.BUDGET_EXCEEDED:
            agg.count += int(counts.sum())
            raise StepBudgetExceeded(
                f"particle from {tuple(starts[first].tolist())} exceeded {max_steps} steps")
        if status == K.OK:
            break
        # the last settled site sits on the grid edge: enlarge past every touched face
        grid = agg.grid
        need_lo, need_hi = agg.lo.copy(), agg.hi.copy()
        for a in range(d):
            if grid.take(0, axis=a).any():
                need_lo[a] = agg.lo[a]
            if grid.take(-1, axis=a).any():
                need_hi[a] = agg.hi[a]
        agg.reserve(need_lo, need_hi)
    agg.count += int(counts.sum())
    rec = (exits, steps, visited) if record else None
    return visits, counts, total, rec


def _level_batch(n: int, M: int, dim: int, prefix: np.uint64):
    src = level_sources_array(M, dim)
    keys = K.particle_keys(prefix, first_index(M, dim), len(src), n)
    return np.repeat(src, n, axis=0), keys


def _traces(starts, keys, rec) -> list:
    exits, steps, visited = rec
    return [ParticleTrace(tuple(s), tuple(e), int(c), int(k), visited_strip=bool(v))
            for s, k, e, c, v in zip(starts.tolist(), keys.tolist(), exits.tolist(),
                                     steps.tolist(), visited.tolist())]


def _prefix(rng) -> np.uint64:
    if isinstance(rng, RngKey):
        return rng.value
    return RngKey(int(rng)).value


def fire_levels(agg: Aggregate, n: int, levels: Iterable[int], rng, *, strip: Optional[int] = None,
                record_traces: bool = False, max_steps: int = DEFAULT_MAX_STEPS):
    """Fire n particles from every source of each level, in level then lexicographic order.

    Returns (particles, visits, total_steps, traces) where `visits` counts
    particles whose trajectory met the strip Z_strip.
    """
    prefix = _prefix(rng)
    particles = visits = total = 0
    traces = [] if record_traces else None
    for M in levels:
        if n == 0:
            continue
        starts, keys = _level_batch(n, M, agg.dim, prefix)
        tags = np.zeros(len(starts), dtype=np.int64)
        v, c, t, rec = _launch(agg, starts, keys, tags, 1, strip, record_traces, max_steps)
        particles += int(c[0])
        visits += int(v[0])
        total += t
        if record_traces:
            traces.extend(_traces(starts, keys, rec))
    return particles, visits, total, traces


def _sources_fired(M: int, dim: int) -> int:
    return (2 * M + 1) ** (dim - 1)


def build_A_n_M(n: int, M: int, dim: int, rng, *, record_traces: bool = False,
                strip: Optional[int] = None, max_steps: int = DEFAULT_MAX_STEPS) -> BuildReport:
    """A_n[M]: levels 0..M fired in order, n consecutive particles per source.

    `rng` is a seed or an RngKey prefix, typically RngKey(seed, (replicate,)).
    """
    if n < 0 or M < 0:
        raise ValueError("n and M must be non-negative")
    agg = Aggregate(dim, lo=[-(n // 2 + 4)] + [-(M + 4)] * (dim - 1),
                    hi=[n // 2 + 4] + [M + 4] * (dim - 1))
    particles, visits, total, traces = fire_levels(agg, n, range(M + 1), rng, strip=strip,
                                                   record_traces=record_traces, max_steps=max_steps)
    rep = BuildReport(agg, particles, _sources_fired(M, dim), n, "levels", M, total, traces)
    if strip is not None:
        rep.extra["strip_visits"] = visits
    return rep


def build_A_n_M_clocks(n: int, M: int, dim: int, rng, *, record_traces: bool = False,
                       max_steps: int = DEFAULT_MAX_STEPS) -> BuildReport:
    """A'_n[M]: same particles as A_n[M], launched in the order of i.i.d. uniform clocks.

    Source s draws n uniforms; sorted, the i-th smallest is the launch time
    of its particle i (walk key (s, i)).  All n(2M+1)^{d-1} particles are
    then launched by increasing time.
    """
    if n < 0 or M < 0:
        raise ValueError("n and M must be non-negative")
    agg = Aggregate(dim, lo=[-(n // 2 + 4)] + [-(M + 4)] * (dim - 1),
                    hi=[n // 2 + 4] + [M + 4] * (dim - 1))
    src, _ = sources_up_to(M, dim)
    prefix = _prefix(rng)
    keys = K.particle_keys(prefix, 0, len(src), n)
    clocks = np.sort(K.clock_values(keys, _CLOCK_LABEL).reshape(len(src), n), axis=1)
    order = np.argsort(clocks.ravel(), kind="stable")
    starts = np.repeat(src, n, axis=0)[order]
    keys = keys[order]
    tags = np.zeros(len(starts), dtype=np.int64)
    _, c, total, rec = _launch(agg, starts, keys, tags, 1, None, record_traces, max_steps)
    traces = _traces(starts, keys, rec) if record_traces else None
    return BuildReport(agg, int(c.sum()) if n else 0, len(src), n, "clocks", M, total, traces)


def build_waves(n: int, M: int, alpha: int, J: int, dim: int, rng, *,
                record_traces: bool = False, max_steps: int = DEFAULT_MAX_STEPS) -> BuildReport:
    """Levels 0..M^alpha, then waves j = 0..J from the annuli Ann(M, j).

    per_wave[j] records how many wave-j particles visited the strip Z_M
    before (or when) settling.
    """
    if alpha < 1:
        raise ValueError("alpha must be a positive integer")
    base = M**alpha
    agg = Aggregate(dim, lo=[-(n // 2 + 4)] + [-(base + 4)] * (dim - 1),
                    hi=[n // 2 + 4] + [base + 4] * (dim - 1))
    particles, _, total, traces = fire_levels(agg, n, range(base + 1), rng,
                                              record_traces=record_traces, max_steps=max_steps)
    per_wave = []
    for j in range(J + 1):
        lo_level, hi_level = (j + 1) * base + 1, (j + 2) * base
        p, v, t, tr = fire_levels(agg, n, range(lo_level, hi_level + 1), rng, strip=M,
                                  record_traces=record_traces, max_steps=max_steps)
        particles += p
        total += t
        if record_traces:
            traces.extend(tr)
        per_wave.append({"j": j, "levels": [lo_level, hi_level], "particles": p, "visits": v})
    top = (J + 2) * base if J >= 0 else base
    rep = BuildReport(agg, particles, _sources_fired(top, dim), n, "waves", top, total,
                      traces, per_wave)
    rep.extra.update({"M": M, "alpha": alpha, "J": J})
    return rep


def build_truncated_infinite(n: int, W: int, alpha: int, margin: int, dim: int, rng, *,
                             record_traces: bool = False,
                             max_steps: int = DEFAULT_MAX_STEPS) -> BuildReport:
    """Stand-in for A_n[infinity]: A_n[L] with L = W^alpha + margin, observed in Z_W.

    Telemetry counts particles from the outer levels (max(W, W^alpha // 2), L]
    whose trajectory entered Z_W; these are the particles a longer build
    would keep feeding into the observation window.
    """
    if W < 1:
        raise ValueError("window W must be at least 1")
    L = W**alpha + margin
    agg = Aggregate(dim, lo=[-(n // 2 + 4)] + [-(L + 4)] * (dim - 1),
                    hi=[n // 2 + 4] + [L + 4] * (dim - 1))
    edge = max(W, (W**alpha) // 2)
    particles, _, total, traces = fire_levels(agg, n, range(min(edge, L) + 1), rng,
                                              record_traces=record_traces, max_steps=max_steps)
    p, v, t, tr = fire_levels(agg, n, range(edge + 1, L + 1), rng, strip=W,
                              record_traces=record_traces, max_steps=max_steps)
    particles += p
    total += t
    if record_traces:
        traces.extend(tr)
    rep = BuildReport(agg, particles, _sources_fired(L, dim), n, "truncated-infinite", L, total, traces)
    rep.extra.update({
        "window": W, "alpha": alpha, "margin": margin,
        "telemetry": {"levels": [edge + 1, L], "particles": p, "visits": v,
                      "rate": (v / p) if p else None},
    })
    return rep


def smash_sum(A: Aggregate, z: Sequence[int], rng, *, inplace: bool = False,
              max_steps: int = DEFAULT_MAX_STEPS) -> Aggregate:
    """A (+) {z}: add z if it is free, else the exit site of a walk from z."""
    out = A if inplace else A.copy()
    z = as_site(z)
    if z not in out:
        out.add(z)
        return out
    trace = run_until_exit(out, z, rng, max_steps=max_steps)
    out.add(trace.exit_site)
    return out


# -- snapshots ---------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def write_snapshot(fh: IO[str], agg: Aggregate, **header) -> None:
    """NDJSON: one header record, then one {"z": [...]} record per site, sorted."""
    head = {"kind": "header", "dimension": agg.dim, "count": agg.count}
    head.update(header)
    fh.write(_dumps(head) + "\n")
    for z in agg.sites().tolist():
        fh.write(_dumps({"z": z}) + "\n")


def read_snapshot(fh: IO[str]) -> tuple[Aggregate, dict]:
    header = None
    sites = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        if header is None:
            if rec.get("kind") != "header":
                raise ValueError("snapshot must start with a header record")
            header = rec
            continue
        sites.append(rec["z"])
    if header is None:
        raise ValueError("empty snapshot")
    dim = int(header["dimension"])
    if sites:
        arr = np.asarray(sites, dtype=np.int64)
        agg = Aggregate(dim, lo=arr.min(axis=0) - 1, hi=arr.max(axis=0) + 1)
    else:
        agg = Aggregate(dim)
    for z in sites:
        agg.add(z)
    return agg, header


def save_snapshot(path, agg: Aggregate, **header) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_snapshot(fh, agg, **header)


def load_snapshot(path) -> tuple[Aggregate, dict]:
    with open(path, encoding="utf-8") as fh:
        return read_snapshot(fh)
