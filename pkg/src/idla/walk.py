"""Simple symmetric random walks: keyed randomness, particle runs, exit laws.

A particle is a walk stopped the first time it stands on a site outside
the current aggregate.  Randomness is counter based: the walk attached to
``RngKey(seed, stream)`` is fully determined by that key, so a particle
replays identically no matter when or where it is evaluated.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, spsolve

from . import _kernels as K
from .lattice import Site, as_site, lateral_norm

DEFAULT_MAX_STEPS = 10**8
ORACLE_SIZE_CAP = 50_000
EXACT_SIZE_CAP = 500

_MASK64 = (1 << 64) - 1


class StepBudgetExceeded(RuntimeError):
    """A walk ran past its step budget without leaving the aggregate."""


class SizeCapExceeded(ValueError):
    pass


class SingularSystem(RuntimeError):
    pass


class MissingPath(ValueError):
    """An operation needed a recorded trajectory and the trace has none."""


@dataclass(frozen=True)
class RngKey:
    """A seed plus a stream path such as (replicate, source, particle)."""

    seed: int
    stream: tuple = ()

    def child(self, *labels: int) -> "RngKey":
        return RngKey(self.seed, self.stream + tuple(int(v) for v in labels))

    @property
    def value(self) -> np.uint64:
        k = np.uint64(K.mix64(np.uint64(self.seed & _MASK64)))
        for label in self.stream:
            k = np.uint64(K.fold(k, np.uint64(label)))
        return k


def _key_value(key) -> np.uint64:
    if isinstance(key, RngKey):
        return key.value
    return np.uint64(int(key) & _MASK64)


def neighbors(z: Sequence[int]) -> list[Site]:
    """The 2d unit neighbours of z in direction order +e1, -e1, +e2, -e2, ..."""
    out = []
    for a in range(len(z)):
        for s in (1, -1):
            w = list(z)
            w[a] += s
            out.append(tuple(w))
    return out


def step(z: Sequence[int], key, counter: int) -> Site:
    """Position after draw number `counter` of the walk keyed by `key`, taken from z."""
    d = len(z)
    k = int(K.direction(_key_value(key), np.uint64(counter), 2 * d))
    w = list(int(c) for c in z)
    w[k >> 1] += -1 if k & 1 else 1
    return tuple(w)


@dataclass
class ParticleTrace:
    start: Site
    exit_site: Site
    steps: int
    key: int = 0
    path: Optional[np.ndarray] = None
    visited_strip: Optional[bool] = None
    donuts_crossed: Optional[int] = None

    def materialize_path(self) -> np.ndarray:
        """Rebuild the path from the key (the walk is a pure function of it)."""
        if self.path is None:
            self.path = K.replay(np.asarray(self.start, dtype=np.int64), np.uint64(self.key), self.steps)
        return self.path


def run_until_exit(aggregate, start: Sequence[int], key, *, record_path: bool = False,
                   strip: Optional[int] = None, donuts=None,
                   max_steps: int = DEFAULT_MAX_STEPS) -> ParticleTrace:
    """Run one particle from `start` on a read-only aggregate.

    ``strip`` (a half-width W) turns on the Z_W visit flag; ``donuts`` is a
    (DonutFamily, ConeSpec) pair and turns on crossing classification.
    Both need the path, which is then kept on the trace.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    start = as_site(start)
    kv = _key_value(key)
    if start not in aggregate:
        trace = ParticleTrace(start, start, 0, int(kv))
    else:
        pos, c = K.walk_exit(aggregate.occ, aggregate.lo, aggregate.strides,
                             np.asarray(start, dtype=np.int64), kv, max_steps)
        if c < 0:
            raise StepBudgetExceeded(f"walk from {start} exceeded {max_steps} steps")
        trace = ParticleTrace(start, as_site(pos), int(c), int(kv))
    if record_path or strip is not None or donuts is not None:
        path = trace.materialize_path()
        if strip is not None:
            trace.visited_strip = bool((np.abs(path[:, 1:]).max(axis=1) <= strip).any())
        if donuts is not None:
            from .donut import classify_crossings

            fam, cone = donuts
            trace.donuts_crossed = classify_crossings(trace, fam, cone)
    return trace


# -- exit distributions ----------------------------------------------------


@dataclass
class ExitDistribution:
    probs: dict = field(default_factory=dict)

    def total(self):
        return sum(self.probs.values())

    def __getitem__(self, site):
        return self.probs.get(tuple(site), 0)

    def __len__(self):
        return len(self.probs)

    def support(self) -> list[Site]:
        return sorted(self.probs)


def outer_boundary(A: Iterable[Sequence[int]]) -> set:
    sites = set(as_site(z) for z in A)
    return {w for z in sites for w in neighbors(z) if w not in sites}


def _exact_solve(index: dict, sites: list, start_idx: int, d: int) -> list:
    """Solve (2d I - Adj) g = 2d e_start over the rationals by sparse elimination."""
    n = len(sites)
    rows = []
    for i, z in enumerate(sites):
        row = {i: Fraction(2 * d)}
        for w in neighbors(z):
            j = index.get(w)
            if j is not None:
                row[j] = row.get(j, 0) - 1
        rows.append(row)
    rhs = [Fraction(0)] * n
    rhs[start_idx] = Fraction(2 * d)
    for p in range(n):
        piv = rows[p].get(p)
        if not piv:
            raise SingularSystem("zero pivot in exact exit solve")
        for r in range(p + 1, n):
            f = rows[r].get(p)
            if not f:
                continue
            f = f / piv
            for c, v in rows[p].items():
                nv = rows[r].get(c, 0) - f * v
                if nv:
                    rows[r][c] = nv
                else:
                    rows[r].pop(c, None)
            rhs[r] -= f * rhs[p]
    g = [Fraction(0)] * n
    for p in range(n - 1, -1, -1):
        acc = rhs[p]
        for c, v in rows[p].items():
            if c > p:
                acc -= v * g[c]
        g[p] = acc / rows[p][p]
    return g


def exact_exit_distribution(A: Iterable[Sequence[int]], start: Sequence[int], *,
                            exact: bool = False, size_cap: int = ORACLE_SIZE_CAP) -> ExitDistribution:
    """Harmonic measure on the outer boundary of A seen from `start`.

    Solves for the Green's function g(z) = expected visits to z before
    leaving A, then P(exit at w) = sum over z in A adjacent to w of g(z)/2d.
    ``exact=True`` uses rational arithmetic (sets of at most 500 sites).
    """
    sites = sorted(set(as_site(z) for z in A))
    start = as_site(start)
    if start not in set(sites):
        raise ValueError(f"start {start} is not in the set")
    n = len(sites)
    if n > size_cap:
        raise SizeCapExceeded(f"{n} sites exceeds the oracle cap of {size_cap}")
    d = len(start)
    index = {z: i for i, z in enumerate(sites)}
    if exact:
        if n > EXACT_SIZE_CAP:
            raise SizeCapExceeded(f"exact mode supports at most {EXACT_SIZE_CAP} sites")
        g = _exact_solve(index, sites, index[start], d)
        weight = [v / (2 * d) for v in g]
    else:
        ri, ci = [], []
        for i, z in enumerate(sites):
            for w in neighbors(z):
                j = index.get(w)
                if j is not None:
                    ri.append(i)
                    ci.append(j)
        adj = sp.csr_matrix((np.full(len(ri), 1.0 / (2 * d)), (ri, ci)), shape=(n, n))
        mat = (sp.identity(n, format="csr") - adj).tocsr()
        b = np.zeros(n)
        b[index[start]] = 1.0
        g, info = cg(mat, b, rtol=1e-14, atol=0.0, maxiter=20 * n + 100)
        if info != 0 or np.linalg.norm(mat @ g - b) > 1e-12:
            g = spsolve(mat.tocsc(), b)
        if not np.all(np.isfinite(g)) or np.linalg.norm(mat @ g - b) > 1e-10:
            raise SingularSystem("exit system did not solve")
        weight = g / (2 * d)
    probs: dict = {}
    for i, z in enumerate(sites):
        for w in neighbors(z):
            if w not in index:
                probs[w] = probs.get(w, 0) + weight[i]
    if not exact:
        probs = {w: float(p) for w, p in probs.items()}
    return ExitDistribution(probs)


def empirical_distribution(samples: np.ndarray) -> dict:
    n = len(samples)
    counts = Counter(map(tuple, np.asarray(samples).tolist()))
    return {z: c / n for z, c in counts.items()}


def total_variation(p: Mapping, q: Mapping) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(float(p.get(k, 0)) - float(q.get(k, 0))) for k in keys)


def sample_exit_sites(aggregate, start: Sequence[int], key, count: int,
                      max_steps: int = DEFAULT_MAX_STEPS) -> np.ndarray:
    """Exit sites of `count` independent walks from `start` (start must be occupied)."""
    start = np.asarray(as_site(start), dtype=np.int64)
    out, ok = K.sample_exits(aggregate.occ, aggregate.lo, aggregate.strides, start,
                             _key_value(key), count, max_steps)
    if not ok:
        raise StepBudgetExceeded(f"walk exceeded {max_steps} steps")
    return out


def visits_strip(path: np.ndarray, half_width: int) -> bool:
    return bool((np.abs(path[:, 1:]).max(axis=1) <= half_width).any())


__all__ = [
    "RngKey", "ParticleTrace", "ExitDistribution", "StepBudgetExceeded", "SizeCapExceeded",
    "SingularSystem", "MissingPath", "step", "run_until_exit", "exact_exit_distribution", "sample_exit_sites",
    "empirical_distribution", "total_variation", "outer_boundary", "neighbors", "lateral_norm",
]
