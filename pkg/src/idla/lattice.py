"""Integer-lattice geometry on Z^d.

Sites are plain tuples of ints whose first coordinate is the "height" axis
orthogonal to the source hyperplane H = {0} x Z^{d-1}.  All norms are sup
norms.  Region parameters that may be real (slab half-widths such as
n/2 + C*sqrt(log n)) are floored once, when the region is built.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

Site = tuple  # tuple[int, ...]
Real = Union[int, float, Fraction]


class DimensionMismatch(ValueError):
    pass


def as_site(z: Iterable[int]) -> Site:
    return tuple(int(c) for c in z)


def sup_norm(z: Sequence[int]) -> int:
    return max((abs(int(c)) for c in z), default=0)


def proj_H(z: Sequence[int]) -> Site:
    """Orthogonal projection onto the source hyperplane (zero the first coordinate)."""
    return (0,) + tuple(int(c) for c in z[1:])


def lateral_norm(z: Sequence[int]) -> int:
    """Sup norm of the projection onto H, i.e. max_{i>=2} |z_i|."""
    return max((abs(int(c)) for c in z[1:]), default=0)


def _floor(x: Real) -> int:
    return math.floor(x)


def as_fraction(value) -> Fraction:
    """Parse ints, floats, Fractions and 'p/q' strings into an exact Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    return Fraction(value)


# -- regions ---------------------------------------------------------------


@dataclass(frozen=True)
class Slab:
    """R_x: |z_1| <= floor(x)."""

    half_width: int

    @classmethod
    def of(cls, x: Real) -> "Slab":
        return cls(_floor(x))

    def contains(self, z: Sequence[int]) -> bool:
        return abs(z[0]) <= self.half_width

    def mask(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(pts[:, 0]) <= self.half_width


@dataclass(frozen=True)
class Strip:
    """Z_x: max_{i>=2} |z_i| <= floor(x)."""

    half_width: int

    @classmethod
    def of(cls, x: Real) -> "Strip":
        return cls(_floor(x))

    def contains(self, z: Sequence[int]) -> bool:
        return lateral_norm(z) <= self.half_width

    def mask(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(pts[:, 1:]).max(axis=1) <= self.half_width


@dataclass(frozen=True)
class Ball:
    """Closed sup-norm ball B(center, floor(r))."""

    center: Site
    radius: int

    @classmethod
    def of(cls, center: Iterable[int], r: Real) -> "Ball":
        return cls(as_site(center), _floor(r))

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, z: Sequence[int]) -> bool:
        if len(z) != len(self.center):
            raise DimensionMismatch(f"site of dimension {len(z)} vs ball of dimension {len(self.center)}")
        return all(abs(a - b) <= self.radius for a, b in zip(z, self.center))

    def mask(self, pts: np.ndarray) -> np.ndarray:
        return (np.abs(pts - np.asarray(self.center)) <= self.radius).all(axis=1)

    def size(self) -> int:
        return (2 * self.radius + 1) ** self.dim

    def sites(self) -> list[Site]:
        r = self.radius
        offsets = itertools.product(range(-r, r + 1), repeat=self.dim)
        return [tuple(c + o for c, o in zip(self.center, off)) for off in offsets]


@dataclass(frozen=True)
class Annulus:
    """Ann(M, j) = H intersected with B((j+2) M^alpha) minus B((j+1) M^alpha)."""

    M: int
    j: int
    alpha: int

    @property
    def inner(self) -> int:
        return (self.j + 1) * self.M**self.alpha

    @property
    def outer(self) -> int:
        return (self.j + 2) * self.M**self.alpha

    def contains(self, z: Sequence[int]) -> bool:
        if z[0] != 0:
            return False
        r = lateral_norm(z)
        return self.inner < r <= self.outer

    def mask(self, pts: np.ndarray) -> np.ndarray:
        r = np.abs(pts[:, 1:]).max(axis=1)
        return (pts[:, 0] == 0) & (r > self.inner) & (r <= self.outer)

    def levels(self) -> range:
        return range(self.inner + 1, self.outer + 1)


@dataclass(frozen=True)
class SlabBorder:
    """Boundary of a slab, {-floor(x), floor(x)} x Z^{d-1}."""

    half_width: int

    @classmethod
    def of(cls, x: Real) -> "SlabBorder":
        return cls(_floor(x))

    def contains(self, z: Sequence[int]) -> bool:
        return abs(z[0]) == self.half_width

    def mask(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(pts[:, 0]) == self.half_width


@dataclass(frozen=True)
class Tile:
    """tau(z): a sup ball around z intersected with the slab border {|z_1| = h}."""

    center: Site
    radius: int
    half_width: int

    @classmethod
    def of(cls, center: Iterable[int], r: Real, h: Real) -> "Tile":
        return cls(as_site(center), _floor(r), _floor(h))

    def contains(self, z: Sequence[int]) -> bool:
        return abs(z[0]) == self.half_width and all(
            abs(a - b) <= self.radius for a, b in zip(z, self.center))

    def mask(self, pts: np.ndarray) -> np.ndarray:
        near = (np.abs(pts - np.asarray(self.center)) <= self.radius).all(axis=1)
        return near & (np.abs(pts[:, 0]) == self.half_width)

    def sites(self) -> list[Site]:
        return [z for z in Ball(self.center, self.radius).sites() if self.contains(z)]


@dataclass(frozen=True)
class Cell:
    """C(z): a sup ball around z intersected with the outside of the slab R_h."""

    center: Site
    radius: int
    half_width: int

    @classmethod
    def of(cls, center: Iterable[int], r: Real, h: Real) -> "Cell":
        return cls(as_site(center), _floor(r), _floor(h))

    def contains(self, z: Sequence[int]) -> bool:
        return abs(z[0]) > self.half_width and all(
            abs(a - b) <= self.radius for a, b in zip(z, self.center))

    def mask(self, pts: np.ndarray) -> np.ndarray:
        near = (np.abs(pts - np.asarray(self.center)) <= self.radius).all(axis=1)
        return near & (np.abs(pts[:, 0]) > self.half_width)


RegionSpec = Union[Slab, Strip, Ball, Annulus, SlabBorder, Tile, Cell]


def region_contains(region: RegionSpec, z: Sequence[int], dim: int | None = None) -> bool:
    if dim is not None and len(z) != dim:
        raise DimensionMismatch(f"site {tuple(z)} is not in Z^{dim}")
    if len(z) < 2:
        raise DimensionMismatch("sites need at least two coordinates")
    return region.contains(z)


@dataclass(frozen=True)
class ConeSpec:
    """The cone |z_1| <= eps * ||p_H(z)||, tested with exact integer arithmetic."""

    epsilon: Fraction

    def __post_init__(self):
        eps = as_fraction(self.epsilon)
        if not (0 < eps < 1):
            raise ValueError(f"cone angle must lie in (0, 1), got {eps}")
        object.__setattr__(self, "epsilon", eps)

    def contains(self, z: Sequence[int]) -> bool:
        return cone_contains(self, z)


def cone_contains(cone: ConeSpec, z: Sequence[int]) -> bool:
    eps = cone.epsilon
    return abs(z[0]) * eps.denominator <= eps.numerator * lateral_norm(z)


# -- sources ---------------------------------------------------------------


def level_size(M: int, dim: int) -> int:
    if M == 0:
        return 1
    return (2 * M + 1) ** (dim - 1) - (2 * M - 1) ** (dim - 1)


def sources_at_level(M: int, dim: int) -> list[Site]:
    """Sources of H at sup distance M, in ascending lexicographic order of (z_2..z_d)."""
    if dim < 2:
        raise ValueError("dimension must be at least 2")
    if M == 0:
        return [(0,) * dim]
    rng = range(-M, M + 1)
    return [
        (0,) + y for y in itertools.product(rng, repeat=dim - 1) if max(abs(c) for c in y) == M
    ]


def level_sources_array(M: int, dim: int) -> np.ndarray:
    """Vectorised `sources_at_level`: an (N, dim) int64 array in the same order."""
    if M == 0:
        return np.zeros((1, dim), dtype=np.int64)
    side = np.arange(-M, M + 1, dtype=np.int64)
    grids = np.meshgrid(*([side] * (dim - 1)), indexing="ij")
    lat = np.stack([g.ravel() for g in grids], axis=1)
    lat = lat[np.abs(lat).max(axis=1) == M]
    out = np.zeros((lat.shape[0], dim), dtype=np.int64)
    out[:, 1:] = lat
    return out


def sources_up_to(L: int, dim: int, first: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """All sources of levels first..L in firing order, with their level.

    Row i of the returned site array is the source with canonical index
    `first_index(first, dim) + i`.
    """
    blocks = [level_sources_array(m, dim) for m in range(first, L + 1)]
    if not blocks:
        return np.zeros((0, dim), dtype=np.int64), np.zeros(0, dtype=np.int64)
    levels = np.concatenate([np.full(len(b), m, dtype=np.int64) for m, b in zip(range(first, L + 1), blocks)])
    return np.concatenate(blocks), levels


def first_index(M: int, dim: int) -> int:
    """Canonical index of the first source of level M (sources are numbered level by level)."""
    return 0 if M == 0 else (2 * M - 1) ** (dim - 1)


def source_index(z: Sequence[int]) -> int:
    """Canonical firing index of a source of H."""
    dim = len(z)
    if z[0] != 0:
        raise ValueError(f"{tuple(z)} is not on the source hyperplane")
    M = lateral_norm(z)
    if M == 0:
        return 0
    y = tuple(z[1:])
    # rank among level-M lateral points preceding y lexicographically
    rank = 0
    for t, other in enumerate(sources_at_level(M, dim)):
        if other[1:] == y:
            rank = t
            break
    else:
        raise ValueError(f"{tuple(z)} is not a source")
    return first_index(M, dim) + rank
