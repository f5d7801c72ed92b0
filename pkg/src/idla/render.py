"""Plain PPM (P3) pictures of three-dimensional aggregates.

Colour rule, with h = n/2: white for nothing, green for |z_1| < h, blue
for |z_1| = h and red for |z_1| > h.  Two views are offered:

* ``projection``: one pixel per line Z x {(y_2, y_3)} of the window,
  coloured by the line's extreme X_z (a top view of the slab's surface);
* ``slice``: the plane z_3 = c, one pixel per (z_1, z_2).
"""

from __future__ import annotations

from fractions import Fraction
from typing import IO, Optional

import numpy as np

WHITE = (255, 255, 255)
GREEN = (0, 160, 0)
BLUE = (0, 0, 255)
RED = (255, 0, 0)


class UnsupportedDimension(ValueError):
    pass


def classify(x: int, half: Fraction) -> tuple:
    x = abs(x)
    if x < half:
        return GREEN
    if x == half:
        return BLUE
    return RED


def _palette(values: np.ndarray, half: Fraction) -> np.ndarray:
    """Map |x| values (negative = empty) to an (..., 3) uint8 image."""
    img = np.empty(values.shape + (3,), dtype=np.uint8)
    img[...] = WHITE
    occ = values >= 0
    # |x| vs num/den, cross-multiplied
    lhs = values * half.denominator
    rhs = half.numerator
    img[occ & (lhs < rhs)] = GREEN
    img[occ & (lhs == rhs)] = BLUE
    img[occ & (lhs > rhs)] = RED
    return img


def projection_image(agg, n: int, window: int) -> np.ndarray:
    if agg.dim != 3:
        raise UnsupportedDimension(f"rendering needs d = 3, got d = {agg.dim}")
    W = int(window)
    vals = np.full((2 * W + 1, 2 * W + 1), -1, dtype=np.int64)
    lm = agg.line_max.reshape(tuple(agg.shape[1:]))
    y_lo, z_lo = int(agg.lo[1]), int(agg.lo[2])
    for a in range(2 * W + 1):
        ya = a - W - y_lo
        if not 0 <= ya < lm.shape[0]:
            continue
        for b in range(2 * W + 1):
            zb = b - W - z_lo
            if 0 <= zb < lm.shape[1]:
                vals[a, b] = lm[ya, zb]
    return _palette(vals, Fraction(n, 2))


def slice_image(agg, n: int, window: int, height: Optional[int] = None, plane: int = 0) -> np.ndarray:
    """Rows are z_1 from +height down to -height, columns z_2 in [-window, window]."""
    if agg.dim != 3:
        raise UnsupportedDimension(f"rendering needs d = 3, got d = {agg.dim}")
    W = int(window)
    H = n // 2 + 3 if height is None else int(height)
    vals = np.full((2 * H + 1, 2 * W + 1), -1, dtype=np.int64)
    grid = agg.grid
    for r in range(2 * H + 1):
        x = H - r
        gx = x - int(agg.lo[0])
        gz = plane - int(agg.lo[2])
        if not (0 <= gx < grid.shape[0] and 0 <= gz < grid.shape[2]):
            continue
        for c in range(2 * W + 1):
            gy = c - W - int(agg.lo[1])
            if 0 <= gy < grid.shape[1] and grid[gx, gy, gz]:
                vals[r, c] = abs(x)
    return _palette(vals, Fraction(n, 2))


def write_ppm(fh: IO[str], img: np.ndarray) -> None:
    h, w, _ = img.shape
    fh.write(f"P3\n{w} {h}\n255\n")
    for row in img:
        fh.write(" ".join(f"{r} {g} {b}" for r, g, b in row.tolist()) + "\n")


def read_ppm(text: str) -> np.ndarray:
    tok = text.split()
    if tok[0] != "P3":
        raise ValueError("not a plain PPM")
    w, h = int(tok[1]), int(tok[2])
    vals = np.array([int(t) for t in tok[4:4 + 3 * w * h]], dtype=np.uint8)
    return vals.reshape(h, w, 3)


def color_fractions(img: np.ndarray) -> dict:
    """Share of non-white pixels in each colour class."""
    out = {}
    flat = img.reshape(-1, 3)
    filled = ~(flat == WHITE).all(axis=1)
    total = int(filled.sum())
    for name, col in (("green", GREEN), ("blue", BLUE), ("red", RED)):
        k = int((flat == col).all(axis=1).sum())
        out[name] = k / total if total else 0.0
    out["filled"] = total
    return out
