"""Compiled inner loops.

Everything here works on raw arrays.  The occupancy grid is a flat uint8
array in C order over axes (z_1, z_2, ..., z_d); `lo` is the lattice
coordinate of grid index 0 on every axis.  Random numbers come from a
counter-based generator: draw number c of a walk keyed by k is
mix64(k + (c + 1) * GAMMA), i.e. the c-th output of SplitMix64 seeded
with k.  Direction 2a is +e_{a+1}, direction 2a+1 is -e_{a+1}.
"""

import numpy as np
from numba import njit

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)

OK = 0
NEEDS_GROWTH = 1
BUDGET_EXCEEDED = 2


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def fold(key, value):
    """Derive a child key from `key` and a non-negative integer label."""
    return mix64(key ^ mix64(np.uint64(value) + GAMMA))


@njit(cache=True)
def draw(key, counter):
    return mix64(key + (np.uint64(counter) + _ONE) * GAMMA)


@njit(cache=True)
def uniform01(key, counter):
    return np.float64(draw(key, counter) >> _S11) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def direction(key, counter, twod):
    u = draw(key, counter) >> _S32
    return np.int64((u * np.uint64(twod)) >> _S32)


@njit(cache=True)
def lateral_sup(pos):
    m = 0
    for a in range(1, pos.shape[0]):
        v = abs(pos[a])
        if v > m:
            m = v
    return m


@njit(cache=True)
def flat_index(pos, lo, strides):
    idx = 0
    for a in range(pos.shape[0]):
        idx += (pos[a] - lo[a]) * strides[a]
    return idx


@njit(cache=True)
def fire(occ, line_max, lo, shape, strides, starts, keys, tags, first, pad,
         max_steps, strip_r, tag_visits, tag_counts, exits, steps, visited, record):
    """Launch particles `first..` in order, each walking until it leaves `occ`.

    Each settled site is written into `occ` and `line_max` immediately, so
    particle p sees the aggregate left by particles < p.  Returns
    (next_particle, status, steps_taken).  Status NEEDS_GROWTH means the last
    settled site came within `pad` of the grid edge and the caller must
    enlarge the grid before resuming at next_particle.
    """
    d = starts.shape[1]
    twod = 2 * d
    lat_stride = strides[0]
    pos = np.empty(d, dtype=np.int64)
    total = 0
    for p in range(first, starts.shape[0]):
        for a in range(d):
            pos[a] = starts[p, a]
        idx = flat_index(pos, lo, strides)
        key = keys[p]
        hit = False
        if strip_r >= 0:
            hit = lateral_sup(pos) <= strip_r
        c = 0
        while occ[idx]:
            if c >= max_steps:
                return p, BUDGET_EXCEEDED, total
            k = direction(key, c, twod)
            c += 1
            a = k >> 1
            if k & 1:
                pos[a] -= 1
                idx -= strides[a]
            else:
                pos[a] += 1
                idx += strides[a]
            if strip_r >= 0 and not hit:
                hit = lateral_sup(pos) <= strip_r
        total += c
        occ[idx] = 1
        li = idx % lat_stride
        ax = abs(pos[0])
        if ax > line_max[li]:
            line_max[li] = ax
        t = tags[p]
        tag_counts[t] += 1
        if hit:
            tag_visits[t] += 1
        if record:
            for a in range(d):
                exits[p, a] = pos[a]
            steps[p] = c
            visited[p] = hit
        for a in range(d):
            r = pos[a] - lo[a]
            if r < pad or r > shape[a] - 1 - pad:
                return p + 1, NEEDS_GROWTH, total
    return starts.shape[0], OK, total


@njit(cache=True)
def walk_exit(occ, lo, strides, start, key, max_steps):
    """Walk from `start` until the first unoccupied site; occ is read only.

    Returns (exit_site, steps) with steps = -1 when the budget ran out.
    """
    d = start.shape[0]
    twod = 2 * d
    pos = start.copy()
    idx = flat_index(pos, lo, strides)
    c = 0
    while occ[idx]:
        if c >= max_steps:
            return pos, -1
        k = direction(key, c, twod)
        c += 1
        a = k >> 1
        if k & 1:
            pos[a] -= 1
            idx -= strides[a]
        else:
            pos[a] += 1
            idx += strides[a]
    return pos, c


@njit(cache=True)
def sample_exits(occ, lo, strides, start, base_key, count, max_steps):
    """Exit sites of `count` independent walks from `start`, keyed fold(base_key, i)."""
    d = start.shape[0]
    out = np.empty((count, d), dtype=np.int64)
    for i in range(count):
        pos, c = walk_exit(occ, lo, strides, start, fold(base_key, i), max_steps)
        if c < 0:
            return out[:i], False
        out[i, :] = pos
    return out, True


@njit(cache=True)
def replay(start, key, nsteps):
    """The first `nsteps` steps of the walk keyed by `key`, as an (nsteps+1, d) path."""
    d = start.shape[0]
    twod = 2 * d
    path = np.empty((nsteps + 1, d), dtype=np.int64)
    path[0, :] = start
    for c in range(nsteps):
        k = direction(key, c, twod)
        a = k >> 1
        for b in range(d):
            path[c + 1, b] = path[c, b]
        if k & 1:
            path[c + 1, a] -= 1
        else:
            path[c + 1, a] += 1
    return path


@njit(cache=True)
def walk_to_slab_border(start, key, h, max_steps):
    """Walk until |z_1| >= h (first hit of the slab border when starting inside).

    Returns (site, steps); steps = -1 on budget exhaustion.
    """
    d = start.shape[0]
    twod = 2 * d
    pos = start.copy()
    c = 0
    while abs(pos[0]) < h:
        if c >= max_steps:
            return pos, -1
        k = direction(key, c, twod)
        c += 1
        a = k >> 1
        if k & 1:
            pos[a] -= 1
        else:
            pos[a] += 1
    return pos, c


@njit(cache=True)
def walk_exit_ball(start, center, r, key, max_steps):
    """Walk until the sup distance to `center` exceeds r; returns (site, steps)."""
    d = start.shape[0]
    twod = 2 * d
    pos = start.copy()
    c = 0
    while True:
        inside = True
        for a in range(d):
            if abs(pos[a] - center[a]) > r:
                inside = False
                break
        if not inside:
            return pos, c
        if c >= max_steps:
            return pos, -1
        k = direction(key, c, twod)
        c += 1
        a = k >> 1
        if k & 1:
            pos[a] -= 1
        else:
            pos[a] += 1


@njit(cache=True)
def ball_exit_batch(center, starts, r, base_key, max_steps):
    n = starts.shape[0]
    d = starts.shape[1]
    out = np.empty((n, d), dtype=np.int64)
    for i in range(n):
        pos, c = walk_exit_ball(starts[i], center, r, fold(base_key, i), max_steps)
        if c < 0:
            return out[:i], False
        out[i, :] = pos
    return out, True


@njit(cache=True)
def tile_hits(starts, base_key, h, tile_lo, tile_hi, max_steps):
    """For walk i from starts[i], whether its first hit of |z_1| = h lies in the box [tile_lo, tile_hi]."""
    n = starts.shape[0]
    d = starts.shape[1]
    hits = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        pos, c = walk_to_slab_border(starts[i], fold(base_key, i), h, max_steps)
        if c < 0:
            return hits, i
        inside = True
        for a in range(d):
            if pos[a] < tile_lo[a] or pos[a] > tile_hi[a]:
                inside = False
                break
        hits[i] = inside
    return hits, n


# -- donut crossings -------------------------------------------------------
#
# radii_floor[i] = floor(l_i) for i = 0..k, half[i] = floor(eps * l_i).
# A site is in donut i when |z_1| <= half[i] and radii_floor[i+1] < rho <= radii_floor[i]
# (rho = lateral sup norm); it reaches the inner ring of donut i when
# rho <= radii_floor[i+1] and |z_1| <= half[i].


@njit(cache=True)
def _in_donut(x, rho, i, radii_floor, half):
    return x <= half[i] and rho <= radii_floor[i] and rho > radii_floor[i + 1]


@njit(cache=True)
def crossing_scan(path, eps_num, eps_den, radii_floor, half, kc):
    """Number of donuts crossed by a recorded path, staying inside the cone."""
    i = 0
    armed = False
    prev_rho = -1
    for t in range(path.shape[0]):
        x = abs(path[t, 0])
        rho = lateral_sup(path[t])
        if x * eps_den > eps_num * rho:
            break
        if i >= kc:
            break
        if armed:
            if rho <= radii_floor[i + 1] and x <= half[i]:
                i += 1
                if i >= kc:
                    break
                armed = _in_donut(x, rho, i, radii_floor, half)
            elif not _in_donut(x, rho, i, radii_floor, half):
                armed = False
        else:
            if _in_donut(x, rho, i, radii_floor, half):
                if t == 0:
                    armed = rho == radii_floor[i]
                else:
                    armed = prev_rho > radii_floor[i]
        prev_rho = rho
    return i


@njit(cache=True)
def crossing_walks(starts, base_key, eps_num, eps_den, radii_floor, half, kc,
                   cutoff, max_steps, out, censored):
    """Online version of `crossing_scan` for free walks; no path is stored.

    A walk stops when it leaves the cone, completes kc crossings, or its
    lateral radius exceeds `cutoff` (counted in censored[i]).
    """
    n = starts.shape[0]
    d = starts.shape[1]
    twod = 2 * d
    pos = np.empty(d, dtype=np.int64)
    for w in range(n):
        key = fold(base_key, w)
        for a in range(d):
            pos[a] = starts[w, a]
        i = 0
        armed = False
        prev_rho = -1
        c = 0
        while True:
            x = abs(pos[0])
            rho = lateral_sup(pos)
            if x * eps_den > eps_num * rho:
                break
            if i >= kc:
                break
            if armed:
                if rho <= radii_floor[i + 1] and x <= half[i]:
                    i += 1
                    if i >= kc:
                        break
                    armed = _in_donut(x, rho, i, radii_floor, half)
                elif not _in_donut(x, rho, i, radii_floor, half):
                    armed = False
            else:
                if _in_donut(x, rho, i, radii_floor, half):
                    if c == 0:
                        armed = rho == radii_floor[i]
                    else:
                        armed = prev_rho > radii_floor[i]
            prev_rho = rho
            if rho > cutoff:
                censored[w] = True
                break
            if c >= max_steps:
                return w
            k = direction(key, c, twod)
            c += 1
            a = k >> 1
            if k & 1:
                pos[a] -= 1
            else:
                pos[a] += 1
        out[w] = i
    return n


@njit(cache=True)
def particle_keys(prefix, first_source, n_sources, n):
    """Walk keys fold(fold(prefix, s), i) for sources first_source.. and particles 0..n-1, source-major."""
    out = np.empty(n_sources * n, dtype=np.uint64)
    for s in range(n_sources):
        ks = fold(prefix, first_source + s)
        for i in range(n):
            out[s * n + i] = fold(ks, i)
    return out


@njit(cache=True)
def clock_values(keys, label):
    out = np.empty(keys.shape[0], dtype=np.float64)
    for i in range(keys.shape[0]):
        out[i] = uniform01(fold(keys[i], label), 0)
    return out
