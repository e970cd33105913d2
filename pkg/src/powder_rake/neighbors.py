"""Linked-cell broad phase.

Candidate pairs are every active pair whose surface gap is below a given
``extra`` distance (the adhesion cut-off plus a Verlet skin inside the
integrator).  Pairs come back as sorted ``(i, j)`` with ``i < j`` so that
force reduction order is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@njit(cache=True)
def _cell_coords(pos, active, lo, cell, nc):
    n = pos.shape[0]
    cc = np.zeros((n, 3), np.int64)
    for i in range(n):
        if not active[i]:
            continue
        for a in range(3):
            c = int(np.floor((pos[i, a] - lo[a]) / cell[a]))
            # clamping is monotone, so neighbouring cells stay neighbours
            cc[i, a] = min(nc[a] - 1, max(0, c))
    return cc


@njit(cache=True)
def _grow(arr, size):
    new = np.empty(max(2 * arr.shape[0], size), arr.dtype)
    new[:arr.shape[0]] = arr
    return new


@njit(cache=True)
def candidate_keys(pos, rad, active, lo, hi, periodic_len, extra):
    """Sorted unique keys ``i*n + j`` (i < j) of pairs with gap < ``extra``."""
    n = pos.shape[0]
    rmax = 0.0
    for i in range(n):
        if active[i] and rad[i] > rmax:
            rmax = rad[i]
    reach = 2.0 * rmax + extra
    nc = np.empty(3, np.int64)
    cell = np.empty(3)
    for a in range(3):
        ext = hi[a] - lo[a]
        nc[a] = max(1, int(ext / reach)) if reach > 0 else 1
        cell[a] = ext / nc[a]
    cc = _cell_coords(pos, active, lo, cell, nc)
    ncell = nc[0] * nc[1] * nc[2]
    head = -np.ones(ncell, np.int64)
    nxt = -np.ones(n, np.int64)
    # insert in descending order so each cell list is ascending
    for i in range(n - 1, -1, -1):
        if active[i]:
            c = (cc[i, 0] * nc[1] + cc[i, 1]) * nc[2] + cc[i, 2]
            nxt[i] = head[c]
            head[c] = i
    keys = np.empty(max(16, 8 * n), np.int64)
    m = 0
    for i in range(n):
        if not active[i]:
            continue
        for dx in range(-1, 2):
            c0 = cc[i, 0] + dx
            if periodic_len[0] > 0:
                c0 %= nc[0]
            elif c0 < 0 or c0 >= nc[0]:
                continue
            for dy in range(-1, 2):
                c1 = cc[i, 1] + dy
                if periodic_len[1] > 0:
                    c1 %= nc[1]
                elif c1 < 0 or c1 >= nc[1]:
                    continue
                for dz in range(-1, 2):
                    c2 = cc[i, 2] + dz
                    if periodic_len[2] > 0:
                        c2 %= nc[2]
                    elif c2 < 0 or c2 >= nc[2]:
                        continue
                    q = head[(c0 * nc[1] + c1) * nc[2] + c2]
                    while q >= 0:
                        if q > i:
                            d2 = 0.0
                            for a in range(3):
                                d = pos[q, a] - pos[i, a]
                                if periodic_len[a] > 0:
                                    d -= periodic_len[a] * np.round(d / periodic_len[a])
                                d2 += d * d
                            lim = rad[i] + rad[q] + extra
                            if d2 < lim * lim:
                                if m >= keys.shape[0]:
                                    keys = _grow(keys, m + 1)
                                keys[m] = i * n + q
                                m += 1
                        q = nxt[q]
    keys = np.sort(keys[:m])
    # small periodic grids can visit a cell twice
    if m > 1:
        u = 1
        for k in range(1, m):
            if keys[k] != keys[u - 1]:
                keys[u] = keys[k]
                u += 1
        keys = keys[:u]
    return keys


@njit(cache=True)
def brute_force_keys(pos, rad, active, periodic_len, extra):
    n = pos.shape[0]
    out = []
    for i in range(n):
        if not active[i]:
            continue
        for j in range(i + 1, n):
            if not active[j]:
                continue
            d2 = 0.0
            for a in range(3):
                d = pos[j, a] - pos[i, a]
                if periodic_len[a] > 0:
                    d -= periodic_len[a] * np.round(d / periodic_len[a])
                d2 += d * d
            lim = rad[i] + rad[j] + extra
            if d2 < lim * lim:
                out.append(i * n + j)
    res = np.empty(len(out), np.int64)
    for k in range(len(out)):
        res[k] = out[k]
    return res


@dataclass(frozen=True)
class NeighborGrid:
    cell_size: np.ndarray
    cells: dict
    pairs: np.ndarray  # (P, 2), sorted, i < j
    extra: float


def _domain(particles, domain_lo, domain_hi):
    if domain_lo is None or domain_hi is None:
        p = particles.position[particles.active]
        pad = 2.0 * float(particles.radius.max())
        return p.min(axis=0) - pad, p.max(axis=0) + pad
    return np.asarray(domain_lo, float), np.asarray(domain_hi, float)


def build_neighbors(particles, extra: float, domain_lo=None, domain_hi=None,
                    periodic=(False, False, False)) -> NeighborGrid:
    """Bin active particles and list every pair with surface gap < ``extra``.

    Periodic axes use the domain extent as period; non-periodic domain
    bounds default to the particles' bounding box.
    """
    n = len(particles)
    if n == 0 or not particles.active.any():
        return NeighborGrid(np.zeros(3), {}, np.zeros((0, 2), np.int64), extra)
    lo, hi = _domain(particles, domain_lo, domain_hi)
    periodic_len = np.where(np.asarray(periodic, bool), hi - lo, 0.0)
    pos = np.ascontiguousarray(particles.position)
    rad = np.ascontiguousarray(particles.radius)
    active = np.ascontiguousarray(particles.active)
    keys = candidate_keys(pos, rad, active, lo, hi, periodic_len, float(extra))
    reach = 2.0 * float(rad[active].max()) + extra
    nc = np.maximum(1, ((hi - lo) / reach).astype(np.int64))
    cell = (hi - lo) / nc
    cc = _cell_coords(pos, active, lo, cell, nc)
    cells: dict = {}
    for i in np.flatnonzero(active):
        cells.setdefault(tuple(int(c) for c in cc[i]), []).append(int(i))
    pairs = np.stack([keys // n, keys % n], axis=1) if len(keys) else np.zeros((0, 2), np.int64)
    return NeighborGrid(cell, cells, pairs, extra)


def brute_force_pairs(particles, extra: float, periodic_len=(0.0, 0.0, 0.0)) -> np.ndarray:
    """O(n^2) reference list of pairs with gap < ``extra``."""
    n = len(particles)
    if n == 0:
        return np.zeros((0, 2), np.int64)
    keys = brute_force_keys(np.ascontiguousarray(particles.position),
                            np.ascontiguousarray(particles.radius),
                            np.ascontiguousarray(particles.active),
                            np.asarray(periodic_len, float), float(extra))
    return np.stack([keys // n, keys % n], axis=1) if len(keys) else np.zeros((0, 2), np.int64)
