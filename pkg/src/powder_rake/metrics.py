"""Powder-layer quality fields.

The reference volume of a cell is the prism between the substrate
(``z = 0``) and the nominal layer height ``t0`` over the cell footprint.
Each sphere's volume inside that slab is computed exactly from spherical
caps.  Its split between footprint cells integrates the clipped vertical
chord: exactly across ``y``, by Gauss-Legendre quadrature across ``x``.
The split is normalised so every sphere deposits exactly its slab volume.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import MeasurementError

FCC_LIMIT = math.pi / (3.0 * math.sqrt(2.0))


@dataclass(frozen=True)
class Region:
    """Axis-aligned evaluation footprint in the substrate plane."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_hi > self.x_lo and self.y_hi > self.y_lo):
            raise MeasurementError("empty evaluation region")

    @property
    def area(self) -> float:
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)


@dataclass(frozen=True)
class LayerMetrics:
    spacing: float
    region: Region
    t0: float
    d_max0: float
    phi: np.ndarray  # (nx, ny)
    z_int: np.ndarray  # (nx, ny)
    cell_area: np.ndarray  # (nx, ny)
    phi_mean: float
    phi_std: float
    zint_mean_rel: float  # <z_int>/t0
    zint_std_rel: float  # std(z_int)/d_max0

    def summary(self) -> dict:
        return {"phi_mean": self.phi_mean, "phi_std": self.phi_std,
                "zint_mean": self.zint_mean_rel, "zint_std": self.zint_std_rel}


def _edges(lo, hi, spacing):
    n = max(1, int(math.ceil((hi - lo) / spacing - 1e-9)))
    e = lo + spacing * np.arange(n + 1)
    e[-1] = hi
    return e


@njit(cache=True)
def slab_volume(zc, r, z_lo, z_hi):
    """Volume of a sphere (centre height ``zc``) between two planes."""
    a = max(z_lo, zc - r)
    b = min(z_hi, zc + r)
    if b <= a:
        return 0.0
    # integral of pi*(r^2 - (z-zc)^2) dz
    ua = a - zc
    ub = b - zc
    return np.pi * (r * r * (ub - ua) - (ub ** 3 - ua ** 3) / 3.0)


@njit(cache=True)
def _segment(y, rho):
    """Integral of ``sqrt(rho^2 - t^2)`` for ``t`` from 0 to ``y``."""
    return 0.5 * (y * np.sqrt(max(rho * rho - y * y, 0.0)) + rho * rho * np.arcsin(y / rho))


@njit(cache=True)
def _capped_half_chord(y0, y1, rho, s):
    """Integral over ``[y0, y1]`` of ``min(sqrt(rho^2 - y^2), s)`` for ``s >= 0``."""
    a = max(y0, -rho)
    b = min(y1, rho)
    if b <= a:
        return 0.0
    v = _segment(b, rho) - _segment(a, rho)
    if s < rho:
        ys = np.sqrt(rho * rho - s * s)
        c = max(a, -ys)
        d = min(b, ys)
        if d > c:
            v -= (_segment(d, rho) - _segment(c, rho)) - s * (d - c)
    return v


@njit(cache=True)
def _strip(y0, y1, rho, above, below):
    """Integral over ``y`` of the slab-clipped chord on the line at in-plane
    half-width ``rho``; ``above``/``below`` are the distances from the centre
    to the slab top and bottom (negative when the centre lies outside)."""
    v = 0.0
    for s in (above, below):
        if s >= 0.0:
            v += _capped_half_chord(y0, y1, rho, s)
        else:
            v -= _capped_half_chord(y0, y1, rho, -s)
    return v


@njit(cache=True)
def _column_volume(xa, xb, ya, yb, xc, yc, r, above, below, nodes, weights):
    """Sphere volume inside the slab over the rectangle ``[xa,xb] x [ya,yb]``.

    Exact in ``y``; Gauss-Legendre in ``x = xc + s sin(theta)`` where ``s``
    is the radius of the sphere's footprint within the slab.
    """
    d = max(0.0, -above, -below)
    if d >= r:
        return 0.0
    s = np.sqrt(r * r - d * d)
    lo = max(xa, xc - s)
    hi = min(xb, xc + s)
    if hi <= lo or yb <= ya:
        return 0.0
    t0 = np.arcsin(max(-1.0, (lo - xc) / s))
    t1 = np.arcsin(min(1.0, (hi - xc) / s))
    half = 0.5 * (t1 - t0)
    mid = 0.5 * (t1 + t0)
    v = 0.0
    for k in range(nodes.shape[0]):
        th = mid + half * nodes[k]
        dx = s * np.sin(th)
        rho2 = r * r - dx * dx
        if rho2 <= 0.0:
            continue
        v += weights[k] * np.cos(th) * _strip(ya - yc, yb - yc, np.sqrt(rho2), above, below)
    return v * half * s


@njit(cache=True)
def _phi_kernel(pos, rad, x_lo, x_hi, y_lo, y_hi, h, t0, nodes, weights, period_y):
    """Slab volume per cell on a uniform grid anchored at (x_lo, y_lo).

    Each sphere deposits exactly its slab volume, split between footprint
    cells in proportion to the integrated column volume; parts outside a
    non-periodic region are dropped.
    """
    nx = int(np.ceil((x_hi - x_lo) / h - 1e-9))
    ny = int(np.ceil((y_hi - y_lo) / h - 1e-9))
    vol = np.zeros((nx, ny))
    for p in range(pos.shape[0]):
        xc, yc, zc, r = pos[p, 0], pos[p, 1], pos[p, 2], rad[p]
        v_slab = slab_volume(zc, r, 0.0, t0)
        if v_slab <= 0.0:
            continue
        above = t0 - zc
        below = zc
        i0 = int(np.floor((xc - r - x_lo) / h))
        i1 = int(np.floor((xc + r - x_lo) / h))
        j0 = int(np.floor((yc - r - y_lo) / h))
        j1 = int(np.floor((yc + r - y_lo) / h))
        ni = i1 - i0 + 1
        nj = j1 - j0 + 1
        w = np.zeros((ni, nj))
        total = 0.0
        for ii in range(ni):
            xa = x_lo + (i0 + ii) * h
            xb = xa + h
            # part of the cell inside the region (empty for outside cells)
            xa_in = max(xa, x_lo)
            xb_in = min(xb, x_hi)
            for jj in range(nj):
                ya = y_lo + (j0 + jj) * h
                yb = ya + h
                c = _column_volume(xa, xb, ya, yb, xc, yc, r, above, below, nodes, weights)
                if c <= 0.0:
                    continue
                total += c
                ya_in, yb_in = ya, yb
                if not period_y:
                    ya_in = max(ya, y_lo)
                    yb_in = min(yb, y_hi)
                if xb_in <= xa_in or yb_in <= ya_in:
                    continue
                if xa_in == xa and xb_in == xb and ya_in == ya and yb_in == yb:
                    w[ii, jj] = c
                else:
                    w[ii, jj] = _column_volume(xa_in, xb_in, ya_in, yb_in, xc, yc, r,
                                               above, below, nodes, weights)
        if total <= 0.0:
            # quadrature missed a sliver: credit the sphere's own cell
            if xc < x_lo or xc >= x_hi or (not period_y and (yc < y_lo or yc >= y_hi)):
                continue
            w[int(np.floor((xc - x_lo) / h)) - i0, int(np.floor((yc - y_lo) / h)) - j0] = 1.0
            total = 1.0
        for ii in range(ni):
            i = i0 + ii
            if i < 0 or i >= nx:
                continue
            for jj in range(nj):
                if w[ii, jj] == 0.0:
                    continue
                j = j0 + jj
                if period_y:
                    j = j % ny
                elif j < 0 or j >= ny:
                    continue
                vol[i, j] += v_slab * w[ii, jj] / total
    return vol


def _active_arrays(particles):
    p = particles.only_active() if len(particles) else particles
    return np.ascontiguousarray(p.position, float), np.ascontiguousarray(p.radius, float)


def packing_fraction_field(particles, region: Region, t0: float, spacing: float,
                           nodes: int = 8, periodic_y: bool = False):
    """Per-cell solid fraction of the prism ``[0, t0]`` over each cell.

    Returns ``(phi, x_edges, y_edges)``.  ``nodes`` is the Gauss-Legendre
    order across ``x`` per cell.  With ``periodic_y`` the region must span
    exactly one period in y (a whole number of cells) and spheres wrap
    across it.
    """
    if t0 <= 0 or spacing <= 0:
        raise MeasurementError("t0 and grid spacing must be positive")
    xe = _edges(region.x_lo, region.x_hi, spacing)
    ye = _edges(region.y_lo, region.y_hi, spacing)
    if periodic_y and not np.allclose(np.diff(ye), spacing, rtol=1e-9, atol=0):
        raise MeasurementError("periodic y needs a width that is a multiple of the spacing")
    pos, rad = _active_arrays(particles)
    area = np.outer(np.diff(xe), np.diff(ye))
    if len(rad) == 0:
        return np.zeros(area.shape), xe, ye
    gx, gw = np.polynomial.legendre.leggauss(int(nodes))
    vol = _phi_kernel(pos, rad, region.x_lo, region.x_hi, region.y_lo, region.y_hi,
                      float(spacing), float(t0), gx, gw, bool(periodic_y))
    return vol / (area * t0), xe, ye


@njit(cache=True)
def _zint_kernel(pos, rad, xe, ye, period_y):
    nx = xe.shape[0] - 1
    ny = ye.shape[0] - 1
    z = np.zeros((nx, ny))
    for p in range(pos.shape[0]):
        xc, yc, r = pos[p, 0], pos[p, 1], rad[p]
        top = pos[p, 2] + r
        for i in range(nx):
            if xe[i + 1] < xc - r or xe[i] > xc + r:
                continue
            qx = min(max(xc, xe[i]), xe[i + 1])
            for j in range(ny):
                dy_min = 0.0
                if period_y:
                    L = ye[-1] - ye[0]
                    best = np.inf
                    for shift in (-L, 0.0, L):
                        y = yc + shift
                        qy = min(max(y, ye[j]), ye[j + 1])
                        d = (qy - y) ** 2
                        if d < best:
                            best = d
                    dy_min = best
                else:
                    qy = min(max(yc, ye[j]), ye[j + 1])
                    dy_min = (qy - yc) ** 2
                if (qx - xc) ** 2 + dy_min <= r * r and top > z[i, j]:
                    z[i, j] = top
    return z


def surface_profile(particles, region: Region, spacing: float, periodic_y: bool = False):
    """Per-cell height of the highest sphere whose footprint touches the cell.

    Bare cells report 0.  Returns ``(z_int, x_edges, y_edges)``.
    """
    if spacing <= 0:
        raise MeasurementError("grid spacing must be positive")
    xe = _edges(region.x_lo, region.x_hi, spacing)
    ye = _edges(region.y_lo, region.y_hi, spacing)
    pos, rad = _active_arrays(particles)
    if len(rad) == 0:
        return np.zeros((len(xe) - 1, len(ye) - 1)), xe, ye
    # restrict the O(cells) loop to spheres near the region
    near = ((pos[:, 0] + rad >= region.x_lo) & (pos[:, 0] - rad <= region.x_hi))
    if not periodic_y:
        near &= (pos[:, 1] + rad >= region.y_lo) & (pos[:, 1] - rad <= region.y_hi)
    z = _zint_kernel(np.ascontiguousarray(pos[near]), np.ascontiguousarray(rad[near]),
                     xe, ye, bool(periodic_y))
    return np.maximum(z, 0.0), xe, ye


def weighted_stats(field: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Area-weighted mean and population standard deviation."""
    w = np.asarray(weights, float).ravel()
    f = np.asarray(field, float).ravel()
    mean = float(np.sum(w * f) / np.sum(w))
    var = float(np.sum(w * (f - mean) ** 2) / np.sum(w))
    return mean, math.sqrt(max(var, 0.0))


def summarize(phi, z_int, cell_area, t0: float, d_max0: float) -> dict:
    """Table-style summaries: <phi>, std(phi), <z_int>/t0, std(z_int)/d_max0."""
    pm, ps = weighted_stats(phi, cell_area)
    zm, zs = weighted_stats(z_int, cell_area)
    return {"phi_mean": pm, "phi_std": ps, "zint_mean": zm / t0, "zint_std": zs / d_max0}


def layer_metrics(particles, region: Region, t0: float, d_max0: float,
                  spacing: float | None = None, nodes: int = 8,
                  periodic_y: bool = False) -> LayerMetrics:
    spacing = d_max0 if spacing is None else spacing
    phi, xe, ye = packing_fraction_field(particles, region, t0, spacing, nodes, periodic_y)
    z_int, _, _ = surface_profile(particles, region, spacing, periodic_y)
    area = np.outer(np.diff(xe), np.diff(ye))
    s = summarize(phi, z_int, area, t0, d_max0)
    return LayerMetrics(spacing, region, t0, d_max0, phi, z_int, area,
                        s["phi_mean"], s["phi_std"], s["zint_mean"], s["zint_std"])


def write_field_csv(field: np.ndarray, path, *, spacing: float, region: Region,
                    t0: float, name: str) -> Path:
    """CSV matrix (rows = x cells, columns = y cells) with a metadata header."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# field={name} spacing={spacing!r} t0={t0!r} "
                 f"x_lo={region.x_lo!r} x_hi={region.x_hi!r} "
                 f"y_lo={region.y_lo!r} y_hi={region.y_hi!r}\n")
        w = csv.writer(fh)
        for row in np.asarray(field):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_field_csv(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with path.open() as fh:
        meta_line = fh.readline().lstrip("#").split()
        meta = dict(kv.split("=", 1) for kv in meta_line)
        rows = [list(map(float, r)) for r in csv.reader(fh) if r]
    return np.array(rows), meta
