"""Two-chart stereographic atlas of the unit sphere.

The north chart projects from the north pole, ``P_N(p) = (x + iy) / (1 - z)``,
and covers the lower hemisphere with the unit disk. The south chart projects
from the south pole with a conjugation, ``P_S(p) = (x - iy) / (1 + z)``, so that
``P_S o P_N^-1 (z) = 1 / z`` and both charts induce the same orientation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh, locate_barycentric, interpolate


class ChartError(ValueError):
    pass


class ChartId(enum.Enum):
    NORTH = "north"
    SOUTH = "south"


def _as_points(p):
    p = np.asarray(p, dtype=float)
    return p.reshape(-1, 3), p.ndim == 1


def stereo_north(p, tol: float = 1e-9):
    """Projection from the north pole; the south pole maps to 0."""
    q, single = _as_points(p)
    if np.any(np.abs(np.linalg.norm(q, axis=1) - 1) > tol):
        raise ChartError("point not on the unit sphere")
    denom = 1.0 - q[:, 2]
    if np.any(denom <= tol):
        raise ChartError("projection singular at the north pole")
    w = (q[:, 0] + 1j * q[:, 1]) / denom
    return w[0] if single else w


def stereo_south(p, tol: float = 1e-9):
    """Conjugated projection from the south pole; the north pole maps to 0."""
    q, single = _as_points(p)
    if np.any(np.abs(np.linalg.norm(q, axis=1) - 1) > tol):
        raise ChartError("point not on the unit sphere")
    denom = 1.0 + q[:, 2]
    if np.any(denom <= tol):
        raise ChartError("projection singular at the south pole")
    w = (q[:, 0] - 1j * q[:, 1]) / denom
    return w[0] if single else w


def stereo_north_inv(z):
    z = np.asarray(z, dtype=complex)
    a, b = z.real, z.imag
    s = a * a + b * b
    out = np.stack([2 * a, 2 * b, s - 1], axis=-1) / (s + 1)[..., None]
    return out


def stereo_south_inv(z):
    z = np.asarray(z, dtype=complex)
    a, b = z.real, z.imag
    s = a * a + b * b
    return np.stack([2 * a, -2 * b, 1 - s], axis=-1) / (s + 1)[..., None]


def lift_jacobian(z, chart: ChartId):
    """Derivatives of the inverse projection w.r.t. Re z and Im z, each ``(n, 3)``."""
    z = np.asarray(z, dtype=complex)
    a, b = z.real, z.imag
    s = a * a + b * b
    d = (s + 1) ** 2
    if chart is ChartId.NORTH:
        dXa = np.stack([2 * (s + 1) - 4 * a * a, -4 * a * b, 4 * a], axis=-1) / d[..., None]
        dXb = np.stack([-4 * a * b, 2 * (s + 1) - 4 * b * b, 4 * b], axis=-1) / d[..., None]
    else:
        dXa = np.stack([2 * (s + 1) - 4 * a * a, 4 * a * b, -4 * a], axis=-1) / d[..., None]
        dXb = np.stack([-4 * a * b, 4 * b * b - 2 * (s + 1), -4 * b], axis=-1) / d[..., None]
    return dXa, dXb


def lift(z, chart: ChartId):
    return stereo_north_inv(z) if chart is ChartId.NORTH else stereo_south_inv(z)


def project(p, chart: ChartId):
    return stereo_north(p) if chart is ChartId.NORTH else stereo_south(p)


def lift_vjp(z, grad_x, chart: ChartId):
    """Pull a gradient on lifted 3D points back to a complex chart gradient."""
    dXa, dXb = lift_jacobian(z, chart)
    return np.einsum("...i,...i", dXa, grad_x) + 1j * np.einsum("...i,...i", dXb, grad_x)


def transition(z):
    """Chart change ``P_S o P_N^-1``, i.e. ``z -> 1/z``."""
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise ChartError("transition undefined at 0")
    out = 1.0 / z
    return out[()] if out.ndim == 0 else out


def split_hemispheres(sphere: TriMesh, tol: float = 1e-12):
    """Vertex indices with ``z >= 0`` and ``z <= 0``; equator vertices are in both."""
    z = sphere.vertices[:, 2]
    upper = np.flatnonzero(z >= -tol)
    lower = np.flatnonzero(z <= tol)
    return upper, lower


def transform_bc(mu_at_transition, z):
    """South-chart coefficient from the north value at ``1/z``: ``mu_N(1/z) (z / conj z)^2``."""
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise ChartError("transform_bc undefined at 0")
    phase = z / np.conj(z)
    out = np.asarray(mu_at_transition) * phase * phase
    return out[()] if out.ndim == 0 else out


@dataclass
class SbdPair:
    """Per-vertex north and south coefficient fields on the standard disk mesh."""

    mu_north: np.ndarray
    mu_south: np.ndarray
    disk: TriMesh
    overlap_tolerance: float = 1e-2

    def __post_init__(self):
        self.mu_north = np.asarray(self.mu_north, dtype=complex)
        self.mu_south = np.asarray(self.mu_south, dtype=complex)
        if max(np.abs(self.mu_north).max(), np.abs(self.mu_south).max()) >= 1:
            raise ChartError("Beltrami coefficients must have modulus < 1")


def _sample(disk: TriMesh, mu_v, points):
    # radial clamp extends the chart field constantly beyond the unit circle
    r = np.abs(points)
    clamped = np.where(r > 1, points / np.maximum(r, 1e-300), points)
    # the polygonal boundary sits inside the unit circle by at most this gap
    n_bdry = np.count_nonzero(np.abs(np.abs(disk.complex_vertices) - 1) < 1e-12)
    gap = 1 - np.cos(np.pi / max(n_bdry, 3))
    return interpolate(locate_barycentric(disk, clamped, tol=gap + 1e-9), mu_v)


def check_sbd_compatibility(pair: SbdPair, band=(0.8, 1.0)) -> float:
    """Max ``|mu_S(z) - transform_bc(mu_N(1/z), z)|`` over south-chart face centroids in ``band``.

    Points whose transition image falls outside the north disk are evaluated by
    radially clamping onto the unit circle.
    """
    r_in, r_out = band
    if not 0 < r_in <= r_out <= 1:
        raise ChartError("overlap band must lie inside the unit disk")
    disk = pair.disk
    cz = disk.complex_vertices[disk.faces].mean(axis=1)
    r = np.abs(cz)
    z = cz[(r >= r_in) & (r <= r_out)]
    if len(z) == 0:
        raise ChartError("no sample points in the overlap band")
    mu_s = _sample(disk, pair.mu_south, z)
    mu_n = _sample(disk, pair.mu_north, 1.0 / z)
    return float(np.max(np.abs(mu_s - transform_bc(mu_n, z))))
