"""Synthetic registration cases: landmark twists, I-to-C strip fields, random smooth fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh, icosphere, save_field, save_mesh
from .task import Curve, LandmarkSpec, save_landmarks


@dataclass
class SynthCase:
    name: str
    moving_mesh: TriMesh
    fixed_mesh: TriMesh
    landmarks: LandmarkSpec | None = None
    fields: dict = field(default_factory=dict)

    def write(self, out) -> dict:
        """Write meshes, landmarks, and fields into ``out``; returns the file paths."""
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"moving": out / "moving.off", "fixed": out / "fixed.off"}
        save_mesh(self.moving_mesh, paths["moving"])
        save_mesh(self.fixed_mesh, paths["fixed"])
        if self.landmarks is not None:
            paths["landmarks"] = out / "landmarks.json"
            save_landmarks(self.landmarks, paths["landmarks"])
        for name, values in self.fields.items():
            paths[name] = out / f"{name}.csv"
            save_field(values, paths[name])
        return {k: str(v) for k, v in paths.items()}


def sphere_point(lat, lon) -> np.ndarray:
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def _tangent_frame(c):
    up = np.array([0.0, 0.0, 1.0]) if abs(c[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(up, c)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(c, e1)


def small_circle(center, radius: float, angles) -> np.ndarray:
    """Points at geodesic distance ``radius`` from ``center`` at the given azimuths."""
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    e1, e2 = _tangent_frame(c)
    a = np.asarray(angles, dtype=float)[:, None]
    return np.cos(radius) * c + np.sin(radius) * (np.cos(a) * e1 + np.sin(a) * e2)


def twist_case(n: int = 2, seed: int = 0, radius: float = 0.3, subdivisions: int = 4,
               latitude: float = np.pi / 4) -> SynthCase:
    """``2n`` groups of four landmarks ``A, B, C, D``; each is sent to the next one.

    Groups sit on small circles centred at latitude ``+-latitude`` with
    evenly spaced longitudes (``n`` per hemisphere), randomly jittered, and
    are snapped to vertices of the moving mesh.
    """
    if n not in (2, 3, 4):
        raise ValueError("n must be 2, 3 or 4")
    rng = np.random.default_rng(seed)
    moving, target = [], []
    for hemi in (1.0, -1.0):
        lon0 = rng.uniform(0, 2 * np.pi)
        for k in range(n):
            lon = lon0 + 2 * np.pi * k / n + rng.uniform(-0.1, 0.1)
            lat = hemi * latitude + rng.uniform(-0.05, 0.05)
            phase = rng.uniform(0, 2 * np.pi)
            pts = small_circle(sphere_point(lat, lon), radius, phase + np.pi / 2 * np.arange(4))
            moving.append(pts)
    sphere = icosphere(subdivisions)
    curves = []
    for pts in moving:
        idx = snap_to_vertices(sphere, pts)
        v = sphere.vertices[idx]
        curves.append(Curve(v, np.roll(v, -1, axis=0), moving_indices=idx))
    spec = LandmarkSpec(curves, "l2")
    return SynthCase(f"twist{n}", sphere, sphere, spec)


def snap_to_vertices(mesh: TriMesh, points) -> np.ndarray:
    """Index of the nearest mesh vertex to each point."""
    return cKDTree(mesh.vertices).query(np.asarray(points, dtype=float))[1]


def _soft_indicator(dist, half_width: float, softness: float) -> np.ndarray:
    return 1.0 / (1.0 + np.exp((dist - half_width) / softness))


def i_to_c_case(subdivisions: int = 4, half_width: float = 0.12, softness: float = 0.04,
                landmark_pairs: int = 6) -> SynthCase:
    """A vertical strip ("I") on the moving sphere and a bent strip ("C") on the fixed one.

    Both are smoothed indicator fields in ``[0, 1]``. The ``C`` is a circular
    arc with the same length as the ``I``, centred on the ``I``'s midpoint,
    bowing away from it. Landmark pairs match points spread evenly along the
    two curves.
    """
    sphere = icosphere(subdivisions)
    x = sphere.vertices
    length = 1.6                                   # angular length of the strip
    # I: meridian segment through (1, 0, 0)
    i_pts_t = np.linspace(-length / 2, length / 2, 201)
    i_curve = sphere_point(i_pts_t, 0.0)
    # C: arc of radius rho about a centre to the -y side of (1, 0, 0)
    rho = 0.55
    span = length / (2 * np.sin(rho))
    center = sphere_point(0.0, -rho)
    c_curve = small_circle(center, rho, np.linspace(-span, span, 201) + _azimuth_of(center, sphere_point(0.0, 0.0)))
    d_c = _polyline_distance(x, c_curve)
    d_i = _polyline_distance(x, i_curve)
    moving = _soft_indicator(d_i, half_width, softness)
    fixed = _soft_indicator(d_c, half_width, softness)
    spec = None
    if landmark_pairs:
        idx = np.linspace(0, 200, landmark_pairs).round().astype(int)
        mi = snap_to_vertices(sphere, i_curve[idx])
        ti = snap_to_vertices(sphere, c_curve[idx])
        spec = LandmarkSpec([Curve(x[mi], x[ti], moving_indices=mi)], "l2")
    return SynthCase("i_to_c", sphere, sphere, spec, {"moving": moving, "fixed": fixed})


def _azimuth_of(center, p) -> float:
    e1, e2 = _tangent_frame(np.asarray(center, dtype=float))
    return float(np.arctan2(p @ e2, p @ e1))


def _polyline_distance(x, curve) -> np.ndarray:
    """Angular distance from each point to a densely sampled curve."""
    d, _ = cKDTree(curve).query(x)
    return 2 * np.arcsin(np.clip(d / 2, 0, 1))


def random_smooth_field(subdivisions: int = 4, seed: int = 0, n_bumps: int = 12,
                        width: float = 0.4) -> SynthCase:
    """Sum of random spherical Gaussian bumps; moving and fixed share the field."""
    rng = np.random.default_rng(seed)
    sphere = icosphere(subdivisions)
    c = rng.normal(size=(n_bumps, 3))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    amp = rng.uniform(-1, 1, n_bumps)
    ang = np.arccos(np.clip(sphere.vertices @ c.T, -1, 1))
    f = np.exp(-(ang / width) ** 2) @ amp
    f = (f - f.min()) / (f.max() - f.min())
    return SynthCase("random_smooth", sphere, sphere, None, {"moving": f, "fixed": f.copy()})
