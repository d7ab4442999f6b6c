"""Least-squares quasiconformal (LSQC) maps of planar triangle meshes.

For a piecewise-linear map ``U`` and piecewise-constant coefficient ``mu`` the
discrete energy is

    E(U) = sum_T |sum_j W_jT U_jT|^2 / d_T,
    W_1 = (1 + mu)(x_3 - x_2) + i (1 - mu)(y_3 - y_2)   (and cyclic),

with ``d_T`` twice the triangle area. Pinning two vertices makes the
minimizer unique.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh

ADMISSIBLE_MARGIN = 1e-6


class LsqcError(ValueError):
    pass


class Site(enum.Enum):
    VERTEX = "vertex"
    FACE = "face"


@dataclass
class BeltramiField:
    """Complex coefficient per vertex or per face of a planar mesh."""

    values: np.ndarray
    site: Site = Site.FACE
    mesh: TriMesh | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if not np.all(np.isfinite(self.values)):
            raise LsqcError("Beltrami coefficients must be finite")
        if self.mesh is not None:
            n = self.mesh.n_vertices if self.site is Site.VERTEX else self.mesh.n_faces
            if len(self.values) != n:
                raise LsqcError(f"expected {n} {self.site.value} values, got {len(self.values)}")

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values), initial=0.0))


def _values(mu) -> np.ndarray:
    if isinstance(mu, BeltramiField):
        return mu.values
    return np.asarray(mu, dtype=complex)


def face_geometry(mesh2d: TriMesh):
    """Per-face edge coordinates and ``d_T``.

    Returns ``(dx, dy, d)`` where ``dx[:, j] = x_{j+2} - x_{j+1}`` and
    ``dy[:, j] = y_{j+2} - y_{j+1}`` (indices mod 3), so that
    ``W_j = (1 + mu) dx_j + i (1 - mu) dy_j``.
    """
    p = mesh2d.vertices[mesh2d.faces]
    x, y = p[..., 0], p[..., 1]
    dx = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
    dy = np.roll(y, -2, axis=1) - np.roll(y, -1, axis=1)
    d = (x[:, 0] * y[:, 1] - y[:, 0] * x[:, 1]) + (x[:, 1] * y[:, 2] - y[:, 1] * x[:, 2]) \
        + (x[:, 2] * y[:, 0] - y[:, 2] * x[:, 0])
    return dx, dy, d


def wirtinger(mesh2d: TriMesh, positions):
    """Per-face ``(f_z, f_zbar)`` of the piecewise-linear map ``positions``."""
    dx, dy, d = face_geometry(mesh2d)
    if np.any(d == 0):
        raise LsqcError(f"degenerate source triangle {int(np.flatnonzero(d == 0)[0])}")
    U = np.asarray(positions, dtype=complex)[mesh2d.faces]
    fx = np.sum(-dy * U, axis=1) / d
    fy = np.sum(dx * U, axis=1) / d
    return 0.5 * (fx - 1j * fy), 0.5 * (fx + 1j * fy)


def bc_from_map(mesh2d: TriMesh, positions) -> BeltramiField:
    """Per-face Beltrami coefficient ``f_zbar / f_z`` of a piecewise-linear map."""
    fz, fzb = wirtinger(mesh2d, _values(positions))
    bad = np.abs(fz) <= 1e-300
    if bad.any():
        raise LsqcError(f"degenerate conformal factor on face {int(np.flatnonzero(bad)[0])}")
    return BeltramiField(fzb / fz, Site.FACE, mesh2d)


def face_bc_from_vertex_bc(mesh2d: TriMesh, mu_v) -> BeltramiField:
    """Face coefficient as the mean of its three vertex coefficients."""
    v = _values(mu_v)
    return BeltramiField(v[mesh2d.faces].mean(axis=1), Site.FACE, mesh2d)


def stencil(mesh2d: TriMesh, mu_face):
    """Row-weighted coefficients ``W_jT / sqrt|d_T|`` and ``dW/dmu`` per face, both ``(F, 3)``."""
    dx, dy, d = face_geometry(mesh2d)
    if np.any(d == 0):
        raise LsqcError(f"degenerate source triangle {int(np.flatnonzero(d == 0)[0])}")
    mu = _values(mu_face)[:, None]
    scale = 1.0 / np.sqrt(np.abs(d))[:, None]
    W = ((1 + mu) * dx + 1j * (1 - mu) * dy) * scale
    dW = (dx - 1j * dy) * scale
    return W, dW


@dataclass
class LsqcSystem:
    """Assembled LSQC problem with two pinned vertices."""

    mesh: TriMesh
    mu: np.ndarray
    pins: np.ndarray
    targets: np.ndarray
    M: sp.csr_matrix
    free: np.ndarray
    _normal: sp.csc_matrix | None = field(default=None, repr=False)

    @property
    def M_free(self) -> sp.csr_matrix:
        return self.M[:, self.free]

    @property
    def M_pinned(self) -> sp.csr_matrix:
        return self.M[:, self.pins]

    @property
    def A(self) -> sp.csr_matrix:
        """Real block matrix ``[[M_f^1, -M_f^2], [M_f^2, M_f^1]]``."""
        Mf = self.M_free
        return sp.bmat([[Mf.real, -Mf.imag], [Mf.imag, Mf.real]]).tocsr()

    @property
    def b(self) -> np.ndarray:
        Mp = self.M_pinned
        Bp = sp.bmat([[Mp.real, -Mp.imag], [Mp.imag, Mp.real]])
        return -(Bp @ np.concatenate([self.targets.real, self.targets.imag]))

    @property
    def normal(self) -> sp.csc_matrix:
        """Hermitian normal matrix ``M_f^H M_f`` (complex form of ``A^T A``)."""
        if self._normal is None:
            Mf = self.M_free
            self._normal = (Mf.conj().T @ Mf).tocsc()
        return self._normal

    @property
    def rhs(self) -> np.ndarray:
        """Complex form of ``A^T b``."""
        return -(self.M_free.conj().T @ (self.M_pinned @ self.targets))


def assemble(mesh2d: TriMesh, mu, pins) -> LsqcSystem:
    """Build the LSQC system for face coefficients ``mu`` and two ``(vertex, target)`` pins."""
    mu = _values(mu)
    if len(mu) != mesh2d.n_faces:
        raise LsqcError("mu must have one value per face")
    over = np.abs(mu) >= 1 - ADMISSIBLE_MARGIN
    if over.any():
        raise LsqcError(f"|mu| >= 1 - {ADMISSIBLE_MARGIN:g} on face {int(np.flatnonzero(over)[0])}")
    (i1, q1), (i2, q2) = pins
    idx = np.array([int(i1), int(i2)])
    if idx[0] == idx[1]:
        raise LsqcError("coincident pins")
    W, _ = stencil(mesh2d, mu)
    F = mesh2d.n_faces
    M = sp.csr_matrix(
        (W.ravel(), (np.repeat(np.arange(F), 3), mesh2d.faces.ravel())),
        shape=(F, mesh2d.n_vertices),
    )
    free = np.setdiff1d(np.arange(mesh2d.n_vertices), idx)
    return LsqcSystem(mesh2d, mu, idx, np.array([q1, q2], dtype=complex), M, free)


class Factor:
    """Solver for the Hermitian normal matrix: sparse LU, or Jacobi-preconditioned CG."""

    def __init__(self, normal: sp.csc_matrix, max_direct: int = 250_000, rtol: float = 1e-12):
        self.n = normal.shape[0]
        self.normal = normal
        self.rtol = rtol
        self.direct = self.n <= max_direct
        if self.direct:
            try:
                self._lu = spla.splu(normal, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise LsqcError(
                    "LSQC normal matrix is singular: need |mu| bounded away from 1, "
                    "a connected mesh without dangling triangles, and two distinct pins"
                ) from exc
        else:
            diag = normal.diagonal()
            self._precond = sp.diags(1.0 / diag)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.direct:
            return self._lu.solve(np.asarray(rhs, dtype=complex))
        x, info = spla.cg(self.normal, rhs, rtol=self.rtol, atol=0.0, M=self._precond,
                          maxiter=20 * self.n)
        if info != 0:
            raise LsqcError(f"conjugate gradient did not converge (info={info})")
        return x


@dataclass
class Solution:
    positions: np.ndarray
    factor: Factor
    residual: float


def solve_system(system: LsqcSystem, max_direct: int = 250_000) -> Solution:
    factor = Factor(system.normal, max_direct=max_direct)
    U = np.empty(system.mesh.n_vertices, dtype=complex)
    U[system.free] = factor.solve(system.rhs)
    U[system.pins] = system.targets
    r = system.M @ U
    return Solution(U, factor, float(np.vdot(r, r).real))


def solve(system: LsqcSystem) -> np.ndarray:
    """Least-squares minimizer with pinned vertices held exactly at their targets."""
    return solve_system(system).positions


def lsqc_map(mesh2d: TriMesh, mu, pins) -> np.ndarray:
    return solve(assemble(mesh2d, mu, pins))


def energy(mesh2d: TriMesh, mu, positions) -> float:
    """Discrete LSQC energy ``sum_T |sum_j W_jT U_jT|^2 / |d_T|``."""
    W, _ = stencil(mesh2d, _values(mu))
    U = np.asarray(_values(positions))[mesh2d.faces]
    r = np.sum(W * U, axis=1)
    return float(np.sum(np.abs(r) ** 2))


def refine_and_extend(mesh2d: TriMesh, mu, positions, face: int, weights):
    """Split ``face`` at the interior barycentric point ``weights`` (1-to-3).

    Children inherit the parent coefficient; the new vertex is placed at the
    barycentric combination of the parent's mapped corners.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (3,) or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
        raise LsqcError("split point must be strictly interior to the face")
    mu = _values(mu)
    U = np.asarray(_values(positions), dtype=complex)
    a, b, c = mesh2d.faces[face]
    p = mesh2d.n_vertices
    new_vertex = w @ mesh2d.vertices[[a, b, c]]
    faces = mesh2d.faces.copy()
    faces[face] = [p, b, c]
    faces = np.vstack([faces, [[a, p, c], [a, b, p]]])
    refined = TriMesh(np.vstack([mesh2d.vertices, new_vertex]), faces)
    mu_ext = np.concatenate([mu, [mu[face], mu[face]]])
    U_ext = np.concatenate([U, [w @ U[[a, b, c]]]])
    return refined, mu_ext, U_ext
