"""Task and regularization losses.

Every ``*_grad`` function returns ``(value, gradient)``. Gradients of real
losses with respect to complex inputs are returned as ``dL/dRe + i dL/dIm``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh, boundary_vertices, cotangent_laplacian, face_normals
from .lsqc import face_geometry


class LossError(ValueError):
    pass


@dataclass
class LossWeights:
    task: float = 5.0
    bm: float = 1.0
    folding: float = 20.0
    bs: float = 0.5
    bc: float = 0.1
    smooth: float = 0.01

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise LossError(f"loss weight {name!r} must be a nonnegative number, got {value}")

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        """Parse ``"task=5,bm=1,..."``; unspecified weights keep their defaults."""
        kwargs = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            key, _, val = item.partition("=")
            if key not in cls.__dataclass_fields__:
                raise LossError(f"unknown loss weight {key!r}")
            try:
                kwargs[key] = float(val)
            except ValueError:
                raise LossError(f"loss weight {key!r} is not a number: {val!r}") from None
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# landmarks

def landmark_l2_grad(deformed, target):
    deformed = np.asarray(deformed, dtype=float)
    target = np.asarray(target, dtype=float)
    if deformed.shape != target.shape:
        raise LossError(f"landmark count mismatch: {deformed.shape} vs {target.shape}")
    diff = deformed - target
    n = len(diff)
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def landmark_l2(deformed, target) -> float:
    """Mean squared distance between corresponding landmarks."""
    return landmark_l2_grad(deformed, target)[0]


def chamfer_grad(s1, s2):
    """Chamfer distance and its gradient with respect to ``s1``."""
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    s2 = np.atleast_2d(np.asarray(s2, dtype=float))
    if len(s1) == 0 or len(s2) == 0:
        raise LossError("chamfer distance of an empty point set")
    d12, i12 = cKDTree(s2).query(s1)
    d21, i21 = cKDTree(s1).query(s2)
    value = float(np.mean(d12 ** 2) + np.mean(d21 ** 2))
    grad = 2.0 * (s1 - s2[i12]) / len(s1)
    np.add.at(grad, i21, 2.0 * (s1[i21] - s2) / len(s2))
    return value, grad


def chamfer(s1, s2) -> float:
    """Symmetric mean of squared nearest-neighbour distances."""
    return chamfer_grad(s1, s2)[0]


def landmark_task_chamfer_grad(deformed_curves, target_curves, endpoints=None):
    """Mean chamfer over curves plus the endpoint term ``sum |q - t|^2 / (2 * n_curves)``.

    ``endpoints`` is an optional list of ``(deformed (k, 3), target (k, 3))``
    arrays per curve. Returns the value and one gradient array per curve
    (with respect to the deformed curve points) plus per-curve endpoint
    gradients.
    """
    n = len(deformed_curves)
    if n == 0 or n != len(target_curves):
        raise LossError("need matching, nonempty lists of curves")
    total = 0.0
    grads = []
    for moving, target in zip(deformed_curves, target_curves):
        v, g = chamfer_grad(moving, target)
        total += v / n
        grads.append(g / n)
    end_grads = []
    if endpoints is not None:
        for q, t in endpoints:
            q = np.asarray(q, dtype=float).reshape(-1, 3)
            t = np.asarray(t, dtype=float).reshape(-1, 3)
            diff = q - t
            total += float(np.sum(diff * diff)) / (2 * n)
            end_grads.append(2.0 * diff / (2 * n))
    return total, grads, end_grads


def landmark_task_chamfer(deformed_curves, target_curves, endpoints=None) -> float:
    return landmark_task_chamfer_grad(deformed_curves, target_curves, endpoints)[0]


# ---------------------------------------------------------------------------
# intensity and labels

def ncc_grad(fixed, moved):
    """Pearson correlation and its gradient with respect to ``moved``."""
    a = np.asarray(fixed, dtype=float)
    b = np.asarray(moved, dtype=float)
    if a.shape != b.shape:
        raise LossError("fields must have the same length")
    ac = a - a.mean()
    bc = b - b.mean()
    na = np.linalg.norm(ac)
    nb = np.linalg.norm(bc)
    if na <= 1e-300 or nb <= 1e-300:
        raise LossError("NCC undefined for a constant field")
    r = float(ac @ bc / (na * nb))
    return r, ac / (na * nb) - r * bc / nb ** 2


def ncc(moved, fixed) -> float:
    """Normalized cross-correlation of two per-vertex fields, in [-1, 1]."""
    return ncc_grad(fixed, moved)[0]


def dice_loss(moved_labels, fixed_labels, n_parcels: int) -> float:
    """Mean over parcels of ``1 - Dice``; parcels absent from both labelings are skipped."""
    m = np.asarray(moved_labels)
    f = np.asarray(fixed_labels)
    if m.shape != f.shape:
        raise LossError("label fields must have the same length")
    if np.any((m < 0) | (m >= n_parcels)) or np.any((f < 0) | (f >= n_parcels)):
        raise LossError(f"labels must lie in [0, {n_parcels})")
    losses = []
    for p in range(n_parcels):
        mp, fp = m == p, f == p
        size = mp.sum() + fp.sum()
        if size == 0:
            warnings.warn(f"parcel {p} is empty in both labelings; skipped", stacklevel=2)
            continue
        losses.append(1.0 - 2.0 * np.sum(mp & fp) / size)
    if not losses:
        raise LossError("no parcel present in either labeling")
    return float(np.mean(losses))


def soft_dice_grad(moving_onehot, sampled):
    """Soft Dice loss ``mean_p (1 - 2 sum m f / (sum m^2 + sum f^2))`` and gradient w.r.t. ``sampled``."""
    m = np.asarray(moving_onehot, dtype=float)
    f = np.asarray(sampled, dtype=float)
    inter = np.sum(m * f, axis=0)
    denom = np.sum(m * m, axis=0) + np.sum(f * f, axis=0)
    keep = denom > 0
    P = int(keep.sum())
    if P == 0:
        raise LossError("no parcel present in either labeling")
    dice = np.where(keep, 2 * inter / np.where(keep, denom, 1), 0.0)
    value = float(np.sum(1 - dice[keep]) / P)
    grad = -(2 * m / np.where(keep, denom, 1) - 2 * inter / np.where(keep, denom, 1) ** 2 * 2 * f)
    grad[:, ~keep] = 0.0
    return value, grad / P


# ---------------------------------------------------------------------------
# chart gluing terms

def boundary_matching_grad(lift_s, lift_n):
    """Mean squared 3D distance between the two chart lifts of the seam.

    ``lift_s[i]`` and ``lift_n[i]`` are the lifted images of corresponding
    seam points. Returns value and gradients with respect to both lifts.
    """
    diff = np.asarray(lift_s) - np.asarray(lift_n)
    n = len(diff)
    g = 2.0 * diff / n
    return float(np.sum(diff * diff) / n), g, -g


def boundary_matching(lift_s, lift_n) -> float:
    return boundary_matching_grad(lift_s, lift_n)[0]


def folding_penalty_grad(faces, positions):
    """Mean hinge ``max(0, -A_T)`` of signed face areas, and gradient w.r.t. positions."""
    x = np.asarray(positions, dtype=float)
    faces = np.asarray(faces)
    i, j, k = faces.T
    u = x[i] - x[k]
    v = x[j] - x[i]
    n = np.cross(u, v)
    test = np.einsum("ij,ij->i", n, x[i])
    folded = test < 0
    nF = len(faces)
    norm = np.linalg.norm(n[folded], axis=1)
    value = float(0.5 * norm.sum() / nF)
    grad = np.zeros_like(x)
    if folded.any():
        nh = n[folded] / np.maximum(norm, 1e-300)[:, None]
        gv = 0.5 * np.cross(nh, u[folded]) / nF
        gu = 0.5 * np.cross(v[folded], nh) / nF
        np.add.at(grad, i[folded], gu - gv)
        np.add.at(grad, k[folded], -gu)
        np.add.at(grad, j[folded], gv)
    return value, grad


def folding_penalty(glued: TriMesh, positions=None) -> float:
    """Mean hinge on negative signed areas; zero iff no face is folded."""
    x = glued.vertices if positions is None else positions
    return folding_penalty_grad(glued.faces, x)[0]


def fold_count(faces, positions) -> int:
    x = np.asarray(positions, dtype=float)
    n = face_normals(TriMesh(x, faces), x)
    return int(np.count_nonzero(np.einsum("ij,ij->i", n, x[np.asarray(faces)[:, 0]]) < 0))


class SeamSmoothness:
    """Laplacian and bi-Laplacian penalty at seam vertices of a planar mesh.

    Cotangent weights come from the mesh's own vertex positions. When
    ``anchored`` is true the operator acts on displacements from those
    positions, so the undeformed configuration scores exactly zero.
    """

    def __init__(self, mesh: TriMesh, seam, anchored: bool = False):
        seam = np.asarray(seam, dtype=np.int64)
        open_ring = np.intersect1d(seam, boundary_vertices(mesh)) if mesh.n_faces else seam
        if len(open_ring):
            raise LossError(f"seam vertex {int(open_ring[0])} lacks a full one-ring")
        self.mesh = mesh
        self.seam = seam
        self.L = cotangent_laplacian(mesh)
        self.reference = mesh.complex_vertices if anchored else None

    def __call__(self, positions=None):
        return self.value_and_grad(positions)[0]

    def value_and_grad(self, positions=None):
        v = self.mesh.complex_vertices if positions is None else np.asarray(positions, dtype=complex)
        if self.reference is not None:
            v = v - self.reference
        L = self.L
        d1 = L @ v
        d2 = L @ d1
        s1 = d1[self.seam]
        s2 = d2[self.seam]
        value = float(np.sum(np.abs(s2) ** 2) + 0.1 * np.sum(np.abs(s1) ** 2))
        r2 = np.zeros_like(v)
        r1 = np.zeros_like(v)
        r2[self.seam] = 2 * s2
        r1[self.seam] = 0.2 * s1
        grad = L.T @ (L.T @ r2 + r1)
        return value, grad


def seam_smoothness(seam_mesh: TriMesh, seam, positions=None, anchored: bool = False) -> float:
    """``sum_seam |L^2 v|^2 + 0.1 |L v|^2`` with cotangent Laplacian ``L`` of ``seam_mesh``."""
    return SeamSmoothness(seam_mesh, seam, anchored)(positions)


# ---------------------------------------------------------------------------
# Beltrami regularizers

def bc_magnitude_grad(mu_s, mu_n):
    mu_s = np.asarray(mu_s, dtype=complex)
    mu_n = np.asarray(mu_n, dtype=complex)
    n = len(mu_s)
    value = float((np.sum(np.abs(mu_s) ** 2) + np.sum(np.abs(mu_n) ** 2)) / n)
    return value, 2 * mu_s / n, 2 * mu_n / n


def bc_magnitude(mu_s, mu_n) -> float:
    """``mean_v (|mu_S|^2 + |mu_N|^2)`` over vertices."""
    return bc_magnitude_grad(mu_s, mu_n)[0]


class BcSmoothness:
    """``mean_T (|grad mu_S|^2 + |grad mu_N|^2)`` for per-vertex fields on a planar mesh."""

    def __init__(self, mesh2d: TriMesh):
        dx, dy, d = face_geometry(mesh2d)
        if np.any(d == 0):
            raise LossError(f"degenerate face {int(np.flatnonzero(d == 0)[0])}")
        self.mesh = mesh2d
        self.gx = -dy / d[:, None]
        self.gy = dx / d[:, None]

    def _one(self, mu):
        m = np.asarray(mu, dtype=complex)[self.mesh.faces]
        cx = np.sum(self.gx * m, axis=1)
        cy = np.sum(self.gy * m, axis=1)
        nF = self.mesh.n_faces
        value = float(np.sum(np.abs(cx) ** 2 + np.abs(cy) ** 2) / nF)
        g = np.zeros(self.mesh.n_vertices, dtype=complex)
        np.add.at(g, self.mesh.faces.ravel(), (2 * (self.gx * cx[:, None] + self.gy * cy[:, None]) / nF).ravel())
        return value, g

    def value_and_grad(self, mu_s, mu_n):
        vs, gs = self._one(mu_s)
        vn, gn = self._one(mu_n)
        return vs + vn, gs, gn


def bc_smoothness(mesh2d: TriMesh, mu_s, mu_n) -> float:
    return BcSmoothness(mesh2d).value_and_grad(mu_s, mu_n)[0]
