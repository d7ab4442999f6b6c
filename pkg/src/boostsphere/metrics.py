"""Registration quality metrics computed from geometry alone."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .boost import face_bc_modulus
from .losses import chamfer, fold_count, landmark_l2, ncc
from .mesh import MeshError, TriMesh, locate_on_sphere
from .task import LandmarkSpec


@dataclass
class TableRow:
    """The four comparison columns plus max ``|mu|``."""

    folds: int
    mean_mu: float
    max_mu: float
    landmark_mse: float | None = None
    chamfer: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    def format(self, label: str = "") -> str:
        def f(v):
            return "-" if v is None else f"{v:.6g}"
        head = f"{label:<12} " if label else ""
        return (f"{head}folds={self.folds}  mean|mu|={f(self.mean_mu)}  max|mu|={f(self.max_mu)}  "
                f"mse={f(self.landmark_mse)}  chamfer={f(self.chamfer)}")


def check_same_connectivity(reference: TriMesh, deformed: TriMesh) -> None:
    if reference.n_vertices != deformed.n_vertices or not np.array_equal(reference.faces, deformed.faces):
        raise MeshError("deformed mesh does not share the reference connectivity")


def map_landmarks(reference: TriMesh, deformed: TriMesh, points) -> np.ndarray:
    """Carry points through the piecewise-linear map ``reference -> deformed``."""
    h = locate_on_sphere(reference, points, tol=1e-6)
    out = np.einsum("ij,ijk->ik", h.weights, deformed.vertices[h.vertex_index])
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def landmark_metrics(mapped, spec: LandmarkSpec) -> tuple[float, float]:
    """Mean squared distance over corresponding points and mean per-curve chamfer."""
    sizes = np.cumsum([len(c.moving) for c in spec.curves])[:-1]
    parts = np.split(np.asarray(mapped), sizes)
    ch = float(np.mean([chamfer(p, c.target) for p, c in zip(parts, spec.curves)]))
    mse = None
    if all(len(c.moving) == len(c.target) for c in spec.curves):
        mse = landmark_l2(mapped, spec.target_points)
    return mse, ch


def table_row(reference: TriMesh, deformed: TriMesh, spec: LandmarkSpec | None = None) -> TableRow:
    check_same_connectivity(reference, deformed)
    x = deformed.vertices
    mu = face_bc_modulus(reference, x)
    row = TableRow(fold_count(reference.faces, x), float(mu.mean()), float(mu.max()))
    if spec is not None:
        mapped = map_landmarks(reference, deformed, spec.moving_points)
        row.landmark_mse, row.chamfer = landmark_metrics(mapped, spec)
    return row


def field_ncc(moving_values, fixed_sampler, positions) -> float:
    """NCC between a moving per-vertex field and the fixed field sampled at mapped vertices."""
    return ncc(np.asarray(moving_values), fixed_sampler.sample(positions))
