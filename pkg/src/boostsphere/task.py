"""Registration task data: landmark curves, scalar fields, label fields."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh import TriMesh


class TaskError(ValueError):
    pass


@dataclass
class Curve:
    """One landmark curve: moving points (or moving-mesh vertex ids) and target points."""

    moving: np.ndarray
    target: np.ndarray
    endpoints: bool = False
    moving_indices: np.ndarray | None = None

    def __post_init__(self):
        self.moving = np.asarray(self.moving, dtype=float).reshape(-1, 3)
        self.target = np.asarray(self.target, dtype=float).reshape(-1, 3)
        if len(self.moving) == 0 or len(self.target) == 0:
            raise TaskError("landmark curves must be nonempty")


@dataclass
class LandmarkSpec:
    """Landmark curves plus the task loss used on them (``"l2"`` or ``"chamfer"``)."""

    curves: list[Curve]
    loss: str = "l2"

    def __post_init__(self):
        if self.loss not in ("l2", "chamfer"):
            raise TaskError(f"unknown landmark loss {self.loss!r}")
        if self.loss == "l2":
            for i, c in enumerate(self.curves):
                if len(c.moving) != len(c.target):
                    raise TaskError(f"curve {i}: l2 loss needs equal point counts "
                                    f"({len(c.moving)} vs {len(c.target)})")

    @classmethod
    def from_points(cls, moving, target) -> "LandmarkSpec":
        return cls([Curve(moving, target)], "l2")

    @property
    def moving_points(self) -> np.ndarray:
        return np.vstack([c.moving for c in self.curves])

    @property
    def target_points(self) -> np.ndarray:
        return np.vstack([c.target for c in self.curves])

    def to_json(self) -> dict:
        curves = []
        for c in self.curves:
            moving = ({"indices": c.moving_indices.tolist()} if c.moving_indices is not None
                      else c.moving.tolist())
            curves.append({"moving": moving, "target": c.target.tolist(), "endpoints": bool(c.endpoints)})
        return {"loss": self.loss, "curves": curves}


def load_landmarks(path, moving_mesh: TriMesh | None = None) -> LandmarkSpec:
    """Read a landmark spec; index-based curves are resolved on ``moving_mesh``."""
    data = json.loads(Path(path).read_text())
    return landmarks_from_json(data, moving_mesh)


def landmarks_from_json(data, moving_mesh: TriMesh | None = None) -> LandmarkSpec:
    if isinstance(data, list):
        data = {"curves": data}
    curves = []
    for i, c in enumerate(data.get("curves", [])):
        if "moving" not in c or "target" not in c:
            raise TaskError(f"curve {i}: needs 'moving' and 'target'")
        mv = c["moving"]
        idx = None
        if isinstance(mv, dict):
            if moving_mesh is None:
                raise TaskError(f"curve {i}: vertex indices need a moving mesh")
            idx = np.asarray(mv["indices"], dtype=np.int64)
            mv = moving_mesh.vertices[idx]
        curves.append(Curve(mv, c["target"], bool(c.get("endpoints", False)), idx))
    if not curves:
        raise TaskError("landmark spec has no curves")
    return LandmarkSpec(curves, data.get("loss", "l2"))


def save_landmarks(spec: LandmarkSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=1))


def resample_curve(points, n: int) -> np.ndarray:
    """Uniform arc-length resampling of a polyline to ``n`` points."""
    p = np.asarray(points, dtype=float)
    if len(p) < 2 or n < 2:
        raise TaskError("resampling needs at least two points")
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        raise TaskError("cannot resample a zero-length curve")
    t = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(t, s, p[:, k]) for k in range(p.shape[1])])


def best_rotation(moving, target) -> np.ndarray:
    """Rotation ``R`` minimizing ``sum |R m - t|^2`` (proper rotations only)."""
    rot, _ = Rotation.align_vectors(np.asarray(target), np.asarray(moving))
    return rot.as_matrix()


def resample_spec(spec: LandmarkSpec, n: int) -> tuple[LandmarkSpec, np.ndarray]:
    """Resample every curve to ``n`` points, then rotate the moving side onto the targets."""
    curves = [Curve(resample_curve(c.moving, n), resample_curve(c.target, n), c.endpoints)
              for c in spec.curves]
    R = best_rotation(np.vstack([c.moving for c in curves]), np.vstack([c.target for c in curves]))
    for c in curves:
        c.moving = c.moving @ R.T
    return LandmarkSpec(curves, "l2"), R


@dataclass
class TaskContext:
    """Everything a registration needs besides the optimizer settings.

    ``moving_field`` is a per-vertex field on ``moving_mesh``; ``fixed_field``
    on ``fixed_mesh``. Labels are integer per-vertex parcel ids.
    """

    landmarks: LandmarkSpec | None = None
    moving_mesh: TriMesh | None = None
    fixed_mesh: TriMesh | None = None
    moving_field: np.ndarray | None = None
    fixed_field: np.ndarray | None = None
    moving_labels: np.ndarray | None = None
    fixed_labels: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def has_intensity(self) -> bool:
        return self.moving_field is not None and self.fixed_field is not None

    @property
    def has_labels(self) -> bool:
        return self.moving_labels is not None and self.fixed_labels is not None

    def validate(self) -> None:
        for name, f, mesh in (("moving_field", self.moving_field, self.moving_mesh),
                              ("fixed_field", self.fixed_field, self.fixed_mesh),
                              ("moving_labels", self.moving_labels, self.moving_mesh),
                              ("fixed_labels", self.fixed_labels, self.fixed_mesh)):
            if f is None:
                continue
            if mesh is None:
                raise TaskError(f"{name} given without its mesh")
            if len(f) != mesh.n_vertices:
                raise TaskError(f"{name} has {len(f)} values for {mesh.n_vertices} vertices")
