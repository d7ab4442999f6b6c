"""scikit-learn style front end for sphere registration."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .boost import (
    BoostState,
    ChartPoints,
    Problem,
    StopConfig,
    build_standard_sphere,
    extract_map,
    optimize,
)
from .losses import LossWeights
from .mesh import TriMesh
from .task import LandmarkSpec, TaskContext


def check_sphere_points(X, name: str = "X", tol: float = 1e-6) -> np.ndarray:
    """Validate an ``(n, 3)`` array of unit vectors."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns, got {X.shape[1]}")
    norms = np.linalg.norm(X, axis=1)
    bad = np.abs(norms - 1) > tol
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{name}[{i}] is not on the unit sphere (norm {norms[i]:.6g})")
    return X


class SphereRegistration(TransformerMixin, BaseEstimator):
    """Bijective, distortion-controlled registration of the unit sphere to itself.

    ``fit(X, y)`` takes moving landmarks ``X`` and their targets ``y`` (both
    ``(n, 3)`` unit vectors). Intensity or label tasks go through ``fit_task``.
    ``transform`` maps arbitrary sphere points through the fitted map.

    Parameters mirror the optimizer settings; weights are given as a
    ``LossWeights`` or a ``"task=5,bm=1,..."`` string.
    """

    def __init__(self, rings=24, weights=None, max_iters=3000, step_size=1e-2,
                 landmark_loss="l2", verbose=0):
        self.rings = rings
        self.weights = weights
        self.max_iters = max_iters
        self.step_size = step_size
        self.landmark_loss = landmark_loss
        self.verbose = verbose

    def _weights(self) -> LossWeights:
        w = self.weights
        if w is None:
            return LossWeights()
        if isinstance(w, str):
            return LossWeights.parse(w)
        if isinstance(w, dict):
            return LossWeights(**w)
        return w

    def fit(self, X, y=None):
        X = check_sphere_points(X, "X")
        if y is None:
            y = X
        y = check_sphere_points(y, "y")
        if self.landmark_loss == "l2" and len(X) != len(y):
            raise ValueError(f"X and y need the same number of points ({len(X)} vs {len(y)})")
        spec = LandmarkSpec(LandmarkSpec.from_points(X, y).curves, self.landmark_loss)
        return self.fit_task(TaskContext(landmarks=spec))

    def fit_task(self, task: TaskContext):
        sphere = build_standard_sphere(self.rings)
        weights = self._weights()
        problem = Problem(sphere, task, weights)
        state = BoostState.identity(sphere, weights, self.step_size)
        callback = None
        if self.verbose:
            def callback(st, ev):
                if st.iteration % max(1, int(self.verbose)) == 0:
                    print(f"iter {st.iteration:5d}  total {ev.total:.6g}  folds {ev.folds}")
        self.result_ = optimize(state, problem, StopConfig(max_iters=self.max_iters), callback)
        self.problem_ = problem
        self.n_iter_ = self.result_.iterations
        self.n_folds_ = self.result_.folds
        self.loss_ = self.result_.total
        return self

    def transform(self, X):
        check_is_fitted(self, "result_")
        X = check_sphere_points(X, "X")
        g = self.result_.glued
        out, _ = ChartPoints(self.result_.sphere, X).evaluate(g.Y_S, g.Y_Ng)
        return out / np.linalg.norm(out, axis=1, keepdims=True)

    def deform_mesh(self, mesh: TriMesh):
        """Deformed copy of a unit-sphere mesh and its per-face ``|mu|``."""
        check_is_fitted(self, "result_")
        verts, mu = extract_map(self.result_, mesh)
        return mesh.with_positions(verts), mu
