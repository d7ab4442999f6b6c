"""Two-chart optimization of sphere self-maps.

The standard sphere is the south-chart lift of the disk mesh (upper
hemisphere) joined to the north-chart lift of its interior (lower
hemisphere). A disk vertex ``w`` on the boundary circle is the same sphere
point in the north chart as ``conj(w)`` in the south chart, so the seam
correspondence is complex conjugation.
"""

from __future__ import annotations

import collections
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import losses
from .charts import ChartId, lift, lift_vjp, stereo_north, stereo_south
from .diffmap import ChartMap, ChartParams, forward, vjp
from .lsqc import bc_from_map
from .mesh import (
    Barycentric,
    MeshError,
    TriMesh,
    disk_mesh,
    disk_ring_indices,
    locate_barycentric,
    locate_on_sphere,
    orient_outward,
)
from .task import LandmarkSpec, TaskContext


class BoostError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# standard sphere and gluing

def _conjugate_permutation(disk: TriMesh, rings: int) -> np.ndarray:
    perm = np.zeros(disk.n_vertices, dtype=np.int64)
    for k in range(rings + 1):
        idx = disk_ring_indices(rings, k)
        n = len(idx)
        perm[idx] = idx[(-np.arange(n)) % n]
    return perm


@dataclass
class StandardSphere:
    """Sphere mesh assembled from two lifted copies of the standard disk mesh."""

    rings: int
    disk: TriMesh
    mesh: TriMesh
    boundary: np.ndarray
    inner_ring: np.ndarray
    interior: np.ndarray
    conj: np.ndarray
    north_to_sphere: np.ndarray
    seam_mesh: TriMesh
    seam_local: np.ndarray

    @property
    def n_disk(self) -> int:
        return self.disk.n_vertices

    @property
    def chart_of_vertex(self) -> np.ndarray:
        """0 for south-chart (upper) vertices, 1 for north-chart (lower) vertices."""
        out = np.zeros(self.mesh.n_vertices, dtype=np.int8)
        out[self.n_disk:] = 1
        return out


def build_standard_sphere(rings: int = 24) -> StandardSphere:
    if rings < 2:
        raise BoostError("rings must be at least 2")
    disk = disk_mesh(rings)
    z = disk.complex_vertices
    nV = disk.n_vertices
    boundary = disk_ring_indices(rings, rings)
    inner = disk_ring_indices(rings, rings - 1)
    interior = np.arange(nV - len(boundary))
    conj = _conjugate_permutation(disk, rings)

    north_to_sphere = np.empty(nV, dtype=np.int64)
    north_to_sphere[interior] = nV + np.arange(len(interior))
    north_to_sphere[boundary] = conj[boundary]

    verts = np.vstack([stereo_south_inv_ref(z), lift(z[interior], ChartId.NORTH)])
    verts[boundary, 2] = 0.0
    faces = np.vstack([disk.faces, north_to_sphere[disk.faces]])
    mesh = orient_outward(TriMesh(verts, faces))

    # seam mesh in the north-chart plane: [north inner ring | seam | south inner ring]
    nI, nB = len(inner), len(boundary)
    local_north = np.full(nV, -1, dtype=np.int64)
    local_north[inner] = np.arange(nI)
    local_north[boundary] = nI + np.arange(nB)
    local_south = np.full(nV, -1, dtype=np.int64)
    local_south[inner] = nI + nB + np.arange(nI)
    local_south[boundary] = local_north[conj[boundary]]
    is_bdry = np.zeros(nV, dtype=bool)
    is_bdry[boundary] = True
    band = disk.faces[is_bdry[disk.faces].any(axis=1)]
    seam_faces = np.vstack([local_north[band], local_south[band]])
    seam_pos = np.concatenate([z[inner], z[boundary], 1.0 / z[inner]])
    seam_mesh = TriMesh(np.column_stack([seam_pos.real, seam_pos.imag]), seam_faces)
    return StandardSphere(rings, disk, mesh, boundary, inner, interior, conj,
                          north_to_sphere, seam_mesh, nI + np.arange(nB))


def stereo_south_inv_ref(z):
    return lift(z, ChartId.SOUTH)


@dataclass
class Glued:
    """Glued sphere map and the chart values it was built from."""

    Y_S: np.ndarray
    Y_N: np.ndarray
    Y_Ng: np.ndarray
    X: np.ndarray
    seam_positions: np.ndarray


def glue(sphere: StandardSphere, f_S, f_N) -> Glued:
    """Stitch the two chart images; seam positions always come from the south chart."""
    Y_S = np.asarray(getattr(f_S, "positions", f_S), dtype=complex)
    Y_N = np.asarray(getattr(f_N, "positions", f_N), dtype=complex)
    if not (np.all(np.isfinite(Y_S)) and np.all(np.isfinite(Y_N))):
        raise BoostError("chart map is not finite")
    bS = Y_S[sphere.conj[sphere.boundary]]
    if np.any(np.abs(bS) < 1e-9) or np.any(np.abs(Y_S[sphere.inner_ring]) < 1e-9):
        raise BoostError("seam crosses chart singularity")
    Y_Ng = Y_N.copy()
    Y_Ng[sphere.boundary] = 1.0 / bS
    nV = sphere.n_disk
    X = np.empty((sphere.mesh.n_vertices, 3))
    X[:nV] = lift(Y_S, ChartId.SOUTH)
    X[nV:] = lift(Y_N[sphere.interior], ChartId.NORTH)
    seam = np.concatenate([Y_Ng[sphere.inner_ring], Y_Ng[sphere.boundary], 1.0 / Y_S[sphere.inner_ring]])
    return Glued(Y_S, Y_N, Y_Ng, X, seam)


def glue_backward(sphere: StandardSphere, g: Glued, gX=None, gYS=None, gYNg=None, gSeam=None):
    """Pull gradients on glued quantities back to ``(grad Y_S, grad Y_N)``."""
    nV = sphere.n_disk
    GS = np.zeros(nV, dtype=complex) if gYS is None else np.array(gYS, dtype=complex)
    GNg = np.zeros(nV, dtype=complex) if gYNg is None else np.array(gYNg, dtype=complex)
    if gSeam is not None:
        nI, nB = len(sphere.inner_ring), len(sphere.boundary)
        GNg[sphere.inner_ring] += gSeam[:nI]
        GNg[sphere.boundary] += gSeam[nI:nI + nB]
        w = g.Y_S[sphere.inner_ring]
        GS[sphere.inner_ring] += np.conj(-1.0 / w ** 2) * gSeam[nI + nB:]
    if gX is not None:
        GS += lift_vjp(g.Y_S, gX[:nV], ChartId.SOUTH)
        GNg[sphere.interior] += lift_vjp(g.Y_N[sphere.interior], gX[nV:], ChartId.NORTH)
    GN = np.zeros(nV, dtype=complex)
    GN[sphere.interior] = GNg[sphere.interior]
    src = sphere.conj[sphere.boundary]
    w = g.Y_S[src]
    np.add.at(GS, src, np.conj(-1.0 / w ** 2) * GNg[sphere.boundary])
    return GS, GN


def chart_values_from_positions(sphere: StandardSphere, X) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(Y_S, Y_Ng)`` from glued sphere positions."""
    X = np.asarray(X, dtype=float)
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    nV = sphere.n_disk
    Y_S = stereo_south(X[:nV])
    Y_Ng = stereo_north(X[sphere.north_to_sphere])
    return Y_S, Y_Ng


# ---------------------------------------------------------------------------
# point evaluation through the charts

class ChartPoints:
    """Fixed sphere points located once in the source charts of the standard sphere.

    Each point is found on the closed standard mesh by central projection.
    The containing face belongs to one chart, and the point gets affine
    weights with respect to that face's chart triangle. Points on the equator
    arc sit a hair outside the chord, so the weights may be slightly negative;
    the chart value is still exact for the identity map.
    """

    def __init__(self, sphere: StandardSphere, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        p = p / np.linalg.norm(p, axis=1, keepdims=True)
        self.n = len(p)
        loc = locate_on_sphere(sphere.mesh, p, tol=1e-6)
        n_disk_faces = sphere.disk.n_faces
        self.south = loc.face_index < n_disk_faces
        z = sphere.disk.complex_vertices
        self.handles = {}
        for chart, mask in ((ChartId.SOUTH, self.south), (ChartId.NORTH, ~self.south)):
            if not mask.any():
                continue
            rows = np.flatnonzero(mask)
            faces = sphere.disk.faces[loc.face_index[rows] % n_disk_faces]
            c = stereo_south(p[rows]) if chart is ChartId.SOUTH else stereo_north(p[rows])
            a, b, d = (z[faces[:, k]] for k in range(3))
            det = np.imag(np.conj(b - a) * (d - a))
            wb = np.imag(np.conj(c - a) * (d - a)) / det
            wd = np.imag(np.conj(b - a) * (c - a)) / det
            weights = np.column_stack([1 - wb - wd, wb, wd])
            self.handles[chart] = (rows, Barycentric(loc.face_index[rows] % n_disk_faces, weights, faces))

    def evaluate(self, Y_S, Y_Ng):
        """Mapped points and their chart values (used for the backward pass)."""
        out = np.empty((self.n, 3))
        vals = np.empty(self.n, dtype=complex)
        for chart, (rows, h) in self.handles.items():
            Y = Y_S if chart is ChartId.SOUTH else Y_Ng
            v = np.einsum("ij,ij->i", h.weights, Y[h.vertex_index])
            vals[rows] = v
            out[rows] = lift(v, chart)
        return out, vals

    def backward(self, vals, gX, gYS, gYNg):
        for chart, (rows, h) in self.handles.items():
            gv = lift_vjp(vals[rows], gX[rows], chart)
            target = gYS if chart is ChartId.SOUTH else gYNg
            np.add.at(target, h.vertex_index.ravel(), (h.weights * gv[:, None]).ravel())


class FieldSampler:
    """Piecewise-linear field on a sphere mesh, sampled by central projection."""

    def __init__(self, mesh: TriMesh, values):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)
        x = mesh.vertices
        f = mesh.faces
        a, b, c = x[f[:, 0]], x[f[:, 1]], x[f[:, 2]]
        n = np.cross(b - a, c - a)
        nn = np.einsum("ij,ij->i", n, n)[:, None]
        grads = [np.cross(n, c - b) / nn, np.cross(n, a - c) / nn, np.cross(n, b - a) / nn]
        self.normals = n
        self.offsets = np.einsum("ij,ij->i", n, a)
        vals = self.values[f]
        if vals.ndim == 2:
            self.face_grad = sum(g * vals[:, k, None] for k, g in enumerate(grads))
        else:
            self.face_grad = sum(g[:, :, None] * vals[:, k, None, :] for k, g in enumerate(grads))

    def sample(self, points, with_grad: bool = False):
        p = np.asarray(points, dtype=float)
        h = locate_on_sphere(self.mesh, p, tol=1e-6)
        v = self.values[h.vertex_index]
        if v.ndim == 2:
            out = np.einsum("ij,ij->i", h.weights, v)
        else:
            out = np.einsum("ij,ijk->ik", h.weights, v)
        if not with_grad:
            return out
        fi = h.face_index
        n = self.normals[fi]
        c = self.offsets[fi]
        npd = np.einsum("ij,ij->i", n, p)
        g = self.face_grad[fi]
        if g.ndim == 2:
            gp = np.einsum("ij,ij->i", g, p)
            jac = (c / npd)[:, None] * g - (c * gp / npd ** 2)[:, None] * n
        else:
            gp = np.einsum("ijk,ij->ik", g, p)
            jac = (c / npd)[:, None, None] * g - (c[:, None] * gp / npd[:, None] ** 2)[:, None, :] * n[:, :, None]
        return out, jac


def _one_hot(labels, n_parcels: int) -> np.ndarray:
    lab = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(lab), n_parcels))
    out[np.arange(len(lab)), lab] = 1.0
    return out


# ---------------------------------------------------------------------------
# problem definition

class Problem:
    """Task data transferred onto the standard sphere, ready for repeated evaluation."""

    def __init__(self, sphere: StandardSphere, task: TaskContext, weights: losses.LossWeights | None = None):
        task.validate()
        self.sphere = sphere
        self.task = task
        self.weights = weights or losses.LossWeights()
        self.seam_smooth = losses.SeamSmoothness(sphere.seam_mesh, sphere.seam_local, anchored=True)
        self.bc_smooth = losses.BcSmoothness(sphere.disk)
        self.reference = sphere.mesh.vertices
        self.landmarks: LandmarkSpec | None = task.landmarks
        if self.landmarks is not None:
            self.lm_points = ChartPoints(sphere, self.landmarks.moving_points)
            sizes = [len(c.moving) for c in self.landmarks.curves]
            self.lm_slices = np.split(np.arange(sum(sizes)), np.cumsum(sizes)[:-1])
        self.moving_std = None
        if task.has_intensity:
            self.moving_std = FieldSampler(task.moving_mesh, task.moving_field).sample(self.reference)
            self.fixed_sampler = FieldSampler(task.fixed_mesh, task.fixed_field)
        self.moving_onehot = None
        if task.has_labels:
            P = int(max(np.max(task.moving_labels), np.max(task.fixed_labels))) + 1
            self.n_parcels = P
            self.moving_onehot = FieldSampler(task.moving_mesh, _one_hot(task.moving_labels, P)).sample(self.reference)
            self.fixed_label_sampler = FieldSampler(task.fixed_mesh, _one_hot(task.fixed_labels, P))

    # -- evaluation ---------------------------------------------------------
    def map_points(self, glued: Glued, points) -> np.ndarray:
        return ChartPoints(self.sphere, points).evaluate(glued.Y_S, glued.Y_Ng)[0]

    def task_terms(self, glued: Glued, gX, gYS, gYNg, with_grad: bool = True) -> dict:
        terms = {}
        if self.landmarks is not None:
            pts, vals = self.lm_points.evaluate(glued.Y_S, glued.Y_Ng)
            g_pts = np.zeros_like(pts)
            curves = self.landmarks.curves
            if self.landmarks.loss == "l2":
                v, g = losses.landmark_l2_grad(pts, self.landmarks.target_points)
                g_pts += g
            else:
                deformed = [pts[s] for s in self.lm_slices]
                targets = [c.target for c in curves]
                ends, end_rows = [], []
                for c, s in zip(curves, self.lm_slices):
                    if c.endpoints:
                        rows = s[[0, -1]]
                        end_rows.append(rows)
                        ends.append((pts[rows], c.target[[0, -1]]))
                v, gc, ge = losses.landmark_task_chamfer_grad(deformed, targets, ends if ends else None)
                for s, g in zip(self.lm_slices, gc):
                    g_pts[s] += g
                for rows, g in zip(end_rows, ge):
                    np.add.at(g_pts, rows, g)
            terms["landmark"] = v
            if with_grad:
                self.lm_points.backward(vals, g_pts, gYS, gYNg)
        if self.moving_std is not None:
            sampled, jac = self.fixed_sampler.sample(glued.X, with_grad=True)
            r, g = losses.ncc_grad(self.moving_std, sampled)
            terms["ncc"] = 1.0 - r
            if with_grad:
                gX += -g[:, None] * jac
        if self.moving_onehot is not None:
            sampled, jac = self.fixed_label_sampler.sample(glued.X, with_grad=True)
            v, g = losses.soft_dice_grad(self.moving_onehot, sampled)
            terms["dice"] = v
            if with_grad:
                gX += np.einsum("ik,ijk->ij", g, jac)
        return terms

    def evaluate(self, theta_south: ChartParams, theta_north: ChartParams, with_grad: bool = True):
        """Total loss, per-term breakdown, and gradients for both charts."""
        sphere = self.sphere
        w = self.weights
        disk = sphere.disk
        f_S, tape_S = forward(disk, theta_south)
        f_N, tape_N = forward(disk, theta_north)
        glued = glue(sphere, f_S, f_N)
        nV = sphere.n_disk
        gX = np.zeros_like(glued.X)
        gYS = np.zeros(nV, dtype=complex)
        gYNg = np.zeros(nV, dtype=complex)

        terms = self.task_terms(glued, gX, gYS, gYNg, with_grad) if w.task > 0 or not with_grad else {}
        task_value = float(sum(terms.values()))
        if with_grad and w.task != 1.0:
            gX *= w.task
            gYS *= w.task
            gYNg *= w.task

        # boundary matching: south lift of s vs north lift of the conjugate vertex
        src = sphere.conj[sphere.boundary]
        lift_s = glued.X[src]
        lift_n = lift(glued.Y_N[sphere.boundary], ChartId.NORTH)
        bm, g_s, g_n = losses.boundary_matching_grad(lift_s, lift_n)
        gX[src] += w.bm * g_s
        gYN_direct = np.zeros(nV, dtype=complex)
        gYN_direct[sphere.boundary] = w.bm * lift_vjp(glued.Y_N[sphere.boundary], g_n, ChartId.NORTH)

        fold, g_fold = losses.folding_penalty_grad(sphere.mesh.faces, glued.X)
        gX += w.folding * g_fold
        folds = losses.fold_count(sphere.mesh.faces, glued.X)

        bs, g_seam = self.seam_smooth.value_and_grad(glued.seam_positions)

        mu_S, mu_N = tape_S.mu_vertex, tape_N.mu_vertex
        bc, g_bcS, g_bcN = losses.bc_magnitude_grad(mu_S, mu_N)
        sm, g_smS, g_smN = self.bc_smooth.value_and_grad(mu_S, mu_N)

        breakdown = {
            "task": task_value,
            "bm": bm,
            "folding": fold,
            "bs": bs,
            "bc": bc,
            "smooth": sm,
        }
        breakdown.update({f"task_{k}": v for k, v in terms.items()})
        total = (w.task * task_value + w.bm * bm + w.folding * fold + w.bs * bs
                 + w.bc * bc + w.smooth * sm)
        ev = Evaluation(total, breakdown, folds, glued, f_S, f_N, tape_S, tape_N)
        if not with_grad:
            return ev
        GS, GN = glue_backward(sphere, glued, gX=gX, gYS=gYS, gYNg=gYNg, gSeam=w.bs * g_seam)
        GN += gYN_direct
        ev.grad_south = vjp(tape_S, GS, extra_mu_grad=w.bc * g_bcS + w.smooth * g_smS)
        ev.grad_north = vjp(tape_N, GN, extra_mu_grad=w.bc * g_bcN + w.smooth * g_smN)
        return ev


@dataclass
class Evaluation:
    total: float
    breakdown: dict
    folds: int
    glued: Glued
    f_S: ChartMap
    f_N: ChartMap
    tape_S: object = None
    tape_N: object = None
    grad_south: ChartParams | None = None
    grad_north: ChartParams | None = None


# ---------------------------------------------------------------------------
# optimizer state and loop

@dataclass
class BoostState:
    theta_south: ChartParams
    theta_north: ChartParams
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    step_size: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    iteration: int = 0
    recent: collections.deque = field(default_factory=lambda: collections.deque(maxlen=1000))
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.step_size <= 0:
            raise BoostError("step size must be positive")

    @classmethod
    def identity(cls, sphere: StandardSphere, weights=None, step_size: float = 1e-2) -> "BoostState":
        return cls(ChartParams.identity(sphere.disk), ChartParams.identity(sphere.disk),
                   weights or losses.LossWeights(), step_size)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta_south.flatten(), self.theta_north.flatten()])

    def set_vector(self, vec) -> None:
        n = len(self.theta_south.mu_raw)
        half = len(vec) // 2
        self.theta_south = ChartParams.unflatten(vec[:half], n)
        self.theta_north = ChartParams.unflatten(vec[half:], n)


def _flat_grad(ev: Evaluation) -> np.ndarray:
    return np.concatenate([ev.grad_south.flatten(), ev.grad_north.flatten()])


def _check_finite(state: BoostState, grad: np.ndarray) -> None:
    if np.all(np.isfinite(grad)):
        return
    n = len(state.theta_south.mu_raw)
    names = (["mu_raw"] * (2 * n) + ["temp_bc"] + ["pins_raw"] * 4 + ["temp_pin", "rot", "scale", "trans", "trans"])
    bad = int(np.flatnonzero(~np.isfinite(grad))[0])
    half = len(grad) // 2
    chart = "south" if bad < half else "north"
    raise BoostError(f"non-finite gradient for {chart} parameter {names[bad % half]!r}")


def apply_update(state: BoostState, grad: np.ndarray) -> None:
    """One adaptive-moment update of all chart parameters."""
    _check_finite(state, grad)
    if state.m is None:
        state.m = np.zeros_like(grad)
        state.v = np.zeros_like(grad)
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    t = state.iteration + 1
    mhat = state.m / (1 - state.beta1 ** t)
    vhat = state.v / (1 - state.beta2 ** t)
    state.set_vector(state.vector() - state.step_size * mhat / (np.sqrt(vhat) + state.eps))
    for th in (state.theta_south, state.theta_north):
        th.temp_bc = max(th.temp_bc, 1e-3)
        th.temp_pin = max(th.temp_pin, 1e-3)
        th.scale = max(th.scale, 1e-6)


def _record(state: BoostState, ev: Evaluation) -> None:
    row = {"iteration": state.iteration, **ev.breakdown, "folds": ev.folds, "total": ev.total}
    state.history.append(row)
    state.recent.append(ev.total)


def total_loss(state: BoostState, problem: Problem):
    """Weighted total and per-term breakdown at the current parameters."""
    problem.weights = state.weights
    ev = problem.evaluate(state.theta_south, state.theta_north, with_grad=False)
    return ev.total, ev.breakdown


def step(state: BoostState, problem: Problem) -> BoostState:
    """Evaluate, differentiate, and apply one optimizer update."""
    problem.weights = state.weights
    ev = problem.evaluate(state.theta_south, state.theta_north)
    _record(state, ev)
    apply_update(state, _flat_grad(ev))
    state.iteration += 1
    return state


@dataclass
class StopConfig:
    max_iters: int = 3000
    window: int = 50
    rel_tol: float = 1e-6
    bm_tol: float = 1e-5
    grad_tol: float = 1e-9
    loss_tol: float = 1e-14


@dataclass
class RegistrationResult:
    sphere: StandardSphere
    positions: np.ndarray
    glued: Glued
    mu_south: np.ndarray
    mu_north: np.ndarray
    folds: int
    breakdown: dict
    total: float
    iterations: int
    seconds: float
    failed: bool
    state: BoostState
    converged: bool = False

    @property
    def history(self) -> list:
        return self.state.history


def _should_stop(state: BoostState, ev: Evaluation, stop: StopConfig, grad=None) -> bool:
    if ev.folds or ev.breakdown["bm"] >= stop.bm_tol:
        return False
    # a stationary point (e.g. the identity on a trivial task) ends the run at once;
    # otherwise Adam rescales roundoff-sized gradients into full-size steps
    if grad is not None and np.max(np.abs(grad)) < stop.grad_tol:
        return True
    # every term is nonnegative, so a vanishing total is a global minimum
    if ev.total < stop.loss_tol:
        return True
    r = state.recent
    if len(r) <= stop.window:
        return False
    old = r[-1 - stop.window]
    return abs(r[-1] - old) <= stop.rel_tol * max(abs(old), 1e-12)


def optimize(state: BoostState, problem: Problem, stop: StopConfig | None = None,
             callback=None) -> RegistrationResult:
    """Run updates until the stop rule holds or ``max_iters`` evaluations are spent."""
    stop = stop or StopConfig()
    problem.weights = state.weights
    t0 = time.perf_counter()
    converged = False
    ev = None
    while True:
        ev = problem.evaluate(state.theta_south, state.theta_north)
        _record(state, ev)
        if callback is not None:
            callback(state, ev)
        grad = _flat_grad(ev)
        if _should_stop(state, ev, stop, grad):
            converged = True
            break
        if state.iteration >= stop.max_iters:
            break
        apply_update(state, grad)
        state.iteration += 1
    seconds = time.perf_counter() - t0
    g = ev.glued
    disk = problem.sphere.disk
    mu_s = np.abs(bc_from_map(disk, g.Y_S).values)
    mu_n = np.abs(bc_from_map(disk, g.Y_Ng).values)
    return RegistrationResult(problem.sphere, g.X.copy(), g, mu_s, mu_n, ev.folds, dict(ev.breakdown),
                              ev.total, state.iteration, seconds, ev.folds > 0, state, converged)


# ---------------------------------------------------------------------------
# transfer to user meshes

CHART_SWITCH_HEIGHT = 0.5


def face_bc_modulus(reference: TriMesh, deformed) -> np.ndarray:
    """Per-face ``|mu|`` of the piecewise-linear sphere map ``reference -> deformed``.

    The source chart is picked by the reference face centroid. The target
    chart is the same one unless the deformed face has moved well into the
    other hemisphere: the coefficient does not depend on the conformal target
    chart in the continuum, but a chart switch on a discrete triangle adds an
    error of first order in its size.
    """
    x = reference.vertices
    y = np.asarray(deformed, dtype=float)
    F = reference.faces
    src_south = x[F].mean(axis=1)[:, 2] >= 0
    dst_z = y[F].mean(axis=1)[:, 2]
    dst_south = np.where(src_south, dst_z > -CHART_SWITCH_HEIGHT, dst_z > CHART_SWITCH_HEIGHT)
    xs = x / np.linalg.norm(x, axis=1, keepdims=True)
    ys = y / np.linalg.norm(y, axis=1, keepdims=True)
    out = np.empty(len(F))
    for s_src in (True, False):
        for s_dst in (True, False):
            sel = (src_south == s_src) & (dst_south == s_dst)
            if not sel.any():
                continue
            fv = F[sel].ravel()
            zs = _safe_project(xs[fv], s_src)
            zd = _safe_project(ys[fv], s_dst)
            tri = TriMesh(np.column_stack([zs.real, zs.imag]), np.arange(len(fv)).reshape(-1, 3))
            out[sel] = np.abs(bc_from_map(tri, zd).values)
    return out


def _safe_project(p, south: bool):
    p = np.asarray(p, dtype=float)
    if south:
        return (p[:, 0] - 1j * p[:, 1]) / np.maximum(1.0 + p[:, 2], 1e-300)
    return (p[:, 0] + 1j * p[:, 1]) / np.maximum(1.0 - p[:, 2], 1e-300)


def extract_map(result: RegistrationResult, user_mesh: TriMesh):
    """Deform a user sphere mesh through the optimized charts.

    Returns ``(deformed vertices, per-face |mu|)``.
    """
    sphere = result.sphere
    try:
        pts = ChartPoints(sphere, user_mesh.vertices)
    except MeshError as exc:
        raise BoostError(f"user vertex could not be located: {exc}") from exc
    out, _ = pts.evaluate(result.glued.Y_S, result.glued.Y_Ng)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out, face_bc_modulus(user_mesh, out)
