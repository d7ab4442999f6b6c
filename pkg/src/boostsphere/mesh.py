"""Indexed triangle meshes, standard domains and point location."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree


class MeshError(ValueError):
    """Raised for malformed meshes, files, or point queries."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh with 2D or 3D vertex coordinates.

    ``fields`` holds optional per-vertex scalar signals keyed by name.
    """

    vertices: np.ndarray
    faces: np.ndarray
    fields: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise MeshError(f"vertices must be (n, 2) or (n, 3), got {v.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if degenerate.any():
            raise MeshError(f"degenerate face {int(np.flatnonzero(degenerate)[0])}")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def complex_vertices(self) -> np.ndarray:
        """Planar coordinates as complex numbers (2D meshes only)."""
        return self.vertices[:, 0] + 1j * self.vertices[:, 1]

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted per row."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_faces

    def with_positions(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces, dict(self.fields))

    def with_faces(self, faces) -> "TriMesh":
        return TriMesh(self.vertices, faces, dict(self.fields))

    def embed3d(self) -> np.ndarray:
        if self.dim == 3:
            return self.vertices
        return np.column_stack([self.vertices, np.zeros(self.n_vertices)])


# ---------------------------------------------------------------------------
# file I/O

def _fmt(x: float) -> str:
    return repr(float(x))


def save_mesh(mesh: TriMesh, path, format: str | None = None) -> None:
    """Write ``mesh`` as ASCII OFF or OBJ. 2D meshes are written with z=0."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    xyz = mesh.embed3d()
    lines = []
    if fmt == "off":
        lines.append("OFF")
        lines.append(f"{mesh.n_vertices} {mesh.n_faces} 0")
        lines.extend(" ".join(_fmt(c) for c in p) for p in xyz)
        lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.faces)
    elif fmt == "obj":
        lines.extend("v " + " ".join(_fmt(c) for c in p) for p in xyz)
        lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces)
    else:
        raise MeshError(f"unsupported mesh format {fmt!r}")
    path.write_text("\n".join(lines) + "\n")


def _load_off(text: str) -> TriMesh:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows or rows[0][1][0] != "OFF":
        raise MeshError("line 1: missing OFF header")
    header = rows[0][1][1:]
    cursor = 1
    if not header:
        header = rows[1][1]
        cursor = 2
    try:
        nv, nf = int(header[0]), int(header[1])
    except (IndexError, ValueError):
        raise MeshError(f"line {rows[cursor - 1][0]}: bad OFF counts") from None
    if len(rows) < cursor + nv + nf:
        raise MeshError("unexpected end of file")
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, tok = rows[cursor + i]
        try:
            verts[i] = [float(t) for t in tok[:3]]
        except ValueError:
            raise MeshError(f"line {lineno}: cannot parse vertex") from None
    cursor += nv
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        lineno, tok = rows[cursor + i]
        try:
            k = int(tok[0])
            idx = [int(t) for t in tok[1:1 + k]]
        except ValueError:
            raise MeshError(f"line {lineno}: cannot parse face") from None
        if k != 3 or len(idx) != 3:
            raise MeshError(f"line {lineno}: non-triangular face")
        faces[i] = idx
    return TriMesh(verts, faces)


def _load_obj(text: str) -> TriMesh:
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        try:
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
                continue
            if tok[0] != "f":
                continue
            idx = [int(t.split("/")[0]) for t in tok[1:]]
        except ValueError:
            raise MeshError(f"line {lineno}: cannot parse {tok[0]!r} record") from None
        if len(idx) != 3:
            raise MeshError(f"line {lineno}: non-triangular face")
        faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64))


def load_mesh(path, format: str | None = None) -> TriMesh:
    """Read an ASCII OFF or OBJ triangle mesh."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    text = path.read_text()
    if fmt == "off":
        return _load_off(text)
    if fmt == "obj":
        return _load_obj(text)
    raise MeshError(f"unsupported mesh format {fmt!r}")


def load_field(path) -> np.ndarray:
    """Per-vertex scalar field, one value per line (first CSV column)."""
    values = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            values.append(float(line.split(",")[0]))
        except ValueError:
            raise MeshError(f"{path}:{lineno}: not a number") from None
    return np.asarray(values)


def save_field(values, path) -> None:
    Path(path).write_text("".join(_fmt(v) + "\n" for v in np.asarray(values, dtype=float)))


# ---------------------------------------------------------------------------
# standard domains

def icosphere(subdivisions: int = 3) -> TriMesh:
    """Unit icosphere, outward oriented. ``subdivisions=0`` is the icosahedron."""
    if not 0 <= subdivisions <= 8:
        raise MeshError("subdivisions must be in [0, 8]")
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
        uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(3, -1)
        mid = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        base = len(verts)
        verts = np.vstack([verts, mid])
        a, b, c = faces.T
        ab, bc, ca = inverse + base
        faces = np.concatenate([
            np.column_stack([a, ab, ca]),
            np.column_stack([b, bc, ab]),
            np.column_stack([c, ca, bc]),
            np.column_stack([ab, bc, ca]),
        ])
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    return orient_outward(TriMesh(verts, faces))


def disk_mesh(rings: int = 24) -> TriMesh:
    """Concentric-ring mesh of the closed unit disk.

    Ring ``k`` has radius ``k / rings`` and ``6k`` vertices starting at angle 0;
    the last ``6 * rings`` vertices form the counterclockwise boundary loop.
    """
    if rings < 1:
        raise MeshError("rings must be positive")
    pts = [np.zeros((1, 2))]
    starts = [0]
    for k in range(1, rings + 1):
        theta = 2 * np.pi * np.arange(6 * k) / (6 * k)
        pts.append(k / rings * np.column_stack([np.cos(theta), np.sin(theta)]))
        starts.append(starts[-1] + (1 if k == 1 else 6 * (k - 1)))
    verts = np.vstack(pts)
    faces = []
    for k in range(1, rings + 1):
        n_out = 6 * k
        outer = starts[k] + np.arange(n_out)
        if k == 1:
            faces.extend([0, outer[j], outer[(j + 1) % n_out]] for j in range(n_out))
            continue
        n_in = 6 * (k - 1)
        inner = starts[k - 1] + np.arange(n_in)
        i = j = 0
        while i < n_in or j < n_out:
            # advance the ring whose next vertex comes first by angle
            next_in = (i + 1) / n_in
            next_out = (j + 1) / n_out
            if j >= n_out or (i < n_in and next_in < next_out):
                faces.append([inner[i % n_in], outer[j % n_out], inner[(i + 1) % n_in]])
                i += 1
            else:
                faces.append([inner[i % n_in], outer[j % n_out], outer[(j + 1) % n_out]])
                j += 1
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def disk_ring_indices(rings: int, k: int) -> np.ndarray:
    """Vertex indices of ring ``k`` of ``disk_mesh(rings)``."""
    if k == 0:
        return np.array([0])
    start = 1 + 3 * k * (k - 1)
    return start + np.arange(6 * k)


# ---------------------------------------------------------------------------
# topology

def boundary_vertices(mesh: TriMesh) -> np.ndarray:
    """Sorted ids of all vertices on boundary edges (any number of loops)."""
    e = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]]), axis=1)
    keys, counts = np.unique(e, axis=0, return_counts=True)
    return np.unique(keys[counts == 1])


def boundary_loop(mesh: TriMesh) -> np.ndarray:
    """Counterclockwise cycle of boundary vertices; empty for closed meshes."""
    f = mesh.faces
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    keys = np.sort(directed, axis=1)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    bdry = directed[counts[inv.ravel()] == 1]
    if len(bdry) == 0:
        return np.array([], dtype=np.int64)
    nxt = {}
    for a, b in bdry:
        if a in nxt:
            raise MeshError("non-manifold boundary vertex")
        nxt[int(a)] = int(b)
    start = int(bdry[:, 0].min())
    loop = [start]
    cur = nxt[start]
    while cur != start:
        loop.append(cur)
        cur = nxt[cur]
    if len(loop) != len(bdry):
        raise MeshError("mesh has multiple boundary loops")
    loop = np.array(loop, dtype=np.int64)
    # face winding gives the loop direction; report it counterclockwise in 2D
    if mesh.dim == 2:
        p = mesh.vertices[loop]
        area = 0.5 * np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1])
        if area < 0:
            loop = loop[::-1]
    return loop


def vertex_neighbors(mesh: TriMesh) -> list[np.ndarray]:
    e = mesh.edges()
    adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(mesh.n_vertices,) * 2)
    adj = (adj + adj.T).tocsr()
    return [adj.indices[adj.indptr[i]:adj.indptr[i + 1]] for i in range(mesh.n_vertices)]


# ---------------------------------------------------------------------------
# geometry

def _edge_cotangents(mesh: TriMesh, positions=None):
    x = mesh.embed3d() if positions is None else np.asarray(positions, dtype=float)
    if x.shape[1] == 2:
        x = np.column_stack([x, np.zeros(len(x))])
    f = mesh.faces
    cots = np.empty((len(f), 3))
    for c in range(3):
        # angle at corner c is opposite the edge (c+1, c+2)
        o, a, b = f[:, c], f[:, (c + 1) % 3], f[:, (c + 2) % 3]
        u = x[a] - x[o]
        v = x[b] - x[o]
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        if np.any(cross <= 1e-300):
            raise MeshError(f"zero-area face {int(np.flatnonzero(cross <= 1e-300)[0])}")
        cots[:, c] = np.einsum("ij,ij->i", u, v) / cross
    return cots


def cotangent_laplacian(mesh: TriMesh, positions=None) -> sp.csr_matrix:
    """Cotangent weight matrix ``L`` with ``(L v)_i = sum_j w_ij (v_j - v_i)``.

    Off-diagonal entries are ``w_ij = (cot a_ij + cot b_ij) / 2``; rows sum to zero.
    """
    cots = _edge_cotangents(mesh, positions)
    f = mesh.faces
    rows, cols, vals = [], [], []
    for c in range(3):
        a, b = f[:, (c + 1) % 3], f[:, (c + 2) % 3]
        w = 0.5 * cots[:, c]
        rows += [a, b]
        cols += [b, a]
        vals += [w, w]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    n = mesh.n_vertices
    W = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    diag = np.asarray(W.sum(axis=1)).ravel()
    return (W - sp.diags(diag)).tocsr()


def face_normals(mesh: TriMesh, positions=None) -> np.ndarray:
    """Unnormalized normals ``(x_i - x_k) x (x_j - x_i)`` per face ``(i, j, k)``."""
    x = mesh.vertices if positions is None else np.asarray(positions, dtype=float)
    i, j, k = mesh.faces.T
    return np.cross(x[i] - x[k], x[j] - x[i])


def orient_outward(mesh: TriMesh) -> TriMesh:
    """Swap ``j, k`` on every face whose normal points toward the sphere center."""
    n = face_normals(mesh)
    test = np.einsum("ij,ij->i", n, mesh.vertices[mesh.faces[:, 0]])
    if np.any(np.abs(test) < 1e-12):
        raise MeshError(f"degenerate face orientation at face {int(np.argmin(np.abs(test)))}")
    flip = test < 0
    if not flip.any():
        return mesh
    faces = mesh.faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return mesh.with_faces(faces)


def signed_face_areas(mesh: TriMesh, positions=None) -> np.ndarray:
    """Signed areas ``|n_T| / 2 * sign(n_T . x_i)`` of ``positions`` on ``mesh.faces``."""
    x = mesh.vertices if positions is None else np.asarray(positions, dtype=float)
    n = face_normals(mesh, x)
    s = np.sign(np.einsum("ij,ij->i", n, x[mesh.faces[:, 0]]))
    return 0.5 * np.linalg.norm(n, axis=1) * s


def planar_signed_areas(mesh: TriMesh, positions=None) -> np.ndarray:
    """Signed areas of the faces of a planar mesh (positive = counterclockwise)."""
    z = mesh.complex_vertices if positions is None else np.asarray(positions)
    if not np.iscomplexobj(z):
        z = z[:, 0] + 1j * z[:, 1]
    a, b, c = (z[mesh.faces[:, k]] for k in range(3))
    return 0.5 * np.imag(np.conj(b - a) * (c - a))


# ---------------------------------------------------------------------------
# barycentric location

@dataclass(frozen=True)
class Barycentric:
    """Point locations: containing face and barycentric weights per point."""

    face_index: np.ndarray
    weights: np.ndarray
    vertex_index: np.ndarray

    def __len__(self):
        return len(self.face_index)

    def matrix(self, n_vertices: int) -> sp.csr_matrix:
        """Sparse ``(n_points, n_vertices)`` interpolation matrix."""
        rows = np.repeat(np.arange(len(self)), 3)
        return sp.csr_matrix(
            (self.weights.ravel(), (rows, self.vertex_index.ravel())),
            shape=(len(self), n_vertices),
        )


def _planar_weights(tri: np.ndarray, p: np.ndarray) -> np.ndarray:
    # tri: (..., 3, 2), p: (..., 2)
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    v0, v1, v2 = b - a, c - a, p - a
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    w1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
    w2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
    return np.stack([1.0 - w1 - w2, w1, w2], axis=-1)


def _gnomonic_weights(tri: np.ndarray, p: np.ndarray) -> np.ndarray:
    # weights of the ray through p hitting the plane of the 3D triangle
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    n = np.cross(b - a, c - a)
    t = np.einsum("...i,...i", n, a) / np.einsum("...i,...i", n, p)
    q = p * t[..., None]
    area = np.einsum("...i,...i", n, n)
    w1 = np.einsum("...i,...i", np.cross(q - a, c - a), n) / area
    w2 = np.einsum("...i,...i", np.cross(b - a, q - a), n) / area
    w = np.stack([1.0 - w1 - w2, w1, w2], axis=-1)
    w[t <= 0] = -np.inf
    return w


def _nearest_on_faces(x, faces, p):
    """Closest boundary point over candidate faces: ``(distance, local face, weights)``."""
    best = (np.inf, 0, None)
    unit = x.shape[1] == 3
    for j, face in enumerate(faces):
        tri = x[face]
        if unit:
            n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            t = (n @ tri[0]) / (n @ p)
            if t <= 0:
                continue
            q = p * t
        else:
            q = p
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e = tri[b] - tri[a]
            s = float(np.clip((q - tri[a]) @ e / (e @ e), 0.0, 1.0))
            w = np.zeros(3)
            w[a], w[b] = 1 - s, s
            proj = w @ tri
            if unit:
                d = np.linalg.norm(proj / np.linalg.norm(proj) - p / np.linalg.norm(p))
            else:
                d = np.linalg.norm(proj - p)
            if d < best[0]:
                best = (d, j, w)
    return best


def _locate(mesh: TriMesh, points: np.ndarray, weight_fn, tol: float) -> Barycentric:
    x = mesh.vertices
    f = mesh.faces
    centroids = x[f].mean(axis=1)
    tree = cKDTree(centroids)
    n = len(points)
    best_face = np.full(n, -1, dtype=np.int64)
    best_w = np.zeros((n, 3))
    best_score = np.full(n, -np.inf)
    k = min(len(f), 16)
    pending = np.arange(n)
    while len(pending):
        _, cand = tree.query(points[pending], k=k)
        cand = np.atleast_2d(cand).reshape(len(pending), -1)
        w = weight_fn(x[f[cand]], points[pending][:, None, :])
        score = w.min(axis=2)
        pick = np.argmax(score, axis=1)
        rows = np.arange(len(pending))
        s = score[rows, pick]
        better = s > best_score[pending]
        idx = pending[better]
        best_score[idx] = s[better]
        best_face[idx] = cand[rows, pick][better]
        best_w[idx] = w[rows, pick][better]
        inside = best_score[pending] >= -1e-12
        if k >= len(f):
            break
        pending = pending[~inside]
        k = min(len(f), k * 4)
    # accept near misses within tol of the surface, measured in coordinates
    miss = np.flatnonzero(best_score < -1e-12)
    if len(miss):
        _, cand = tree.query(points[miss], k=min(len(f), 16))
        cand = np.atleast_2d(cand).reshape(len(miss), -1)
        for row, i in enumerate(miss):
            dist, face, w = _nearest_on_faces(x, f[cand[row]], points[i])
            if dist > tol:
                raise MeshError(f"point {i} at {points[i].tolist()} lies outside the mesh")
            best_face[i] = cand[row][face]
            best_w[i] = w
    w = np.where(best_w < 0, 0.0, best_w)
    w /= w.sum(axis=1, keepdims=True)
    return Barycentric(best_face, w, f[best_face])


def locate_barycentric(mesh2d: TriMesh, points, tol: float = 1e-9) -> Barycentric:
    """Find the containing face and barycentric weights of planar points.

    ``points`` may be complex or ``(n, 2)`` real. Points farther than ``tol``
    outside the mesh raise :class:`MeshError`.
    """
    pts = np.asarray(points)
    if np.iscomplexobj(pts):
        pts = np.column_stack([pts.real, pts.imag])
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if mesh2d.dim != 2:
        raise MeshError("locate_barycentric needs a planar mesh")
    return _locate(mesh2d, pts, _planar_weights, tol)


def locate_on_sphere(mesh: TriMesh, points, tol: float = 1e-9) -> Barycentric:
    """Locate unit vectors on a closed sphere mesh by central projection."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return _locate(mesh, pts, _gnomonic_weights, tol)


def interpolate(handles: Barycentric, values) -> np.ndarray:
    """Barycentric combination of per-vertex ``values`` at located points."""
    values = np.asarray(values)
    if handles.vertex_index.size and handles.vertex_index.max() >= len(values):
        raise MeshError("values do not match the located mesh")
    w = handles.weights
    picked = values[handles.vertex_index]
    if picked.ndim == 2:
        return np.einsum("ij,ij->i", w, picked)
    return np.einsum("ij,ij...->i...", w, picked)
