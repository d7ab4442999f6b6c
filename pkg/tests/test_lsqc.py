import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boostsphere.lsqc import (
    BeltramiField,
    LsqcError,
    Site,
    assemble,
    bc_from_map,
    energy,
    face_bc_from_vertex_bc,
    face_geometry,
    lsqc_map,
    refine_and_extend,
    solve,
    solve_system,
)
from boostsphere.mesh import TriMesh, disk_mesh, planar_signed_areas


def fan_mesh(n, rng):
    """Convex polygon triangulated as a fan from vertex 0: |F| = |V| - 2."""
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = rng.uniform(0.7, 1.3, n)
    v = np.column_stack([r * np.cos(t), r * np.sin(t)])
    faces = np.array([[0, i, i + 1] for i in range(1, n - 1)])
    m = TriMesh(v, faces)
    area = planar_signed_areas(m)
    # keep only polygons whose fan triangles are all positively oriented
    return m if np.all(area > 1e-3) else fan_mesh(n, rng)


def random_mu(rng, n, bound=0.5):
    return bound * np.sqrt(rng.random(n)) * np.exp(2j * np.pi * rng.random(n))


def test_bc_examples():
    m = disk_mesh(3)
    z = m.complex_vertices
    assert np.abs(bc_from_map(m, z).values).max() < 1e-14
    assert np.abs(bc_from_map(m, 2 * z + 3).values).max() < 1e-14
    tri = TriMesh(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 1, 2]]))
    assert bc_from_map(tri, np.array([0, 2, 1j])).values[0] == pytest.approx(1 / 3)


def test_bc_degenerate_conformal_factor_names_face():
    tri = TriMesh(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 1, 2]]))
    # f(z) = conj(z) has f_z = 0
    with pytest.raises(LsqcError, match="degenerate conformal factor on face 0"):
        bc_from_map(tri, np.array([0, 1, -1j]))


def test_face_from_vertex_examples():
    tri = TriMesh(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 1, 2]]))
    assert face_bc_from_vertex_bc(tri, [0, 0.3, 0.6j]).values[0] == pytest.approx(0.1 + 0.2j)
    m = disk_mesh(3)
    assert np.allclose(face_bc_from_vertex_bc(m, np.full(m.n_vertices, 0.2 - 0.1j)).values, 0.2 - 0.1j)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_face_mean_modulus_bounded(seed):
    m = disk_mesh(3)
    mu = random_mu(np.random.default_rng(seed), m.n_vertices, 0.9)
    assert face_bc_from_vertex_bc(m, mu).sup_norm <= np.abs(mu).max() + 1e-15


def test_beltrami_field_validation():
    m = disk_mesh(2)
    with pytest.raises(LsqcError):
        BeltramiField(np.zeros(3), Site.FACE, m)
    with pytest.raises(LsqcError):
        BeltramiField([np.nan], Site.FACE)


def test_assembly_structure_and_zero_mu_stencil():
    m = disk_mesh(3)
    sysm = assemble(m, np.zeros(m.n_faces), [(0, 0), (10, m.complex_vertices[10])])
    assert np.all(np.diff(sysm.M.indptr) == 3)
    dx, dy, d = face_geometry(m)
    W = (dx + 1j * dy) / np.sqrt(np.abs(d))[:, None]
    for f in (0, 5, 17):
        row = sysm.M.getrow(f)
        assert np.allclose(row[0, m.faces[f]].toarray().ravel(), W[f])
    assert sysm.A.shape == (2 * m.n_faces, 2 * (m.n_vertices - 2))


def test_assembly_errors():
    m = disk_mesh(2)
    mu = np.zeros(m.n_faces, dtype=complex)
    mu[4] = 0.9999995
    with pytest.raises(LsqcError, match="face 4"):
        assemble(m, mu, [(0, 0), (1, 1)])
    with pytest.raises(LsqcError, match="coincident"):
        assemble(m, np.zeros(m.n_faces), [(3, 0), (3, 1)])


def test_equilateral_identity_energy_zero():
    h = np.sqrt(3) / 2
    tri = TriMesh(np.array([[0, 0], [1, 0], [0.5, h]]), np.array([[0, 1, 2]]))
    assert energy(tri, [0], tri.complex_vertices) == 0


def test_energy_identity_with_constant_mu():
    m = disk_mesh(4)
    mu = 0.3 + 0.4j
    _, _, d = face_geometry(m)
    e = energy(m, np.full(m.n_faces, mu), m.complex_vertices)
    assert e == pytest.approx(4 * abs(mu) ** 2 * np.abs(d).sum(), rel=1e-12)


def test_energy_matches_residual_from_real_blocks():
    rng = np.random.default_rng(1)
    m = disk_mesh(5)
    mu = random_mu(rng, m.n_faces, 0.6)
    s = assemble(m, mu, [(0, 0.1j), (40, 0.8)])
    sol = solve_system(s)
    u = sol.positions[s.free]
    r = s.A @ np.concatenate([u.real, u.imag]) - s.b
    assert energy(m, mu, sol.positions) == pytest.approx(r @ r, rel=1e-10, abs=1e-14)
    assert sol.residual == pytest.approx(r @ r, rel=1e-10, abs=1e-14)


def test_solution_solves_real_normal_equations():
    rng = np.random.default_rng(2)
    m = disk_mesh(4)
    s = assemble(m, random_mu(rng, m.n_faces, 0.5), [(0, 0), (30, 1)])
    U = solve(s)
    u = np.concatenate([U[s.free].real, U[s.free].imag])
    A = s.A.toarray()
    assert np.allclose(A.T @ A @ u, A.T @ s.b, atol=1e-10)


def test_solve_identity_and_scaling():
    m = disk_mesh(4)
    z = m.complex_vertices
    b = int(np.argmin(np.abs(z - 1)))
    U = lsqc_map(m, np.zeros(m.n_faces), [(0, 0), (b, 1)])
    assert np.abs(U - z).max() < 1e-8
    U2 = lsqc_map(m, np.zeros(m.n_faces), [(0, 0), (b, 2)])
    assert np.abs(U2 - 2 * z).max() < 1e-8


def test_solve_is_deterministic_and_minimal():
    rng = np.random.default_rng(3)
    m = disk_mesh(4)
    mu = random_mu(rng, m.n_faces, 0.5)
    pins = [(0, 0), (20, 0.7 + 0.1j)]
    U = lsqc_map(m, mu, pins)
    assert np.array_equal(U, lsqc_map(m, mu, pins))
    e0 = energy(m, mu, U)
    free = np.setdiff1d(np.arange(m.n_vertices), [0, 20])
    for _ in range(100):
        V = U.copy()
        V[free] += 1e-3 * (rng.normal(size=len(free)) + 1j * rng.normal(size=len(free)))
        assert energy(m, mu, V) >= e0


@pytest.mark.parametrize("seed", range(5))
def test_exact_on_fan_meshes(seed):
    rng = np.random.default_rng(seed)
    m = fan_mesh(rng.integers(4, 12), rng)
    mu = random_mu(rng, m.n_faces)
    U = lsqc_map(m, mu, [(0, 0.1), (1, 1 + 0.5j)])
    assert np.abs(bc_from_map(m, U).values - mu).max() < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_similarity_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = disk_mesh(4)
    mu = random_mu(rng, m.n_faces)
    q = np.array([0.05j, 0.6 - 0.2j])
    base = lsqc_map(m, mu, [(0, q[0]), (25, q[1])])
    z0 = complex(rng.normal(), rng.normal())
    t = complex(rng.normal(), rng.normal())
    moved = lsqc_map(m, mu, [(0, z0 * q[0] + t), (25, z0 * q[1] + t)])
    assert np.abs(moved - (z0 * base + t)).max() < 1e-8 * max(1, abs(z0), abs(t))


def test_refine_and_extend_resolution_independence():
    rng = np.random.default_rng(4)
    m = disk_mesh(4)
    mu = random_mu(rng, m.n_faces)
    pins = [(0, 0), (30, 1)]
    U = lsqc_map(m, mu, pins)
    face = 11
    w = np.full(3, 1 / 3)
    fine, mu_ext, U_ext = refine_and_extend(m, mu, U, face, w)
    assert fine.n_faces == m.n_faces + 2 and fine.n_vertices == m.n_vertices + 1
    assert np.all(planar_signed_areas(fine) > 0)
    U_fine = lsqc_map(fine, mu_ext, pins)
    assert np.abs(U_fine - U_ext).max() < 1e-8
    children = [face, m.n_faces, m.n_faces + 1]
    assert np.abs(bc_from_map(fine, U_ext).values[children] - bc_from_map(m, U).values[face]).max() < 1e-10
    assert energy(fine, mu_ext, U_ext) == pytest.approx(energy(m, mu, U), abs=1e-10)


def test_refine_rejects_edge_points():
    m = disk_mesh(2)
    with pytest.raises(LsqcError):
        refine_and_extend(m, np.zeros(m.n_faces), m.complex_vertices, 0, [0.5, 0.5, 0])


@pytest.mark.parametrize("bound", [0.5, 0.8])
def test_solved_maps_are_bijective_for_moderate_mu(bound):
    m = disk_mesh(8)
    # smooth coefficient field: folds are a discretization artifact of rough fields
    z = m.complex_vertices
    mu_v = bound * np.exp(1j * 3 * np.angle(z + 0.1)) * np.abs(z)
    mu = face_bc_from_vertex_bc(m, mu_v).values
    U = lsqc_map(m, mu, [(0, 0), (int(np.argmin(np.abs(z - 7 / 8))), 1)])
    img = m.with_positions(np.column_stack([U.real, U.imag]))
    assert np.all(planar_signed_areas(img) > 0)


def test_cg_fallback_matches_direct():
    rng = np.random.default_rng(6)
    m = disk_mesh(5)
    mu = random_mu(rng, m.n_faces)
    s = assemble(m, mu, [(0, 0), (40, 1)])
    direct = solve_system(s).positions
    iterative = solve_system(assemble(m, mu, [(0, 0), (40, 1)]), max_direct=0).positions
    assert np.abs(direct - iterative).max() < 1e-8
