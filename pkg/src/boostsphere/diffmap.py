"""Differentiable chart map: activated coefficients and pins -> LSQC solve -> similarity.

``forward`` evaluates

    f = s e^{i phi} LSQC(mean_T(act(mu_raw, T_bc)), pins -> themselves) + r

and keeps a tape; ``vjp`` returns the exact gradient of ``Re <G, f>`` with
respect to every chart parameter using one adjoint solve with the forward
factorization.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

import numpy as np

from . import lsqc
from .mesh import TriMesh

MU_CAP = 1.0 - 2.0 * lsqc.ADMISSIBLE_MARGIN
ACTIVATION_CAP = 1.0 - 1e-15


class TapeError(RuntimeError):
    pass


@dataclass
class ChartParams:
    """Trainable parameters of one chart.

    Complex fields hold gradients as ``dL/dRe + i dL/dIm`` when the dataclass
    is used as a gradient container.
    """

    mu_raw: np.ndarray
    temp_bc: float = 1.0
    pins_raw: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=complex))
    temp_pin: float = 1.0
    rot: float = 0.0
    scale: float = 1.0
    trans: complex = 0j

    def __post_init__(self):
        self.mu_raw = np.asarray(self.mu_raw, dtype=complex)
        self.pins_raw = np.asarray(self.pins_raw, dtype=complex).reshape(2)

    @classmethod
    def identity(cls, disk: TriMesh, pin_vertices=None) -> "ChartParams":
        """Parameters whose forward map is the identity of ``disk``.

        Default pins are the center vertex and the vertex nearest ``+1`` on the
        ring just inside the boundary (pins must stay strictly inside the disk).
        """
        z = disk.complex_vertices
        if pin_vertices is None:
            r = np.abs(z)
            inner = np.flatnonzero(r < r.max() - 1e-12)
            pin_vertices = (int(np.argmin(r)), int(inner[np.argmin(np.abs(z[inner] - 1))]))
        pins = z[list(pin_vertices)]
        return cls(np.zeros(disk.n_vertices, dtype=complex), 1.0, activate_inverse(pins, 1.0), 1.0)

    def zeros_like(self) -> "ChartParams":
        return ChartParams(np.zeros_like(self.mu_raw), 0.0, np.zeros(2, dtype=complex), 0.0, 0.0, 0.0, 0j)

    def copy(self) -> "ChartParams":
        return copy.deepcopy(self)

    def flatten(self) -> np.ndarray:
        """Real vector view ``[Re mu, Im mu, T_bc, Re p, Im p, T_pin, phi, s, Re r, Im r]``."""
        return np.concatenate([
            self.mu_raw.real, self.mu_raw.imag, [self.temp_bc],
            self.pins_raw.real, self.pins_raw.imag, [self.temp_pin],
            [self.rot, self.scale, np.real(self.trans), np.imag(self.trans)],
        ])

    @classmethod
    def unflatten(cls, vec, n_vertices: int) -> "ChartParams":
        v = np.asarray(vec, dtype=float)
        n = n_vertices
        mu = v[:n] + 1j * v[n:2 * n]
        o = 2 * n
        return cls(mu, v[o], v[o + 1:o + 3] + 1j * v[o + 3:o + 5], v[o + 5],
                   v[o + 6], v[o + 7], complex(v[o + 8], v[o + 9]))


def activate(x, temperature):
    """``tanh(|x| / T) e^{i arg x}``; maps the plane into the open unit disk."""
    if np.any(np.asarray(temperature) <= 0):
        raise ValueError("temperature must be positive")
    x = np.asarray(x, dtype=complex)
    rho = np.abs(x)
    t = rho / temperature
    small = t < 1e-4
    # tanh rounds to 1 for large arguments; keep the image strictly inside the disk
    mod = np.minimum(np.tanh(t), ACTIVATION_CAP)
    ratio = np.where(small, (1 - t * t / 3) / temperature, mod / np.where(small, 1, rho))
    out = ratio * x
    return out[()] if out.ndim == 0 else out


def activate_inverse(y, temperature):
    y = np.asarray(y, dtype=complex)
    r = np.abs(y)
    if np.any(r >= 1):
        raise ValueError("activated values must lie in the open unit disk")
    return np.where(r > 0, temperature * np.arctanh(r) / np.where(r > 0, r, 1) * y, 0j)


def activate_vjp(x, temperature, grad_out):
    """Gradients of ``Re <grad_out, activate(x, T)>`` w.r.t. ``x`` (complex) and ``T``."""
    x = np.asarray(x, dtype=complex)
    g = np.asarray(grad_out, dtype=complex)
    T = float(temperature)
    rho = np.abs(x)
    t = rho / T
    small = t < 1e-3
    safe = np.where(small, 1.0, rho)
    sech2 = 1.0 / np.cosh(t) ** 2
    h = np.where(small, (1 - t * t / 3) / T, np.tanh(t) / safe)
    dh_over_rho = np.where(
        small,
        (-2.0 / 3.0 + 8.0 * t * t / 15.0) / T ** 3,
        (safe * sech2 / T - np.tanh(t)) / safe ** 3,
    )
    gx = h * g + dh_over_rho * np.real(np.conj(g) * x) * x
    gT = np.sum(np.real(np.conj(g) * (-x * sech2 / T ** 2)))
    return gx, float(gT)


def pin_snap(pins, mesh2d: TriMesh, tie_tol: float = 1e-12):
    """Nearest mesh vertex to each pin, ties broken by lowest index."""
    z = mesh2d.complex_vertices
    out = []
    for p in np.asarray(pins, dtype=complex).reshape(-1):
        dist = np.abs(z - p)
        out.append(int(np.flatnonzero(dist <= dist.min() + tie_tol)[0]))
    if out[0] == out[1]:
        raise lsqc.LsqcError("coincident pins")
    return out[0], out[1]


@dataclass
class ChartMap:
    """Chart image of the standard disk mesh, with the similarity that produced it."""

    positions: np.ndarray
    raw: np.ndarray
    rot: float = 0.0
    scale: float = 1.0
    trans: complex = 0j


@dataclass
class ForwardTape:
    mesh: TriMesh
    params: ChartParams
    mu_vertex: np.ndarray
    mu_clamped: np.ndarray
    mu_face: np.ndarray
    pin_index: tuple
    pin_targets: np.ndarray
    system: lsqc.LsqcSystem
    factor: lsqc.Factor
    raw: np.ndarray
    consumed: bool = False


def forward(mesh2d: TriMesh, params: ChartParams, max_direct: int = 250_000):
    """Evaluate the chart map and return ``(ChartMap, ForwardTape)``."""
    mu_v = activate(params.mu_raw, params.temp_bc)
    mod = np.abs(mu_v)
    clamped = mod > MU_CAP
    mu_v = np.where(clamped, mu_v * (MU_CAP / np.where(clamped, mod, 1)), mu_v)
    mu_f = lsqc.face_bc_from_vertex_bc(mesh2d, mu_v).values
    pins = activate(params.pins_raw, params.temp_pin)
    idx = pin_snap(pins, mesh2d)
    system = lsqc.assemble(mesh2d, mu_f, [(idx[0], pins[0]), (idx[1], pins[1])])
    sol = lsqc.solve_system(system, max_direct=max_direct)
    a = params.scale * np.exp(1j * params.rot)
    out = a * sol.positions + params.trans
    tape = ForwardTape(mesh2d, params.copy(), mu_v, clamped, mu_f, idx, pins, system,
                       sol.factor, sol.positions)
    return ChartMap(out, sol.positions, params.rot, params.scale, params.trans), tape


def vjp(tape: ForwardTape, cotangent, extra_mu_grad=None) -> ChartParams:
    """Exact gradient of ``sum Re(conj(cotangent) * f)`` for every chart parameter.

    ``extra_mu_grad`` is an additional gradient with respect to the activated
    per-vertex coefficients (from regularizers acting on them directly).
    """
    if tape.consumed:
        raise TapeError("tape already consumed by a previous vjp call")
    tape.consumed = True
    G = np.asarray(cotangent, dtype=complex)
    p = tape.params
    mesh = tape.mesh
    U = tape.raw
    e = np.exp(1j * p.rot)
    a = p.scale * e
    grad = p.zeros_like()
    grad.trans = complex(G.sum())
    grad.scale = float(np.real(np.vdot(G, e * U)))
    grad.rot = float(np.real(np.vdot(G, 1j * a * U)))
    GU = np.conj(a) * G

    system = tape.system
    lam = np.zeros_like(U)
    if np.any(GU[system.free]):
        lam[system.free] = tape.factor.solve(GU[system.free])
    r = system.M @ U
    s = system.M @ lam
    _, dW = lsqc.stencil(mesh, tape.mu_face)
    C_lam = np.sum(dW * lam[mesh.faces], axis=1)
    C_U = np.sum(dW * U[mesh.faces], axis=1)
    g_mu_face = -(r * np.conj(C_lam) + s * np.conj(C_U))
    g_pins = GU[system.pins] - system.M_pinned.conj().T @ s

    g_mu_v = np.zeros(mesh.n_vertices, dtype=complex)
    np.add.at(g_mu_v, mesh.faces.ravel(), np.repeat(g_mu_face / 3.0, 3))
    if extra_mu_grad is not None:
        g_mu_v += np.asarray(extra_mu_grad, dtype=complex)
    g_mu_v[tape.mu_clamped] = 0.0
    grad.mu_raw, grad.temp_bc = activate_vjp(p.mu_raw, p.temp_bc, g_mu_v)
    grad.pins_raw, grad.temp_pin = activate_vjp(p.pins_raw, p.temp_pin, g_pins)
    return grad


def param_names() -> list[str]:
    return [f.name for f in fields(ChartParams)]
