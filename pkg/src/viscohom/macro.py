"""Time integration of the homogenized equation.

Semi-discrete form on the free (interior) degrees of freedom::

    M a + (D + P) v + (K + K_v) u + K_m I = F,     I(t) = int_0^t u

``M`` is the ``rho0`` mass, ``K`` the ``C0`` stiffness, ``D`` the ``C1``
damping, ``P`` the weak pressure coupling ``-int (H : grad v) div psi``,
``K_v`` the fluid memory stiffness and ``K_m`` the solid memory stiffness
acting on the running time integral (see :mod:`viscohom.homogenizer`).
Stepping uses the average-acceleration Newmark scheme (beta = 1/4,
gamma = 1/2); the running integral uses the trapezoid rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .csvio import COLUMNS, write_csv
from .errors import SolverDiverged
from .fem import (
    ConstraintSet,
    assemble_mass,
    assemble_vector_elliptic,
    is_symmetric,
    node_dofs,
    solve_spd,
)
from .geometry import FLUID, StructuredMesh
from .homogenizer import EffectiveModel

BETA, GAMMA = 0.25, 0.5


def macro_mesh(n: int, resolution: int, lengths=None) -> StructuredMesh:
    """Uniform Dirichlet mesh of the unit box (or ``lengths``)."""
    lengths = (1.0,) * n if lengths is None else tuple(lengths)
    shape = (resolution,) * n
    return StructuredMesh(shape, lengths, False, np.full(resolution**n, FLUID, dtype=np.int8))


@dataclass
class MacroOperators:
    mesh: StructuredMesh
    constraints: ConstraintSet
    M: sp.csr_matrix
    K: sp.csr_matrix
    D: sp.csr_matrix
    P: sp.csr_matrix
    Kv: sp.csr_matrix
    Km: sp.csr_matrix
    unit_mass: sp.csr_matrix  # full vector mass with unit density (loads, norms)

    @property
    def size(self) -> int:
        return self.M.shape[0]

    def load_vector(self, nodal) -> np.ndarray:
        """Consistent load from nodal values, shape (n_nodes, N)."""
        vec = np.asarray(nodal, dtype=float).T.reshape(-1)
        return self.constraints.restrict(self.unit_mass @ vec)


def pressure_coupling_tensor(H, n: int) -> np.ndarray:
    """Tensor of ``(u, psi) -> -int (H : grad u) div psi`` on row-major gradients."""
    vec_i = np.eye(n).reshape(-1)
    return -np.outer(vec_i, np.asarray(H, dtype=float).reshape(-1))


def assemble_macro_system(model: EffectiveModel, mesh: StructuredMesh) -> MacroOperators:
    """Mass, stiffness, damping, pressure coupling and memory operators, Dirichlet-reduced."""
    n = mesh.dimension
    size = n * mesh.n_nodes
    cons = ConstraintSet(size, node_dofs(mesh.boundary_nodes(), mesh.n_nodes, n))

    def elliptic(t):
        if not np.any(t):
            return sp.csr_matrix((cons.free.size, cons.free.size))
        return cons.reduce(assemble_vector_elliptic(mesh, np.asarray(t), check=False)).tocsr()

    unit = assemble_mass(mesh, 1.0)
    return MacroOperators(
        mesh,
        cons,
        (cons.reduce(unit) * model.rho0).tocsr(),
        elliptic(model.C0),
        elliptic(model.C1),
        elliptic(pressure_coupling_tensor(model.H, n)),
        elliptic(model.C1_memory),
        elliptic(model.C0_memory),
        unit.tocsr(),
    )


@dataclass
class MacroState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    step: int
    dt: float
    integral: np.ndarray = None  # running int_0^t u

    def __post_init__(self):
        if self.integral is None:
            self.integral = np.zeros_like(self.u)

    @classmethod
    def zero(cls, size: int, dt: float) -> "MacroState":
        z = np.zeros(size)
        return cls(z.copy(), z.copy(), z.copy(), 0, dt)

    @property
    def time(self) -> float:
        return self.step * self.dt


class NewmarkStepper:
    """Holds the step matrix for a fixed ``dt`` and advances states."""

    def __init__(self, ops: MacroOperators, dt: float, tol: float = 1e-12):
        if dt <= 0:
            raise ValueError("time step must be positive")
        self.ops, self.dt, self.tol = ops, dt, tol
        c = ops.D + ops.P
        self.C = c
        self.Kt = ops.K + ops.Kv
        self.S = (
            ops.M + (GAMMA * dt) * c + (BETA * dt**2) * self.Kt
            + (0.5 * dt * BETA * dt**2) * ops.Km
        ).tocsr()
        self.symmetric = is_symmetric(self.S)
        self._lu = None
        self._prev = None

    def initial_acceleration(self, force) -> np.ndarray:
        """``M a0 = F(0)`` for zero initial displacement and velocity."""
        if not np.any(force):
            return np.zeros_like(force)
        return solve_spd(self.ops.M, force, tol=self.tol)

    def _solve(self, rhs):
        if not np.any(rhs):
            return np.zeros_like(rhs)
        if self.symmetric:
            x = solve_spd(self.S, rhs, tol=self.tol, x0=self._prev)
        else:
            # nonsymmetric pressure coupling: factor the fixed step matrix once
            if self._lu is None:
                self._lu = spla.splu(sp.csc_matrix(self.S))
            x = self._lu.solve(rhs)
            x += self._lu.solve(rhs - self.S @ x)
            if not np.all(np.isfinite(x)):
                raise SolverDiverged("macro step solve produced non-finite values")
        self._prev = x
        return x

    def step(self, state: MacroState, force_next) -> MacroState:
        dt = self.dt
        ops = self.ops
        u_pred = state.u + dt * state.v + (0.5 - BETA) * dt**2 * state.a
        v_pred = state.v + (1 - GAMMA) * dt * state.a
        i_pred = state.integral + 0.5 * dt * (state.u + u_pred)
        rhs = force_next - self.C @ v_pred - self.Kt @ u_pred - ops.Km @ i_pred
        a = self._solve(rhs)
        u = u_pred + BETA * dt**2 * a
        v = v_pred + GAMMA * dt * a
        integral = state.integral + 0.5 * dt * (state.u + u)
        return MacroState(u, v, a, state.step + 1, dt, integral)


def step_newmark(state: MacroState, ops: MacroOperators, force_next, stepper=None) -> MacroState:
    """One average-acceleration step; pass ``stepper`` to reuse the step matrix."""
    stepper = stepper or NewmarkStepper(ops, state.dt)
    return stepper.step(state, force_next)


@dataclass
class MacroTrajectory:
    times: np.ndarray
    U: np.ndarray  # (steps + 1, free dofs)
    V: np.ndarray
    energy: dict
    ops: MacroOperators = field(repr=False, default=None)

    def full_field(self, k: int, which: str = "u") -> np.ndarray:
        arr = self.U if which == "u" else self.V
        return self.ops.constraints.expand(arr[k])

    def l2_norms(self, which: str = "u") -> np.ndarray:
        arr = self.U if which == "u" else self.V
        m = self.ops.constraints.reduce(self.ops.unit_mass)
        return np.sqrt(np.einsum("ki,ki->k", arr, (m @ arr.T).T))

    def write_csv(self, path) -> None:
        cols = COLUMNS["macro_trajectory"]
        un, vn = self.l2_norms("u"), self.l2_norms("v")
        rows = ([float(t), float(un[k]), float(vn[k])] + [float(self.energy[c][k]) for c in cols[3:]]
                for k, t in enumerate(self.times))
        write_csv(path, "macro_trajectory", cols, rows)


def energy_terms(ops: MacroOperators, u, v):
    kinetic = 0.5 * v @ (ops.M @ v)
    elastic = 0.5 * u @ ((ops.K + ops.Kv) @ u)
    return kinetic, elastic


def solve_macro(
    model: EffectiveModel,
    mesh: StructuredMesh,
    f: Callable,
    g: Callable,
    T: float,
    dt: float,
    ops: Optional[MacroOperators] = None,
    tol: float = 1e-12,
) -> MacroTrajectory:
    """Integrate from zero initial data with load ``F = w1 f + w2 g``.

    ``f`` and ``g`` map ``(points, t)`` to nodal vectors of shape (n_nodes, N).
    The energy log holds cumulative work ``sum du . F_mid``, viscous and
    coupling dissipation ``sum dt v_mid (D + P) v_mid`` and memory work
    ``sum du . K_m I_mid``, so that ``kinetic + elastic = work - dissipated -
    memory_work`` up to the linear-solver tolerance.
    """
    ops = ops or assemble_macro_system(model, mesh)
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be an integer multiple of dt")
    x = mesh.vertices

    def force(t):
        return ops.load_vector(model.load(f(x, t), g(x, t)))

    stepper = NewmarkStepper(ops, dt, tol)
    state = MacroState.zero(ops.size, dt)
    F_prev = force(0.0)
    state.a = stepper.initial_acceleration(F_prev)
    U = np.zeros((steps + 1, ops.size))
    V = np.zeros_like(U)
    log = {k: np.zeros(steps + 1) for k in
           ("kinetic", "elastic", "dissipated", "work", "memory_work", "balance_residual")}
    for k in range(1, steps + 1):
        F_next = force(k * dt)
        new = stepper.step(state, F_next)
        du = new.u - state.u
        vm = 0.5 * (new.v + state.v)
        im = 0.5 * (new.integral + state.integral)
        log["work"][k] = log["work"][k - 1] + du @ (0.5 * (F_prev + F_next))
        log["dissipated"][k] = log["dissipated"][k - 1] + dt * vm @ (stepper.C @ vm)
        log["memory_work"][k] = log["memory_work"][k - 1] + du @ (ops.Km @ im)
        log["kinetic"][k], log["elastic"][k] = energy_terms(ops, new.u, new.v)
        U[k], V[k] = new.u, new.v
        state, F_prev = new, F_next
        bal = log["kinetic"][k] + log["elastic"][k] - (
            log["work"][k] - log["dissipated"][k] - log["memory_work"][k])
        scale = max(log["kinetic"][k] + log["elastic"][k], abs(log["work"][k]), 1e-300)
        log["balance_residual"][k] = abs(bal) / scale
    return MacroTrajectory(np.arange(steps + 1) * dt, U, V, log, ops)
