"""Monolithic eps-scale solver in the global displacement field.

One nodal field ``u`` carries the solid displacement and the fluid
displacement ``w`` (whose time derivative is the fluid velocity), so the
adherence and stress-continuity interface conditions hold by construction.
Per step we solve for the acceleration ``a`` and the fluid pressure ``p``::

    M a + D v + K u + K_A1 h_A + K_B1 h_B + B^T p = F
    B v - S p = 0

``M`` uses the phase density, ``K`` the solid stiffness ``A0`` on solid
cells, ``D`` the fluid viscosity ``B0`` on fluid cells, ``B`` the divergence
on fluid cells and ``S`` a Brezzi-Pitkaranta stabilization. ``h_A`` and
``h_B`` are trapezoid convolutions of the displacement and velocity histories
with the fast-time kernel profiles ``k((t - s) / eps)``. Time stepping is
average-acceleration Newmark; the current-step convolution weight is kept in
the step matrix, so every term is implicit and the step matrix is constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .csvio import COLUMNS, write_csv
from .errors import PhaseError, SolverDiverged
from .fem import (
    ConstraintSet,
    assemble_divergence,
    assemble_mass,
    assemble_pressure_laplacian,
    assemble_vector_elliptic,
    broadcast_cells,
    cell_divergence,
    cells_connected,
    check_coercive,
    load_vector,
    node_dofs,
    stabilization_weight,
)
from .geometry import FLUID, SOLID, EpsilonDomain
from .memory import FieldHistory, MemoryKernel, volterra_lagged

BETA, GAMMA = 0.25, 0.5


@dataclass
class FineOperators:
    domain: EpsilonDomain
    constraints: ConstraintSet
    solid: np.ndarray
    fluid: np.ndarray
    M: sp.csr_matrix
    K: sp.csr_matrix
    D: sp.csr_matrix
    KA1: sp.csr_matrix
    KB1: sp.csr_matrix
    B: sp.csr_matrix
    S: sp.csr_matrix
    pressure_nodes: np.ndarray
    pressure_mass: sp.csr_matrix
    rho: np.ndarray  # per cell
    A1: Optional[MemoryKernel]
    B1: Optional[MemoryKernel]
    unit_mass: sp.csr_matrix
    solid_mass: sp.csr_matrix
    fluid_mass: sp.csr_matrix
    solid_grad: sp.csr_matrix
    fluid_grad: sp.csr_matrix

    @property
    def mesh(self):
        return self.domain.mesh

    @property
    def eps(self) -> float:
        return self.domain.eps

    @property
    def size(self) -> int:
        return self.M.shape[0]

    def kernel_lags(self, kernel: Optional[MemoryKernel], dt: float, steps: int) -> np.ndarray:
        """``k(m dt / eps)`` for ``m = 0..steps``."""
        if kernel is None or kernel.is_zero():
            return np.zeros(steps + 1)
        return kernel.time_profile(np.arange(steps + 1) * dt / self.eps)

    def load_vector(self, f_nodal, g_nodal) -> np.ndarray:
        """``int rho (chi1 f + chi2 g) . phi`` reduced to free dofs."""
        mesh = self.mesh
        vec = load_vector(mesh, f_nodal, self.rho, self.solid) + load_vector(
            mesh, g_nodal, self.rho, self.fluid)
        return self.constraints.restrict(vec)


def _reduce(cons, a):
    return cons.reduce(a).tocsr()


def assemble_fine_operators(
    domain: EpsilonDomain,
    A0: CoefficientField,
    A1: Optional[MemoryKernel],
    B0: CoefficientField,
    B1: Optional[MemoryKernel],
    rho1: CoefficientField,
    rho2: CoefficientField,
    alpha: float = 0.1,
) -> FineOperators:
    """Operators on the eps-domain mesh with coefficients sampled at ``x / eps``."""
    mesh, eps = domain.mesh, domain.eps
    n = mesh.dimension
    solid = mesh.phase == SOLID
    fluid = mesh.phase == FLUID
    if not solid.any():
        raise PhaseError("solid phase is empty")
    if fluid.any() and not cells_connected(mesh, fluid):
        raise PhaseError("fluid phase is disconnected")
    a0 = broadcast_cells(A0.sample_cells(mesh, eps), mesh.n_cells, n)
    b0 = broadcast_cells(B0.sample_cells(mesh, eps), mesh.n_cells, n)
    check_coercive(a0[solid], "solid coefficient")
    check_coercive(b0[fluid], "fluid coefficient")
    rho = np.where(solid, rho1.sample_cells(mesh, eps), rho2.sample_cells(mesh, eps))
    if np.any(rho <= 0):
        raise PhaseError("densities must be positive")
    size = n * mesh.n_nodes
    cons = ConstraintSet(size, node_dofs(mesh.boundary_nodes(), mesh.n_nodes, n))

    def memory_stiffness(kernel, mask):
        if kernel is None or kernel.is_zero():
            return sp.csr_matrix((cons.free.size, cons.free.size))
        c = broadcast_cells(kernel.spatial.sample_cells(mesh, eps), mesh.n_cells, n)
        return _reduce(cons, assemble_vector_elliptic(mesh, c, mask, check=False))

    pnodes = np.flatnonzero(mesh.nodes_touching(fluid))
    if pnodes.size:
        mu = np.trace(b0, axis1=1, axis2=2) / (n * n)
        s = assemble_pressure_laplacian(mesh, fluid, pnodes, stabilization_weight(mesh, mu, alpha))
        pmass = assemble_mass(mesh, 1.0, fluid, components=1)[pnodes][:, pnodes].tocsr()
        div = assemble_divergence(mesh, fluid, pnodes)[:, cons.free].tocsr()
    else:
        # single-material solid: no pressure unknowns
        s = pmass = sp.csr_matrix((0, 0))
        div = sp.csr_matrix((0, cons.free.size))
    eye = np.eye(n * n)
    return FineOperators(
        domain,
        cons,
        solid,
        fluid,
        _reduce(cons, assemble_mass(mesh, rho)),
        _reduce(cons, assemble_vector_elliptic(mesh, a0, solid, check=False)),
        _reduce(cons, assemble_vector_elliptic(mesh, b0, fluid, check=False)),
        memory_stiffness(A1, solid),
        memory_stiffness(B1, fluid),
        div,
        s,
        pnodes,
        pmass,
        rho,
        A1,
        B1,
        _reduce(cons, assemble_mass(mesh, 1.0)),
        _reduce(cons, assemble_mass(mesh, 1.0, solid)),
        _reduce(cons, assemble_mass(mesh, 1.0, fluid)),
        _reduce(cons, assemble_vector_elliptic(mesh, eye, solid, check=False)),
        _reduce(cons, assemble_vector_elliptic(mesh, eye, fluid, check=False)),
    )


@dataclass
class FineState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    p: np.ndarray
    step: int
    dt: float
    eps: float
    hist_u: FieldHistory = None
    hist_v: FieldHistory = None
    mem_force: np.ndarray = None  # total memory force at this step

    @classmethod
    def zero(cls, ops: FineOperators, dt: float) -> "FineState":
        z = np.zeros(ops.size)
        st = cls(z.copy(), z.copy(), z.copy(), np.zeros(ops.pressure_nodes.size), 0, dt, ops.eps,
                 FieldHistory(dt), FieldHistory(dt), z.copy())
        st.hist_u.append(z)
        st.hist_v.append(z)
        return st

    @property
    def time(self) -> float:
        return self.step * self.dt


class FineStepper:
    """Factorizes the constant step matrix once and advances states."""

    def __init__(self, ops: FineOperators, dt: float, steps: int, check_resolution: bool = True):
        if dt <= 0:
            raise ValueError("time step must be positive")
        self.ops, self.dt = ops, dt
        for name, k in (("A1", ops.A1), ("B1", ops.B1)):
            if check_resolution and k is not None and not k.is_zero() and k.max_frequency() > 0:
                limit = ops.eps / (8 * k.max_frequency())
                if dt > limit * (1 + 1e-12):
                    raise ValueError(
                        f"dt = {dt:g} under-resolves the fast-time kernel {name}; need dt <= {limit:g}")
        self.kA = ops.kernel_lags(ops.A1, dt, steps)
        self.kB = ops.kernel_lags(ops.B1, dt, steps)
        self.cA = 0.5 * dt * self.kA[0]
        self.cB = 0.5 * dt * self.kB[0]
        self.Kt = (ops.K + self.cA * ops.KA1).tocsr()
        self.Dt = (ops.D + self.cB * ops.KB1).tocsr()
        top = ops.M + (GAMMA * dt) * self.Dt + (BETA * dt**2) * self.Kt
        self.pscale = 1.0 / (GAMMA * dt)
        self.system = sp.bmat([[top, ops.B.T], [ops.B, -self.pscale * ops.S]], format="csc")
        self._lu = spla.splu(self.system)
        self.nv = ops.size

    def _solve(self, rhs):
        x = self._lu.solve(rhs)
        x += self._lu.solve(rhs - self.system @ x)
        if not np.all(np.isfinite(x)):
            raise SolverDiverged("fine step produced non-finite values")
        return x[: self.nv], x[self.nv:]

    def initial(self, force) -> FineState:
        """Zero state with acceleration and pressure balancing ``F(0)``."""
        st = FineState.zero(self.ops, self.dt)
        if np.any(force):
            ops = self.ops
            sys0 = sp.bmat([[ops.M, ops.B.T], [ops.B, -self.pscale * ops.S]], format="csc")
            x = spla.spsolve(sys0, np.concatenate([force, np.zeros(ops.B.shape[0])]))
            st.a, st.p = x[: self.nv], x[self.nv:]
        return st

    def step(self, state: FineState, force_next) -> FineState:
        ops, dt = self.ops, self.dt
        n1 = state.step + 1
        if n1 >= self.kA.size:
            raise ValueError("stepper was built for fewer steps")
        hA = volterra_lagged(self.kA, state.hist_u, n1) if self.kA.any() else 0.0
        hB = volterra_lagged(self.kB, state.hist_v, n1) if self.kB.any() else 0.0
        u_pred = state.u + dt * state.v + (0.5 - BETA) * dt**2 * state.a
        v_pred = state.v + (1 - GAMMA) * dt * state.a
        lagged = ops.KA1 @ hA + ops.KB1 @ hB if (self.kA.any() or self.kB.any()) else 0.0
        rhs_v = force_next - self.Dt @ v_pred - self.Kt @ u_pred - lagged
        rhs_p = -self.pscale * (ops.B @ v_pred)
        a, p = self._solve(np.concatenate([rhs_v, rhs_p]))
        u = u_pred + BETA * dt**2 * a
        v = v_pred + GAMMA * dt * a
        mem = lagged + self.cA * (ops.KA1 @ u) + self.cB * (ops.KB1 @ v)
        new = FineState(u, v, a, p, n1, dt, state.eps, state.hist_u, state.hist_v, mem)
        new.hist_u.append(u)
        new.hist_v.append(v)
        return new


def step_fine(state: FineState, ops: FineOperators, force_next, stepper: FineStepper) -> FineState:
    """One implicit step (``stepper`` holds the factorized step matrix)."""
    return stepper.step(state, force_next)


@dataclass
class FineTrajectory:
    times: np.ndarray
    U: np.ndarray
    V: np.ndarray
    P: np.ndarray
    energy: dict
    ops: FineOperators = field(repr=False, default=None)

    def write_csv(self, path) -> None:
        rep = energy_report(self)
        cols = COLUMNS["fine_trajectory"]
        m = self.ops.unit_mass
        un = np.sqrt(np.einsum("ki,ki->k", self.U, (m @ self.U.T).T))
        vn = np.sqrt(np.einsum("ki,ki->k", self.V, (m @ self.V.T).T))
        su = np.sqrt(rep["series"]["solid_u"])
        fv = np.sqrt(rep["series"]["fluid_v"])
        rows = ([float(t), float(un[k]), float(vn[k]), float(su[k]), float(fv[k])]
                + [float(self.energy[c][k]) for c in cols[5:]] for k, t in enumerate(self.times))
        write_csv(path, "fine_trajectory", cols, rows)


def solve_fine(
    ops: FineOperators,
    f: Callable,
    g: Callable,
    T: float,
    dt: float,
    check_resolution: bool = True,
) -> FineTrajectory:
    """Integrate from rest; ``f``/``g`` map ``(points, t)`` to nodal vectors."""
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be an integer multiple of dt")
    x = ops.mesh.vertices
    stepper = FineStepper(ops, dt, steps, check_resolution)

    def force(t):
        return ops.load_vector(f(x, t), g(x, t))

    F_prev = force(0.0)
    state = stepper.initial(F_prev)
    U = np.zeros((steps + 1, ops.size))
    V = np.zeros_like(U)
    P = np.zeros((steps + 1, ops.pressure_nodes.size))
    P[0] = state.p
    keys = ("kinetic", "elastic", "dissipated", "work", "memory_work", "stabilization",
            "identity_residual")
    log = {k: np.zeros(steps + 1) for k in keys}
    for k in range(1, steps + 1):
        F_next = force(k * dt)
        new = stepper.step(state, F_next)
        du = new.u - state.u
        vm = 0.5 * (new.v + state.v)
        pm = 0.5 * (new.p + state.p)
        d_work = du @ (0.5 * (F_prev + F_next))
        d_diss = dt * vm @ (ops.D @ vm)
        d_mem = du @ (0.5 * (new.mem_force + state.mem_force))
        d_stab = dt * pm @ (ops.S @ pm)
        log["work"][k] = log["work"][k - 1] + d_work
        log["dissipated"][k] = log["dissipated"][k - 1] + d_diss
        log["memory_work"][k] = log["memory_work"][k - 1] + d_mem
        log["stabilization"][k] = log["stabilization"][k - 1] + d_stab
        log["kinetic"][k] = 0.5 * new.v @ (ops.M @ new.v)
        log["elastic"][k] = 0.5 * new.u @ (ops.K @ new.u)
        d_e = (log["kinetic"][k] + log["elastic"][k]) - (log["kinetic"][k - 1] + log["elastic"][k - 1])
        resid = d_e - (d_work - d_diss - d_mem - d_stab)
        scale = max(log["kinetic"][k] + log["elastic"][k], abs(log["work"][k]), 1e-300)
        log["identity_residual"][k] = abs(resid) / scale
        U[k], V[k], P[k] = new.u, new.v, new.p
        state, F_prev = new, F_next
    return FineTrajectory(np.arange(steps + 1) * dt, U, V, P, log, ops)


def energy_report(traj: FineTrajectory, bound: Optional[float] = None) -> dict:
    """Discrete analogues of the a priori estimates.

    Returns ``sup_u`` (sup of ||u||^2 on the solid), ``sup_grad_u`` (sup of
    ||grad u||^2 on the solid), ``sup_v`` (sup of ||v||^2 on the fluid),
    ``int_grad_v`` (time integral of ||grad v||^2 on the fluid) and
    ``p_l2`` (||p|| in L^2 over fluid x time), time integrals by the trapezoid
    rule; ``flags`` lists quantities above ``bound``; ``series`` holds the
    per-step values.
    """
    ops = traj.ops
    U, V, P = traj.U, traj.V, traj.P

    def quad(mat, X):
        return np.einsum("ki,ki->k", X, (mat @ X.T).T)

    series = {
        "solid_u": quad(ops.solid_mass, U),
        "solid_grad_u": quad(ops.solid_grad, U),
        "fluid_v": quad(ops.fluid_mass, V),
        "fluid_grad_v": quad(ops.fluid_grad, V),
        "pressure": quad(ops.pressure_mass, P),
    }
    dt = traj.times[1] - traj.times[0] if traj.times.size > 1 else 0.0
    w = np.full(traj.times.size, dt)
    if w.size:
        w[0] = w[-1] = dt / 2
    out = {
        "sup_u": float(series["solid_u"].max()),
        "sup_grad_u": float(series["solid_grad_u"].max()),
        "sup_v": float(series["fluid_v"].max()),
        "int_grad_v": float(w @ series["fluid_grad_v"]),
        "p_l2": float(np.sqrt(max(w @ series["pressure"], 0.0))),
    }
    out["flags"] = [k for k, v in out.items() if bound is not None and v > bound]
    out["max_identity_residual"] = float(traj.energy["identity_residual"].max()) if traj.energy else 0.0
    out["series"] = series
    return out


def fluid_cell_divergence(ops: FineOperators, v_free) -> np.ndarray:
    """Integral of ``div v`` over each fluid cell."""
    v = ops.constraints.expand(v_free)
    return cell_divergence(ops.mesh, v)[ops.fluid]
