"""Cell problems and the effective medium.

Two reductions of the memory terms are available:

``"integrated"`` (default)
    Correctors are driven by the instantaneous coefficients ``A0`` / ``B0``.
    The fast-time mean of the solid kernel, averaged against the ``A0``
    correctors, multiplies the running integral of the macroscopic gradient;
    for the fluid the kernel acts on the velocity gradient, so its integral
    reduces to the displacement gradient itself. This is the limit of
    ``int_0^t k((t - s) / eps) g(s) ds`` as ``eps -> 0``.
``"instantaneous"``
    Correctors and averages use ``A0 + <A1>`` and ``B0 + <B1>``, where ``<.>``
    is the fast-time mean, and no separate memory tensors are produced.

Both coincide when the kernels vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .ap_core import PoreDistribution
from .coefficients import CoefficientField
from .errors import PhaseError, ShapeError
from .fem import (
    broadcast_cells,
    ConstraintSet,
    assemble_stokes,
    assemble_vector_elliptic,
    cell_gradients,
    check_coercive,
    constant_modes,
    gradient_load,
    interpolate_at,
    node_dofs,
    solve_saddle,
    solve_spd,
)
from .geometry import FLUID, SOLID, CellGeometry, StructuredMesh
from .memory import MemoryKernel, fast_time_mean

REDUCTIONS = ("integrated", "instantaneous")


@dataclass
class CorrectorField:
    """Nodal corrector for one macroscopic gradient ``xi`` on a cell mesh."""

    xi: np.ndarray
    values: np.ndarray  # component-major nodal vector
    mesh: StructuredMesh
    phase: np.ndarray  # cell mask of the phase the corrector lives in
    kind: str = "elastic"
    pressure: Optional[np.ndarray] = None
    pressure_nodes: Optional[np.ndarray] = None
    mode: int = 0

    def gradients(self) -> np.ndarray:
        return cell_gradients(self.mesh, self.values)

    def total_gradient(self) -> np.ndarray:
        """``xi + grad_y u`` per cell."""
        return self.xi[None] + self.gradients()

    def cell_pressure(self) -> np.ndarray:
        """Pressure averaged over each cell's corners (zero off the fluid)."""
        out = np.zeros(self.mesh.n_cells)
        if self.pressure is None:
            return out
        full = np.zeros(self.mesh.n_nodes)
        full[self.pressure_nodes] = self.pressure
        out[self.phase] = full[self.mesh.cells[self.phase]].mean(axis=1)
        return out


def _load_matrix(xi, n: int) -> np.ndarray:
    x = np.asarray(xi, dtype=float)
    if x.size != n * n:
        raise ShapeError(f"load must have {n * n} entries")
    return x.reshape(n, n)


def _cell_coefficient(mesh, base: CoefficientField, kernel: Optional[MemoryKernel], with_memory: bool):
    c = base.sample_cells(mesh)
    if with_memory and kernel is not None and not kernel.is_zero():
        c = c + fast_time_mean(kernel) * kernel.spatial.sample_cells(mesh)
    return np.array(broadcast_cells(c, mesh.n_cells, mesh.dimension))


class ElasticCellProblem:
    """Solid cell problem ``-div(C (xi + grad u)) = 0`` on the solid, ``u = 0`` elsewhere.

    With ``full_cell`` the whole cell is the solid (periodic corrector with
    zero mean); this is the classical single-material-per-point cell problem
    used for validation against closed forms. ``matrix`` then gives the
    coefficient on the ``Y2`` cells (default: ``A0`` everywhere).
    """

    def __init__(
        self,
        mesh: StructuredMesh,
        A0: CoefficientField,
        A1: Optional[MemoryKernel] = None,
        full_cell: bool = False,
        with_memory: bool = True,
        tol: float = 1e-10,
        matrix: Optional[CoefficientField] = None,
    ):
        n = mesh.dimension
        self.mesh, self.tol, self.full_cell = mesh, tol, full_cell
        self.mask = np.ones(mesh.n_cells, dtype=bool) if full_cell else mesh.phase == SOLID
        if not self.mask.any():
            raise PhaseError("solid phase is empty")
        self.coeff = _cell_coefficient(mesh, A0, A1, with_memory)
        if full_cell and matrix is not None:
            other = mesh.phase != SOLID
            self.coeff[other] = broadcast_cells(matrix.sample_cells(mesh), mesh.n_cells, n)[other]
        check_coercive(self.coeff[self.mask], "solid coefficient")
        k = assemble_vector_elliptic(mesh, self.coeff, self.mask, check=False)
        if full_cell:
            self.cons = ConstraintSet(n * mesh.n_nodes, null_vectors=constant_modes(mesh.n_nodes, n))
        else:
            blocked = np.flatnonzero(mesh.nodes_touching(~self.mask))
            self.cons = ConstraintSet(n * mesh.n_nodes, node_dofs(blocked, mesh.n_nodes, n))
        self.K = self.cons.reduce(k).tocsr()
        self.null = self.cons.reduced_null()

    def solve(self, xi, mode: int = 0) -> CorrectorField:
        n = self.mesh.dimension
        x = _load_matrix(xi, n)
        u = np.zeros(n * self.mesh.n_nodes)
        if mode == 0 and np.any(x) and self.cons.free.size:
            stress = (self.coeff @ x.ravel()).reshape(-1, n, n)
            rhs = self.cons.restrict(gradient_load(self.mesh, stress, self.mask))
            u = self.cons.expand(solve_spd(self.K, rhs, tol=self.tol, null=self.null))
        return CorrectorField(x, u, self.mesh, self.mask, "elastic", mode=mode)


class StokesCellProblem:
    """Fluid cell problem with Dirichlet-zero velocity on the solid.

    The pressure is fixed by a zero fluid mean. That normalization is a
    Lagrange multiplier for the constant pressure mode, so only the part of
    the divergence forcing orthogonal to constants is kept: a constant trace
    forcing cannot be balanced, because a velocity vanishing on the interface
    has zero net divergence over the fluid.
    """

    def __init__(
        self,
        mesh: StructuredMesh,
        B0: CoefficientField,
        B1: Optional[MemoryKernel] = None,
        with_memory: bool = True,
        tol: float = 1e-8,
        alpha: float = 0.1,
    ):
        self.mesh, self.tol = mesh, tol
        self.mask = mesh.phase == FLUID
        self.coeff = _cell_coefficient(mesh, B0, B1, with_memory)
        check_coercive(self.coeff[self.mask], "fluid coefficient")
        self.system = assemble_stokes(mesh, self.coeff, self.mask, alpha=alpha, check=False)
        st = self.system
        mu = np.trace(self.coeff[self.mask], axis1=1, axis2=2).mean() / mesh.dimension**2
        self.precond = sp.diags(st.pressure_mass / mu) + st.S

    def solve(self, xi, mode: int = 0) -> CorrectorField:
        n = self.mesh.dimension
        x = _load_matrix(xi, n)
        st = self.system
        v = np.zeros(n * self.mesh.n_nodes)
        p = np.zeros(st.pressure_nodes.size)
        if mode == 0 and np.any(x):
            stress = (self.coeff @ x.ravel()).reshape(-1, n, n)
            f = st.constraints.restrict(gradient_load(self.mesh, stress, self.mask))
            m = st.pressure_mass
            g = np.trace(x) * m
            g = g - (g.sum() / m.sum()) * m
            vf, p = solve_saddle(
                st.A, st.B, st.S, f, g, tol=self.tol, pressure_mass=m, pressure_precond=self.precond
            )
            v = st.constraints.expand(vf)
        return CorrectorField(x, v, self.mesh, self.mask, "stokes", p, st.pressure_nodes, mode)


def solve_elastic_cell(geom, mesh, A0, A1, xi, full_cell=False, with_memory=True, mode=0,
                       matrix=None):
    """Solid corrector ``u(xi)`` (fast-time mode ``mode``; only mode 0 is forced)."""
    return ElasticCellProblem(mesh, A0, A1, full_cell, with_memory, matrix=matrix).solve(xi, mode)


def solve_stokes_cell(geom, mesh, B0, B1, xi, with_memory=True, mode=0):
    """Fluid corrector ``(v(xi), pi(xi))``."""
    if geom is not None and geom.validation_only:
        raise PhaseError("validation-only geometry cannot be used for fluid solves")
    return StokesCellProblem(mesh, B0, B1, with_memory).solve(xi, mode)


def unit_loads(n: int):
    """``e_i (x) e_j`` in row-major order."""
    for p in range(n * n):
        e = np.zeros(n * n)
        e[p] = 1.0
        yield e.reshape(n, n)


def _phase_average(mesh, mask, coeff, grads) -> np.ndarray:
    """``(1/|Y|) int_mask coeff grad``, one column of an effective tensor."""
    n = mesh.dimension
    flux = np.einsum("cij,cj->ci", coeff[mask], grads[mask].reshape(-1, n * n))
    return flux.sum(axis=0) * mesh.cell_volume / mesh.volume


def density_weights(geom: CellGeometry, rho1, rho2, theta=None, resolution: int = 512):
    """``(M(chi1 rho1), M(chi2 rho2))`` by midpoint quadrature over the (super)cell."""
    n = geom.dimension
    per = (1,) * n if theta is None else tuple(theta.period())
    shape = tuple(resolution * p for p in per)
    total1 = total2 = 0.0
    count = int(np.prod(shape))
    # slab by slab along the first axis to bound memory
    rest = np.stack(
        np.meshgrid(*[(np.arange(s) + 0.5) / resolution for s in shape[1:]], indexing="ij"), -1
    ).reshape(-1, n - 1) if n > 1 else np.zeros((1, 0))
    for i in range(shape[0]):
        x0 = (i + 0.5) / resolution
        y = np.concatenate([np.full((rest.shape[0], 1), x0), rest], axis=1)
        chi = geom.chi1(y).astype(float)
        if theta is not None:
            chi = chi * (theta.value(np.floor(y).astype(int)) == 1)
        total1 += np.sum(chi * rho1.factor(y)) * float(rho1.base)
        total2 += np.sum((1 - chi) * rho2.factor(y)) * float(rho2.base)
    return total1 / count, total2 / count


@dataclass
class EffectiveModel:
    """The homogenized medium.

    ``C0``, ``C1``, ``C0_memory``, ``C1_memory`` are ``N^2 x N^2`` matrices on
    row-major gradients and ``H`` the vector of the pressure form
    ``h(xi) = H . xi``. The load is ``F = w1 f + w2 g`` with
    ``(w1, w2) = load_weights``.
    """

    dimension: int
    rho0: float
    C0: np.ndarray
    C1: np.ndarray
    H: np.ndarray
    C0_memory: np.ndarray = None
    C1_memory: np.ndarray = None
    load_weights: tuple = (1.0, 0.0)
    volume_fractions: tuple = (0.0, 1.0)
    reduction: str = "integrated"
    correctors: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n2 = self.dimension**2
        for name in ("C0_memory", "C1_memory"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros((n2, n2)))
        self.C0, self.C1 = np.asarray(self.C0, float), np.asarray(self.C1, float)
        self.H = np.asarray(self.H, float).reshape(n2)

    def h(self, xi) -> float:
        return float(self.H @ np.asarray(xi, float).ravel())

    def load(self, f_value, g_value):
        w1, w2 = self.load_weights
        return w1 * np.asarray(f_value) + w2 * np.asarray(g_value)

    def to_text(self) -> str:
        """Plain-text report (TOML), readable back with :meth:`from_text`."""
        import tomli_w

        data = {
            "dimension": self.dimension,
            "reduction": self.reduction,
            "rho0": float(self.rho0),
            "load_weights": [float(v) for v in self.load_weights],
            "volume_fractions": [float(v) for v in self.volume_fractions],
            "C0": self.C0.tolist(),
            "C1": self.C1.tolist(),
            "C0_memory": self.C0_memory.tolist(),
            "C1_memory": self.C1_memory.tolist(),
            "H": self.H.tolist(),
        }
        header = (
            "# Effective medium. Tensors act on row-major gradients G[i*N + j] = d u_i / d x_j.\n"
            "# Macro equation: rho0 u'' - div(C0 grad u + C0_memory int_0^t grad u\n"
            "#   + C1 grad u' + C1_memory grad u) + grad(H : grad u') = w1 f + w2 g\n"
        )
        return header + tomli_w.dumps(data)

    @classmethod
    def from_text(cls, text: str) -> "EffectiveModel":
        from .config import toml_loads

        d = toml_loads(text)
        return cls(
            int(d["dimension"]),
            float(d["rho0"]),
            np.array(d["C0"]),
            np.array(d["C1"]),
            np.array(d["H"]),
            np.array(d["C0_memory"]),
            np.array(d["C1_memory"]),
            tuple(d["load_weights"]),
            tuple(d["volume_fractions"]),
            d.get("reduction", "integrated"),
        )

    def csv_rows(self):
        """(name, i, j, value) rows for machine-readable output."""
        rows = [("rho0", 0, 0, self.rho0)]
        for name in ("C0", "C1", "C0_memory", "C1_memory"):
            m = getattr(self, name)
            rows += [(name, i, j, m[i, j]) for i in range(m.shape[0]) for j in range(m.shape[1])]
        rows += [("H", i, 0, v) for i, v in enumerate(self.H)]
        rows += [("load_weight", i, 0, v) for i, v in enumerate(self.load_weights)]
        return rows


def assemble_effective(
    geom: Optional[CellGeometry],
    mesh: StructuredMesh,
    A0: CoefficientField,
    A1: Optional[MemoryKernel],
    B0: CoefficientField,
    B1: Optional[MemoryKernel],
    rho1: CoefficientField,
    rho2: CoefficientField,
    theta: Optional[PoreDistribution] = None,
    reduction: str = "integrated",
    full_cell: bool = False,
    density_resolution: int = 512,
    keep_correctors: bool = True,
    A0_matrix: Optional[CoefficientField] = None,
) -> EffectiveModel:
    """Solve the ``N^2`` unit-load cell problems and average.

    With ``full_cell`` (validation mode) only the solid problem is solved over
    the whole cell, giving the classical effective tensor in ``C0``;
    ``A0_matrix`` is the coefficient on ``Y2`` in that mode. A mesh
    without fluid cells is handled the same way, but keeps the density weights
    of ``geom``.
    """
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    n = mesh.dimension
    inst = reduction == "instantaneous"
    # a cell without fluid is a single material: periodic corrector, no fluid problem
    single = full_cell or not np.any(mesh.phase == FLUID)
    solid = ElasticCellProblem(mesh, A0, A1, single, with_memory=inst,
                               matrix=A0_matrix if full_cell else None)
    fluid = None if single else StokesCellProblem(mesh, B0, B1, with_memory=inst)
    a0 = solid.coeff
    a1 = None
    if not inst and A1 is not None and not A1.is_zero():
        a1 = fast_time_mean(A1) * A1.spatial.sample_cells(mesh)
    b1 = None
    if not inst and B1 is not None and not B1.is_zero():
        b1 = fast_time_mean(B1) * B1.spatial.sample_cells(mesh)
    n2 = n * n
    C0, C1, C0m, C1m = (np.zeros((n2, n2)) for _ in range(4))
    H = np.zeros(n2)
    correctors = {"elastic": [], "stokes": []}
    for p, xi in enumerate(unit_loads(n)):
        u = solid.solve(xi)
        gu = u.total_gradient()
        C0[:, p] = _phase_average(mesh, solid.mask, a0, gu)
        if a1 is not None:
            C0m[:, p] = _phase_average(mesh, solid.mask, a1, gu)
        if fluid is not None:
            v = fluid.solve(xi)
            gv = v.total_gradient()
            C1[:, p] = _phase_average(mesh, fluid.mask, fluid.coeff, gv)
            if b1 is not None:
                C1m[:, p] = _phase_average(mesh, fluid.mask, b1, gv)
            H[p] = v.cell_pressure()[fluid.mask].sum() * mesh.cell_volume / mesh.volume
            if keep_correctors:
                correctors["stokes"].append(v)
        if keep_correctors:
            correctors["elastic"].append(u)
    if full_cell:
        w = (float(np.mean(rho1.sample_cells(mesh))), 0.0)
        fr = (1.0, 0.0)
    else:
        w = density_weights(geom, rho1, rho2, theta, density_resolution)
        ones = CoefficientField.scalar(1.0)
        fr = density_weights(geom, ones, ones, theta, density_resolution)
    return EffectiveModel(
        n, w[0] + w[1], C0, C1, H, C0m, C1m, w, fr, reduction, correctors
    )


def reconstruct_two_scale(
    macro_mesh: StructuredMesh,
    u0,
    eps: float,
    points,
    model: Optional[EffectiveModel] = None,
    velocity=None,
    correctors: Optional[dict] = None,
) -> np.ndarray:
    """``u0(x) + eps u1(x, x / eps)`` at ``points``.

    ``u1 = sum_p G_p(x) u_p(y) + sum_p dG_p(x) v_p(y)`` with ``G = grad u0``
    and ``dG = grad du0/dt`` on the containing macro cell, ``u_p``/``v_p`` the
    unit-load solid/fluid correctors (each vanishes outside its phase).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = macro_mesh.dimension
    if pts.shape[1] != n:
        raise ShapeError("points do not match the macro mesh dimension")
    base = interpolate_at(macro_mesh, u0, pts)
    if correctors is None:
        correctors = model.correctors if model is not None else {}
    el = correctors.get("elastic", [])
    st = correctors.get("stokes", [])
    if not el and not st:
        return base
    cell_of = _containing_cells(macro_mesh, pts)
    grads = cell_gradients(macro_mesh, u0).reshape(-1, n * n)[cell_of]
    y = pts / eps
    u1 = np.zeros_like(base)
    for p, c in enumerate(el):
        u1 += grads[:, p:p + 1] * interpolate_at(c.mesh, c.values, y)
    if velocity is not None and st:
        dgrads = cell_gradients(macro_mesh, velocity).reshape(-1, n * n)[cell_of]
        for p, c in enumerate(st):
            u1 += dgrads[:, p:p + 1] * interpolate_at(c.mesh, c.values, y)
    return base + eps * u1


def _containing_cells(mesh: StructuredMesh, pts) -> np.ndarray:
    h = np.asarray(mesh.h)
    idx = np.minimum(np.floor(np.clip(pts, 0, None) / h).astype(int), np.asarray(mesh.shape) - 1)
    return np.ravel_multi_index(idx.T, mesh.shape)
