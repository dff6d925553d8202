"""Q1 finite elements on structured box meshes, and the linear solvers.

Degrees of freedom of a vector field are numbered component-major:
``dof = component * n_nodes + node``. Coefficients are fourth-order tensors
stored per cell as ``(N*N, N*N)`` matrices acting on the row-major flattened
gradient ``G[m, n] = d u_m / d x_n``; :func:`lift_matrix` turns an ``N x N``
matrix acting on each component's gradient into that form.

Sparse operators are plain ``scipy.sparse.csr_matrix`` objects.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.io import mmwrite
from scipy.sparse.csgraph import connected_components

from .errors import CoercivityViolation, PhaseError, ShapeError, SolverDiverged
from .geometry import FLUID, StructuredMesh

_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


class ReferenceElement:
    """Tensor-product Q1 element on a box of sides ``h`` with 2-point Gauss rules.

    Precomputed integrals (all over one cell):

    ``mass[a, b]``       integral phi_a phi_b
    ``grad_grad[l, n, a, b]`` integral d_l phi_a d_n phi_b
    ``val_grad[n, a, b]``    integral phi_a d_n phi_b
    ``grad_int[n, a]``       integral d_n phi_a
    """

    def __init__(self, h: Sequence[float]):
        self.h = np.asarray(h, dtype=float)
        n = self.h.size
        self.dimension = n
        corners = np.array(list(itertools.product((0, 1), repeat=n)))
        qpts = np.array(list(itertools.product(_GAUSS, repeat=n)))
        vol = float(np.prod(self.h))
        self.weights = np.full(len(qpts), vol / len(qpts))
        # 1D factors: value and derivative of the corner-c basis at xi
        val1 = np.where(corners[None, :, :] == 1, qpts[:, None, :], 1 - qpts[:, None, :])
        der1 = np.where(corners == 1, 1.0, -1.0) / self.h  # (a, n)
        self.values = np.prod(val1, axis=2)  # (q, a)
        grads = np.empty((len(qpts), len(corners), n))
        for d in range(n):
            others = np.prod(np.delete(val1, d, axis=2), axis=2) if n > 1 else 1.0
            grads[:, :, d] = der1[None, :, d] * others
        self.grads = grads  # (q, a, n)
        w = self.weights
        self.mass = np.einsum("q,qa,qb->ab", w, self.values, self.values)
        self.grad_grad = np.einsum("q,qal,qbn->lnab", w, grads, grads)
        self.val_grad = np.einsum("q,qa,qbn->nab", w, self.values, grads)
        self.grad_int = np.einsum("q,qan->na", w, grads)
        self.volume = vol
        self.n_basis = len(corners)


def reference_element(mesh: StructuredMesh) -> ReferenceElement:
    return ReferenceElement(mesh.h)


def lift_matrix(a) -> np.ndarray:
    """``N x N`` matrix acting on each component's gradient -> ``(N^2, N^2)`` tensor."""
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    eye = np.eye(n)
    out = np.einsum("km,...ln->...klmn", eye, a)
    return out.reshape(a.shape[:-2] + (n * n, n * n))


def identity_tensor(n: int) -> np.ndarray:
    return np.eye(n * n)


def check_coercive(coeff: np.ndarray, what: str = "coefficient", rtol: float = 1e-12):
    """Raise :class:`CoercivityViolation` unless every sample is symmetric positive definite."""
    c = np.asarray(coeff, dtype=float)
    if c.size == 0:
        return
    flat = c.reshape(-1, c.shape[-2], c.shape[-1])
    uniq = np.unique(flat, axis=0)
    scale = max(np.max(np.abs(uniq)), 1e-300)
    if np.max(np.abs(uniq - np.swapaxes(uniq, -1, -2))) > rtol * scale:
        raise CoercivityViolation(f"{what} is not symmetric")
    lam = np.linalg.eigvalsh(uniq).min()
    if lam <= 0:
        raise CoercivityViolation(f"{what} has non-positive eigenvalue {lam:.3e}")


def broadcast_cells(coeff, n_cells: int, n: int) -> np.ndarray:
    """Per-cell ``(n_cells, N^2, N^2)`` tensor from a scalar, a tensor, or per-cell arrays.

    ``N x N`` matrices (per cell or shared) are lifted with :func:`lift_matrix`;
    in 1D a per-cell vector of scalars is accepted.
    """
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        c = c * np.eye(n * n)
    elif n == 1 and c.ndim == 1:
        c = c.reshape(-1, 1, 1)
    elif n > 1 and c.shape[-2:] == (n, n):
        c = lift_matrix(c)
    if c.ndim == 2:
        c = np.broadcast_to(c, (n_cells,) + c.shape)
    if c.shape != (n_cells, n * n, n * n):
        raise ShapeError(f"coefficient shape {c.shape} incompatible with {n_cells} cells")
    return c


def broadcast_scalar(values, n_cells: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.broadcast_to(v, (n_cells,)).copy() if v.ndim == 0 else v.reshape(n_cells)


def _cell_mask(mesh, mask):
    if mask is None:
        return np.ones(mesh.n_cells, dtype=bool)
    mask = np.asarray(mask)
    if mask.dtype != bool:
        mask = mesh.phase == int(mask) if mask.ndim == 0 else mask.astype(bool)
    return mask


def assemble_vector_elliptic(
    mesh: StructuredMesh, coeff, mask=None, check: bool = True
) -> sp.csr_matrix:
    """Stiffness of ``(w, z) -> integral_mask coeff grad w : grad z``.

    ``mask`` is a boolean cell mask or a phase tag. Periodicity is built into
    the node numbering of periodic meshes.
    """
    n = mesh.dimension
    mask = _cell_mask(mesh, mask)
    c = broadcast_cells(coeff, mesh.n_cells, n)[mask]
    if check:
        check_coercive(c)
    ref = reference_element(mesh)
    ke = np.einsum("cklmn,lnab->cakbm", c.reshape(-1, n, n, n, n), ref.grad_grad)
    nodes = mesh.cells[mask]
    dofs = (np.arange(n)[None, None, :] * mesh.n_nodes + nodes[:, :, None])  # (c, a, k)
    rows = np.broadcast_to(dofs[:, :, :, None, None], ke.shape)
    cols = np.broadcast_to(dofs[:, None, None, :, :], ke.shape)
    size = n * mesh.n_nodes
    return sp.csr_matrix(
        (ke.ravel(), (rows.ravel(), cols.ravel())), shape=(size, size)
    )


def assemble_mass(mesh: StructuredMesh, density=1.0, mask=None, components: Optional[int] = None):
    """Consistent mass matrix weighted by a per-cell density."""
    mask = _cell_mask(mesh, mask)
    comps = mesh.dimension if components is None else components
    rho = broadcast_scalar(density, mesh.n_cells)[mask]
    ref = reference_element(mesh)
    nodes = mesh.cells[mask]
    me = rho[:, None, None] * ref.mass[None]
    r = np.broadcast_to(nodes[:, :, None], me.shape).ravel()
    c = np.broadcast_to(nodes[:, None, :], me.shape).ravel()
    scalar = sp.csr_matrix((me.ravel(), (r, c)), shape=(mesh.n_nodes, mesh.n_nodes))
    return sp.block_diag([scalar] * comps, format="csr") if comps > 1 else scalar


def assemble_divergence(mesh: StructuredMesh, mask, pressure_nodes: np.ndarray):
    """``B[q, dof] = -integral_mask phi_q div(phi_dof)`` for the listed pressure nodes."""
    n = mesh.dimension
    mask = _cell_mask(mesh, mask)
    ref = reference_element(mesh)
    nodes = mesh.cells[mask]
    pindex = -np.ones(mesh.n_nodes, dtype=int)
    pindex[pressure_nodes] = np.arange(len(pressure_nodes))
    be = -np.transpose(ref.val_grad, (1, 2, 0))[None]  # (1, a, b, m)
    be = np.broadcast_to(be, (nodes.shape[0],) + be.shape[1:])
    rows = np.broadcast_to(pindex[nodes][:, :, None, None], be.shape)
    dofs = np.arange(n)[None, None, :] * mesh.n_nodes + nodes[:, :, None]  # (c, b, m)
    cols = np.broadcast_to(dofs[:, None, :, :], be.shape)
    if np.any(rows < 0):
        raise ShapeError("pressure node list does not cover the masked cells")
    return sp.csr_matrix(
        (be.ravel(), (rows.ravel(), cols.ravel())), shape=(len(pressure_nodes), n * mesh.n_nodes)
    )


def assemble_pressure_laplacian(mesh, mask, pressure_nodes, weight=1.0):
    """``S[p, q] = integral_mask weight grad phi_p . grad phi_q`` on pressure nodes."""
    mask = _cell_mask(mesh, mask)
    ref = reference_element(mesh)
    w = broadcast_scalar(weight, mesh.n_cells)[mask]
    lap = np.trace(ref.grad_grad, axis1=0, axis2=1)
    se = w[:, None, None] * lap[None]
    pindex = -np.ones(mesh.n_nodes, dtype=int)
    pindex[pressure_nodes] = np.arange(len(pressure_nodes))
    pn = pindex[mesh.cells[mask]]
    r = np.broadcast_to(pn[:, :, None], se.shape).ravel()
    c = np.broadcast_to(pn[:, None, :], se.shape).ravel()
    m = len(pressure_nodes)
    return sp.csr_matrix((se.ravel(), (r, c)), shape=(m, m))


def pressure_mass_vector(mesh, mask, pressure_nodes) -> np.ndarray:
    """``m[q] = integral_mask phi_q``."""
    mask = _cell_mask(mesh, mask)
    ref = reference_element(mesh)
    pindex = -np.ones(mesh.n_nodes, dtype=int)
    pindex[pressure_nodes] = np.arange(len(pressure_nodes))
    out = np.zeros(len(pressure_nodes))
    np.add.at(out, pindex[mesh.cells[mask]].ravel(),
              np.tile(ref.mass.sum(axis=1), int(mask.sum())))
    return out


def load_vector(mesh: StructuredMesh, nodal, weight=1.0, mask=None) -> np.ndarray:
    """``integral weight f . phi`` with ``f`` given at nodes, shape (n_nodes, N)."""
    mask = _cell_mask(mesh, mask)
    f = np.asarray(nodal, dtype=float).reshape(mesh.n_nodes, -1)
    comps = f.shape[1]
    ref = reference_element(mesh)
    w = broadcast_scalar(weight, mesh.n_cells)[mask]
    nodes = mesh.cells[mask]
    out = np.zeros((comps, mesh.n_nodes))
    contrib = np.einsum("c,ab,cbk->cak", w, ref.mass, f[nodes])
    for k in range(comps):
        np.add.at(out[k], nodes.ravel(), contrib[:, :, k].ravel())
    return out.ravel()


def gradient_load(mesh: StructuredMesh, stress, mask=None) -> np.ndarray:
    """``-integral stress : grad phi`` for a per-cell constant stress ``(n_cells, N, N)``."""
    n = mesh.dimension
    mask = _cell_mask(mesh, mask)
    ref = reference_element(mesh)
    s = np.asarray(stress, dtype=float).reshape(mesh.n_cells, n, n)[mask]
    contrib = -np.einsum("ckl,la->cak", s, ref.grad_int)
    nodes = mesh.cells[mask]
    out = np.zeros((n, mesh.n_nodes))
    for k in range(n):
        np.add.at(out[k], nodes.ravel(), contrib[:, :, k].ravel())
    return out.ravel()


def cell_gradients(mesh: StructuredMesh, u: np.ndarray) -> np.ndarray:
    """Cell-averaged gradient ``(n_cells, N, N)`` of a vector field (component-major dofs)."""
    ref = reference_element(mesh)
    uu = np.asarray(u).reshape(-1, mesh.n_nodes)
    vals = uu[:, mesh.cells]  # (k, c, a)
    return np.einsum("kca,na->ckn", vals, ref.grad_int) / ref.volume


def cell_divergence(mesh: StructuredMesh, u: np.ndarray) -> np.ndarray:
    """Integral of div u over each cell."""
    g = cell_gradients(mesh, u)
    return np.trace(g, axis1=1, axis2=2) * mesh.cell_volume


def interpolate_nodal(mesh: StructuredMesh, func) -> np.ndarray:
    """Nodal interpolant of ``func(x) -> (..., N)`` in component-major layout."""
    vals = np.asarray(func(mesh.vertices), dtype=float)
    if vals.ndim == 1:
        return vals
    return vals.T.reshape(-1)


def is_symmetric(a, tol: float = 1e-12) -> bool:
    d = abs(a - a.T)
    return (d.max() if d.nnz else 0.0) <= tol * max(abs(a).max(), 1e-300)


def export_matrix_market(path, a, comment: str = "") -> None:
    mmwrite(str(path), sp.coo_matrix(a), comment=comment)


def cells_connected(mesh: StructuredMesh, mask: np.ndarray) -> bool:
    """Face-connectivity of the masked cells (wrapping on periodic meshes)."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return False
    shape = mesh.shape
    lin = -np.ones(mesh.n_cells, dtype=int)
    lin[idx] = np.arange(idx.size)
    multi = np.stack(np.unravel_index(idx, shape), axis=1)
    rows, cols = [], []
    for d in range(mesh.dimension):
        nb = multi.copy()
        nb[:, d] += 1
        if mesh.periodic:
            nb[:, d] %= shape[d]
            ok = np.ones(len(nb), dtype=bool)
        else:
            ok = nb[:, d] < shape[d]
        nlin = np.ravel_multi_index(nb[ok].T, shape)
        j = lin[nlin]
        keep = j >= 0
        rows.append(np.arange(idx.size)[ok][keep])
        cols.append(j[keep])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    g = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(idx.size, idx.size))
    ncomp, _ = connected_components(g, directed=False)
    return ncomp == 1


@dataclass
class ConstraintSet:
    """Dirichlet-zero dofs plus optional zero-mean (constant null-space) handling.

    ``null_vectors`` span the null space left after elimination (e.g. the
    constant per component of a pure periodic problem); solves project them out.
    """

    size: int
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    null_vectors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.fixed = np.unique(np.asarray(self.fixed, dtype=int))
        keep = np.ones(self.size, dtype=bool)
        keep[self.fixed] = False
        self.free = np.flatnonzero(keep)

    def reduce(self, a):
        return a[self.free][:, self.free]

    def restrict(self, v):
        return np.asarray(v)[self.free]

    def expand(self, v_free) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.result_type(v_free, float))
        out[self.free] = v_free
        return out

    def reduced_null(self) -> Optional[np.ndarray]:
        if self.null_vectors is None:
            return None
        z = np.atleast_2d(self.null_vectors)[:, self.free]
        q, _ = np.linalg.qr(z.T)
        return q.T


def node_dofs(nodes: np.ndarray, n_nodes: int, n_comp: int) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=int)
    return (np.arange(n_comp)[:, None] * n_nodes + nodes[None, :]).ravel()


def constant_modes(n_nodes: int, n_comp: int) -> np.ndarray:
    z = np.zeros((n_comp, n_comp * n_nodes))
    for k in range(n_comp):
        z[k, k * n_nodes:(k + 1) * n_nodes] = 1.0
    return z


def _project(v, null):
    if null is None:
        return v
    return v - null.T @ (null @ v)


def solve_spd(
    a,
    rhs,
    tol: float = 1e-10,
    maxiter: Optional[int] = None,
    null: Optional[np.ndarray] = None,
    project: bool = False,
    x0=None,
) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients, relative residual ``<= tol``.

    ``null`` holds orthonormal rows spanning the kernel of a singular ``a``.
    A right-hand side with a component along the kernel is inconsistent: it
    is projected away when ``project`` is set, otherwise ``SolverDiverged``.
    """
    b = np.asarray(rhs, dtype=float)
    if null is not None:
        comp = null @ b
        if np.linalg.norm(comp) > 1e-10 * max(np.linalg.norm(b), 1e-300):
            if not project:
                raise SolverDiverged("right-hand side not in the range of a singular operator")
        b = _project(b, null)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b)
    n = b.size
    maxiter = maxiter or max(10 * n, 1000)
    d = a.diagonal() if sp.issparse(a) else np.diag(a)
    dinv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - a @ x
    r = _project(r, null)
    z = dinv * r
    z = _project(z, null)
    p = z.copy()
    rz = r @ z
    best = np.inf
    stall = 0
    for _ in range(maxiter):
        res = np.linalg.norm(r)
        if res <= tol * bnorm:
            return _project(x, null)
        if res < 0.999 * best:
            best, stall = res, 0
        else:
            stall += 1
            if stall > max(200, n // 2):
                break
        ap = a @ p
        pap = p @ ap
        if pap <= 0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        r = _project(r, null)
        z = _project(dinv * r, null)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - a @ x)
    if res <= tol * bnorm:
        return _project(x, null)
    raise SolverDiverged(f"CG stopped at relative residual {res / bnorm:.3e}")


def solve_saddle(
    a,
    b,
    s,
    f,
    g,
    tol: float = 1e-8,
    pressure_mass: Optional[np.ndarray] = None,
    pressure_precond=None,
    maxiter: int = 5000,
):
    """MINRES on ``[[A, B^T], [B, -S]] [v; p] = [f; g]``.

    Block-diagonal preconditioner: exact factorization of ``A`` and of the
    given pressure operator (default: lumped pressure mass plus ``S``). When
    ``pressure_mass`` is given the pressure is returned with zero mean
    ``pressure_mass . p = 0``.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    nv, npr = a.shape[0], b.shape[0]
    rhs = np.concatenate([f, g])
    if not np.any(rhs):
        return np.zeros(nv), np.zeros(npr)
    k = sp.bmat([[a, b.T], [b, -s]], format="csr")
    lu_a = spla.splu(sp.csc_matrix(a))
    if pressure_precond is None:
        diag = pressure_mass if pressure_mass is not None else np.ones(npr)
        scale = np.mean(a.diagonal()) / max(np.mean(np.abs(diag)), 1e-300)
        pressure_precond = sp.diags(np.abs(diag) / scale) + s
    lu_p = spla.splu(sp.csc_matrix(pressure_precond))

    def apply(x):
        return np.concatenate([lu_a.solve(x[:nv]), lu_p.solve(x[nv:])])

    prec = spla.LinearOperator(k.shape, matvec=apply)
    bnorm = np.linalg.norm(rhs)
    # MINRES monitors the preconditioned residual; tighten until the true one is met
    x, rtol = None, tol * 1e-3
    while True:
        x, _info = spla.minres(k, rhs, x0=x, rtol=rtol, maxiter=maxiter, M=prec)
        res = np.linalg.norm(rhs - k @ x)
        if res <= tol * bnorm:
            break
        if rtol < 1e-15:
            raise SolverDiverged(f"MINRES stopped at relative residual {res / bnorm:.3e}")
        rtol *= 1e-2
    v, p = x[:nv], x[nv:]
    if pressure_mass is not None:
        p = p - (pressure_mass @ p) / pressure_mass.sum()
    return v, p


@dataclass
class StokesSystem:
    """Constrained Stokes blocks on the fluid cells of a mesh."""

    mesh: StructuredMesh
    fluid: np.ndarray  # cell mask
    A: sp.csr_matrix  # velocity block on free dofs
    B: sp.csr_matrix  # divergence, pressure rows x free velocity dofs
    S: sp.csr_matrix  # pressure stabilization
    constraints: ConstraintSet
    pressure_nodes: np.ndarray
    pressure_mass: np.ndarray
    B_full: sp.csr_matrix = field(repr=False, default=None)


def stabilization_weight(mesh: StructuredMesh, viscosity_scale, alpha: float = 0.1):
    """Brezzi-Pitkaranta weight ``alpha h^2 / mu`` per cell."""
    h2 = max(mesh.h) ** 2
    return alpha * h2 / np.asarray(viscosity_scale, dtype=float)


def assemble_stokes(
    mesh: StructuredMesh, viscosity, mask=FLUID, alpha: float = 0.1, check: bool = True
) -> StokesSystem:
    """Equal-order Q1/Q1 Stokes blocks on the fluid cells.

    Velocity nodes touching any non-fluid cell are fixed to zero; the pressure
    lives on every node touching a fluid cell and is stabilized by a
    Brezzi-Pitkaranta Laplacian.
    """
    n = mesh.dimension
    fluid = _cell_mask(mesh, mask)
    if not fluid.any():
        raise PhaseError("fluid phase is empty")
    if not cells_connected(mesh, fluid):
        raise PhaseError("fluid phase is disconnected")
    visc = broadcast_cells(viscosity, mesh.n_cells, n)
    a_full = assemble_vector_elliptic(mesh, visc, fluid, check=check)
    blocked = mesh.nodes_touching(~fluid)
    if mesh.periodic is False:
        blocked[mesh.boundary_nodes()] = True
    cons = ConstraintSet(n * mesh.n_nodes, node_dofs(np.flatnonzero(blocked), mesh.n_nodes, n))
    pnodes = np.flatnonzero(mesh.nodes_touching(fluid))
    b_full = assemble_divergence(mesh, fluid, pnodes)
    mu = _cell_viscosity_scale(visc)
    s =assemble_pressure_laplacian(mesh, fluid, pnodes, stabilization_weight(mesh, mu, alpha))
    pm = pressure_mass_vector(mesh, fluid, pnodes)
    return StokesSystem(
        mesh, fluid, cons.reduce(a_full).tocsr(), b_full[:, cons.free].tocsr(), s, cons, pnodes,
        pm, b_full,
    )


def _cell_viscosity_scale(visc: np.ndarray) -> np.ndarray:
    """Trace per dimension of each cell tensor, a cheap magnitude for ``mu``."""
    n2 = visc.shape[-1]
    return np.trace(visc, axis1=1, axis2=2) / n2


def interpolate_at(mesh: StructuredMesh, values, points) -> np.ndarray:
    """Evaluate a Q1 field at arbitrary points; returns (n_points, n_comp).

    ``values`` is component-major (``n_comp * n_nodes``). Points outside a
    periodic mesh are wrapped; on other meshes they are clamped to the box.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = mesh.dimension
    vals = np.asarray(values, dtype=float).reshape(-1, mesh.n_nodes)
    h = np.asarray(mesh.h)
    lengths = np.asarray(mesh.lengths)
    shape = np.asarray(mesh.shape)
    if mesh.periodic:
        pts = np.mod(pts, lengths)
    else:
        pts = np.clip(pts, 0.0, lengths)
    idx = np.minimum(np.floor(pts / h).astype(int), shape - 1)
    loc = pts / h - idx
    cell = np.ravel_multi_index(idx.T, tuple(shape))
    corners = np.array(list(itertools.product((0, 1), repeat=n)))
    w = np.prod(np.where(corners[None] == 1, loc[:, None, :], 1 - loc[:, None, :]), axis=2)
    nodes = mesh.cells[cell]  # (p, a)
    return np.einsum("pa,kpa->pk", w, vals[:, nodes])
