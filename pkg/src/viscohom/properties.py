"""Seeded property suite: the invariants of every module as runnable checks.

Each property is a function ``(rng, ctx) -> (passed, detail)`` registered
with :func:`prop`. :func:`run_property_suite` runs them in registration order
with ``rng = default_rng([seed, index])``, so results do not depend on which
subset runs, and writes a ledger CSV. ``ctx.inject_non_spd`` swaps the
coercivity fixture for an indefinite tensor (negative control).
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
from scipy.special import j1

from .ap_core import (
    PoreDistribution,
    TrigPolynomial,
    besicovitch_seminorm,
    detect_period,
    mean_value,
    torus_convolve,
    window_average,
)
from .coefficients import CoefficientField
from .config import load_config, parse_config, serialize_config
from .csvio import COLUMNS, append_timing, write_csv
from .errors import CoercivityViolation
from .fem import (
    ConstraintSet,
    assemble_vector_elliptic,
    check_coercive,
    constant_modes,
    node_dofs,
    solve_spd,
)
from .fine import assemble_fine_operators, energy_report, solve_fine
from .geometry import SOLID, build_cell, build_epsilon_domain, mesh_cell
from .homogenizer import (
    ElasticCellProblem,
    EffectiveModel,
    StokesCellProblem,
    _phase_average,
    assemble_effective,
    density_weights,
)
from .loads import LoadField
from .macro import assemble_macro_system, macro_mesh, solve_macro
from .memory import volterra_convolve, FieldHistory

ONE = CoefficientField.scalar(1.0)


@dataclass
class Context:
    seed: int = 0
    inject_non_spd: bool = False


@dataclass
class PropertyResult:
    name: str
    module: str
    passed: bool
    detail: str
    seconds: float = 0.0

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"


REGISTRY: List[tuple] = []


def prop(module: str, name: str):
    def wrap(func: Callable):
        REGISTRY.append((module, name, func))
        return func

    return wrap


def config_path(name: str) -> Path:
    """Path of a bundled configuration (``disk``, ``quick``, ``laminate``, ``contrast1``)."""
    return Path(str(resources.files("viscohom") / "configs" / f"{name}.toml"))


# random fixtures ----------------------------------------------------------

def random_trig(rng, dimension: int, max_terms: int = 8, max_freq: float = 4.0,
                min_freq: float = 1.0, zero: Optional[bool] = None) -> TrigPolynomial:
    """Random polynomial; nonzero frequency components satisfy ``|mu_i| >= min_freq``."""
    k = int(rng.integers(1, max_terms + 1))
    freqs = rng.uniform(min_freq, max_freq, (k, dimension)) * rng.choice([-1, 1], (k, dimension))
    freqs[rng.random((k, dimension)) < 0.25] = 0.0
    if zero is None:
        zero = rng.random() < 0.5
    freqs[0] = 0.0 if zero else freqs[0]
    amps = rng.uniform(-1, 1, k) + 1j * rng.uniform(-1, 1, k)
    return TrigPolynomial(dimension, freqs, amps)


def random_spd(rng, n: int, floor: float = 0.5) -> np.ndarray:
    """Random symmetric positive definite ``n^2 x n^2`` tensor."""
    q = rng.normal(size=(n * n, n * n))
    return q @ q.T / (n * n) + floor * np.eye(n * n)


# ap_core ------------------------------------------------------------------

@prop("ap_core", "mean_value_translation_invariant")
def _p_mean_shift(rng, ctx):
    worst = 0.0
    for _ in range(20):
        p = random_trig(rng, int(rng.integers(1, 4)))
        a = rng.uniform(-50, 50, p.dimension)
        worst = max(worst, abs(mean_value(p.shift(a)) - mean_value(p)))
    return worst == 0.0, f"max |M(p(.+a)) - M(p)| = {worst:.1e}"


@prop("ap_core", "mean_value_linear")
def _p_mean_linear(rng, ctx):
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 4))
        p, q = random_trig(rng, d), random_trig(rng, d)
        c = complex(rng.normal(), rng.normal())
        lhs = mean_value(TrigPolynomial.constant(c, d) * p + q)
        worst = max(worst, abs(lhs - (c * mean_value(p) + mean_value(q))))
    return worst <= 1e-14, f"max defect {worst:.1e}"


@prop("ap_core", "mean_value_real_under_conjugate_symmetry")
def _p_mean_real(rng, ctx):
    worst = 0.0
    for _ in range(20):
        p = random_trig(rng, int(rng.integers(1, 4)))
        q = p + p.conj()
        worst = max(worst, abs(mean_value(q).imag))
    return worst == 0.0, f"max |Im M| = {worst:.1e}"


@prop("ap_core", "mean_value_matches_window_average")
def _p_mean_window(rng, ctx):
    worst = 0.0
    for _ in range(20):
        p = random_trig(rng, 2)
        est = window_average(p, 2, 512.0, spacing=np.pi / (4 * max(p.max_frequency(), 1.0)))
        worst = max(worst, abs(est - mean_value(p)))
    return worst < 1e-4, f"max |window - M| = {worst:.2e} (R = 512, Fejer weights)"


@prop("ap_core", "parseval_besicovitch")
def _p_parseval(rng, ctx):
    worst = 0.0
    for _ in range(20):
        p = random_trig(rng, int(rng.integers(1, 4)))
        direct = mean_value(p * p.conj()).real  # independent route: product then mean
        worst = max(worst, abs(besicovitch_seminorm(p, 2) ** 2 - direct) / max(direct, 1e-300))
    return worst <= 1e-12, f"max relative defect {worst:.1e}"


def _random_tile(rng):
    shape = tuple(int(v) for v in rng.integers(1, 7, 2))
    tile = rng.integers(0, 2, shape)
    return tile


def _compatible(found, true_period) -> bool:
    return all(t % f == 0 for f, t in zip(found, true_period))


@prop("ap_core", "detect_period_divisor_compatible")
def _p_period(rng, ctx):
    bad = 0
    for _ in range(50):
        tile = _random_tile(rng)
        theta = PoreDistribution.from_tile(tile, reps=(3, 3))
        found = detect_period(theta)
        sub = PoreDistribution(theta.window[: 2 * tile.shape[0], : 2 * tile.shape[1]])
        if not (_compatible(found, tile.shape) and _compatible(detect_period(sub), tile.shape)):
            bad += 1
    return bad == 0, f"{bad} of 50 patterns gave an incompatible period"


@prop("ap_core", "detect_period_shift_invariant")
def _p_period_shift(rng, ctx):
    bad = 0
    for _ in range(50):
        tile = _random_tile(rng)
        ref = detect_period(PoreDistribution.from_tile(tile, reps=(3, 3)))
        off = tuple(int(v) for v in rng.integers(-20, 20, 2))
        if detect_period(PoreDistribution.from_tile(tile, reps=(3, 3), offset=off)) != ref:
            bad += 1
    return bad == 0, f"{bad} of 50 shifted patterns changed period"


@prop("ap_core", "torus_convolve_commutative_associative")
def _p_torus(rng, ctx):
    u, v, w = (rng.normal(size=(64, 64)) for _ in range(3))
    c1 = np.abs(torus_convolve(u, v) - torus_convolve(v, u)).max()
    a = torus_convolve(torus_convolve(u, v), w)
    b = torus_convolve(u, torus_convolve(v, w))
    c2 = np.abs(a - b).max() / np.abs(a).max()
    return max(c1 / np.abs(torus_convolve(u, v)).max(), c2) <= 1e-12, \
        f"commutator {c1:.1e}, associator {c2:.1e}"


# cell_geometry -------------------------------------------------------------

@prop("cell_geometry", "indicators_partition_unity")
def _p_chi(rng, ctx):
    specs = [{"kind": "disk", "center": [0.5, 0.5], "radius": 0.3},
             {"kind": "box", "corner": [0.2, 0.3], "sides": [0.5, 0.4]},
             {"kind": "laminate", "dimension": 2, "thickness": 0.4},
             {"kind": "full", "dimension": 2}]
    y = rng.uniform(-3, 3, (10000, 2))
    worst = max(np.abs(g.chi1(y) + g.chi2(y) - 1).max()
                for g in (build_cell(s, for_fluid=False) for s in specs))
    return worst == 0.0, f"max |chi1 + chi2 - 1| = {worst:.1e}"


@prop("cell_geometry", "solid_measure_scaling")
def _p_scaling(rng, ctx):
    """|Omega1_eps cap W| -> |Y1| |W| on a window W not aligned with the lattice."""
    g = build_cell({"kind": "disk", "center": [0.5, 0.5], "radius": 0.25})
    L, n = 0.7, 2000
    t = (np.arange(n) + 0.5) / n * L
    pts = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
    errs = [abs(g.chi1(pts / e).mean() * L * L - g.solid_measure() * L * L)
            for e in (0.25, 0.125, 0.0625)]
    return all(b < a for a, b in zip(errs, errs[1:])), \
        "errors " + ", ".join(f"{e:.2e}" for e in errs)


@prop("cell_geometry", "phase_tagging_resolution_consistent")
def _p_tagging(rng, ctx):
    """Mean solid-fraction error over random disks drops by >= 2 * 0.8 per doubling."""
    cs = rng.uniform(0.35, 0.65, (24, 2))
    rs = rng.uniform(0.15, 0.25, 24)
    geoms = [build_cell({"kind": "disk", "center": list(c), "radius": r}) for c, r in zip(cs, rs)]
    errs = []
    for res in (16, 32, 64, 128):
        errs.append(np.mean([abs((mesh_cell(g, res).phase == SOLID).mean() - g.solid_measure())
                             for g in geoms]))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    return min(ratios) >= 1.6, "ratios " + ", ".join(f"{r:.2f}" for r in ratios)


# fem -------------------------------------------------------------------------

def _coercivity_fixture(rng, ctx, n=2):
    a = random_spd(rng, n)
    if ctx.inject_non_spd:
        a = a - (np.linalg.eigvalsh(a).max() + 1.0) * np.diag([1.0] + [0.0] * (n * n - 1))
    return a


@prop("fem", "coercivity_smallest_ritz_value")
def _p_coercive(rng, ctx):
    a0 = _coercivity_fixture(rng, ctx)
    try:
        check_coercive(a0, "fixture")
    except CoercivityViolation as exc:
        return False, f"fixture rejected: {exc}"
    out = []
    g = build_cell({"kind": "disk", "center": [0.5, 0.5], "radius": 0.3})
    m = mesh_cell(g, 8)
    k = assemble_vector_elliptic(m, a0, SOLID)
    blocked = np.flatnonzero(m.nodes_touching(m.phase != SOLID))
    cons = ConstraintSet(2 * m.n_nodes, node_dofs(blocked, m.n_nodes, 2))
    kr = cons.reduce(k).toarray()
    out.append(np.linalg.eigvalsh(kr).min() / np.trace(kr) * kr.shape[0])
    # periodic full cell: coercive on the complement of constants
    k = assemble_vector_elliptic(m, a0).toarray()
    z = constant_modes(m.n_nodes, 2)
    q, _ = np.linalg.qr(np.column_stack([z.T, rng.normal(size=(k.shape[0], k.shape[0] - 2))]))
    comp = q[:, 2:]
    out.append(np.linalg.eigvalsh(comp.T @ k @ comp).min() / np.trace(k) * k.shape[0])
    return min(out) > 0, "scaled smallest Ritz values " + ", ".join(f"{v:.2e}" for v in out)


@prop("fem", "solve_spd_galerkin_orthogonality")
def _p_galerkin(rng, ctx):
    m = macro_mesh(2, 12)
    cons = ConstraintSet(2 * m.n_nodes, node_dofs(m.boundary_nodes(), m.n_nodes, 2))
    a = cons.reduce(assemble_vector_elliptic(m, random_spd(rng, 2))).tocsr()
    b = rng.normal(size=a.shape[0])
    x = solve_spd(a, b, tol=1e-12)
    basis = rng.normal(size=(a.shape[0], 10))
    r = b - a @ x
    defect = np.abs(basis.T @ r).max() / (np.abs(basis).sum(axis=0).max() * np.abs(b).max())
    return defect <= 1e-11, f"max |v . r| (scaled) = {defect:.1e}"


@prop("fem", "assembly_deterministic")
def _p_det(rng, ctx):
    g = build_cell({"kind": "disk", "center": [0.5, 0.5], "radius": 0.3})
    m = mesh_cell(g, 12)
    coeff = CoefficientField(random_spd(rng, 2), TrigPolynomial.from_terms(
        [((0.0, 0.0), 1.0), ((2 * np.pi, 0.0), 0.1)]))
    a = assemble_vector_elliptic(m, coeff.sample_cells(m), SOLID).tocsr()
    b = assemble_vector_elliptic(m, coeff.sample_cells(m), SOLID).tocsr()
    same = (np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
            and a.data.tobytes() == b.data.tobytes())
    return same, "bit-identical" if same else "operators differ"


# memory ----------------------------------------------------------------------

def _hist(values, dt):
    h = FieldHistory(dt)
    for v in values:
        h.append(np.atleast_1d(v))
    return h


@prop("memory", "volterra_young_inequality")
def _p_young(rng, ctx):
    worst = -np.inf
    for _ in range(100):
        n = int(rng.integers(2, 60))
        dt = float(rng.uniform(0.001, 0.1))
        k = rng.normal(size=n + 1)
        g = rng.normal(size=n + 1)
        h = _hist(g, dt)
        conv = max(abs(volterra_convolve(k, h, m)[0]) for m in range(n + 1))
        bound = np.abs(k).sum() * dt * np.abs(g).max()
        worst = max(worst, conv - bound)
    return worst <= 0, f"max (||k*g|| - bound) = {worst:.2e}"


@prop("memory", "volterra_bilinear")
def _p_bilinear(rng, ctx):
    n, dt = 40, 0.02
    k1, k2 = rng.normal(size=(2, n + 1))
    g1, g2 = rng.normal(size=(2, n + 1, 3))
    a, b = rng.normal(size=2)
    worst = 0.0
    for m in range(n + 1):
        lhs = volterra_convolve(a * k1 + b * k2, _hist(g1, dt), m)
        rhs = a * volterra_convolve(k1, _hist(g1, dt), m) + b * volterra_convolve(k2, _hist(g1, dt), m)
        lhs2 = volterra_convolve(k1, _hist(a * g1 + b * g2, dt), m)
        rhs2 = a * volterra_convolve(k1, _hist(g1, dt), m) + b * volterra_convolve(k1, _hist(g2, dt), m)
        worst = max(worst, np.abs(lhs - rhs).max(), np.abs(lhs2 - rhs2).max())
    return worst <= 1e-12, f"max superposition defect {worst:.1e}"


@prop("memory", "volterra_causal")
def _p_causal(rng, ctx):
    n, dt = 30, 0.05
    k = rng.normal(size=n + 1)
    g = rng.normal(size=(n + 1, 2))
    ok = True
    for m in range(n):
        g2 = g.copy()
        g2[m + 1:] += rng.normal(size=g2[m + 1:].shape)
        ok &= np.array_equal(volterra_convolve(k, _hist(g, dt), m), volterra_convolve(k, _hist(g2, dt), m))
    return bool(ok), "future perturbations leave past outputs bit-identical" if ok else "acausal"


def exp_kernel_errors(dts=(1 / 16, 1 / 32, 1 / 64, 1 / 128)):
    """Error of ``int_0^1 e^-(1-s) ds`` by trapezoid convolution per ``dt``."""
    errs = []
    for dt in dts:
        n = int(round(1 / dt))
        k = np.exp(-np.arange(n + 1) * dt)
        val = volterra_convolve(k, _hist(np.ones(n + 1), dt), n)[0]
        errs.append(abs(val - (1 - np.exp(-1))))
    return np.asarray(errs)


@prop("memory", "convolution_quadrature_exp_kernel")
def _p_exp(rng, ctx):
    errs = exp_kernel_errors()
    orders = np.log2(errs[:-1] / errs[1:])
    ok = errs[2] < 5e-4 and orders.min() >= 1.9
    return bool(ok), f"error at dt=1/64: {errs[2]:.2e}; orders " + ", ".join(f"{o:.3f}" for o in orders)


# homogenizer -----------------------------------------------------------------

def _disk_mesh(res=16):
    g = build_cell({"kind": "disk", "center": [0.5, 0.5], "radius": 0.25})
    return g, mesh_cell(g, res)


def modulated_fixture(rng, n=2):
    mod = TrigPolynomial.from_terms([((0.0,) * n, 1.0), ((2 * np.pi,) + (0.0,) * (n - 1), 0.15),
                                     ((-2 * np.pi,) + (0.0,) * (n - 1), 0.15)])
    return (CoefficientField(random_spd(rng, n), mod), CoefficientField(random_spd(rng, n, 0.2), mod))


@prop("homogenizer", "effective_map_linear")
def _p_linear(rng, ctx):
    g, m = _disk_mesh()
    A0, B0 = modulated_fixture(rng)
    model = assemble_effective(g, m, A0, None, B0, None, ONE, ONE, keep_correctors=False)
    ep = ElasticCellProblem(m, A0)
    worst = 0.0
    for _ in range(3):
        xi = rng.normal(size=4)
        direct = _phase_average(m, ep.mask, ep.coeff, ep.solve(xi).total_gradient())
        worst = max(worst, np.abs(direct - model.C0 @ xi).max() / np.abs(model.C0 @ xi).max())
    return worst <= 1e-8, f"max relative |C0 xi - direct| = {worst:.1e}"


@prop("homogenizer", "effective_symmetric_psd_voigt")
def _p_sym(rng, ctx):
    g, m = _disk_mesh()
    A0, B0 = modulated_fixture(rng)
    model = assemble_effective(g, m, A0, None, B0, None, ONE, ONE, keep_correctors=False)
    asym = max(np.abs(c - c.T).max() / np.abs(c).max() for c in (model.C0, model.C1))
    xis = rng.normal(size=(100, 4))
    psd = min(np.einsum("ki,ij,kj->k", xis, c, xis).min() for c in (model.C0, model.C1))
    # M(chi1 A0): the energy of the zero corrector
    voigt = A0.sample_cells(m)[m.phase == SOLID].sum(axis=0) * m.cell_volume / m.volume
    gap = np.einsum("ki,ij,kj->k", xis, voigt - model.C0, xis).min()
    ok = asym <= 1e-8 and psd >= -1e-12 and gap >= -1e-12
    return ok, f"asymmetry {asym:.1e}, min quadratic form {psd:.2e}, min Voigt gap {gap:.2e}"


def laminate_errors(resolutions=(9, 17, 33, 65, 129)):
    g = build_cell({"kind": "laminate", "dimension": 1, "thickness": 0.5}, for_fluid=False)
    out = []
    for r in resolutions:
        m = mesh_cell(g, r)
        model = assemble_effective(g, m, CoefficientField.tensor(1.0, 1), None,
                                   CoefficientField.tensor(1.0, 1), None, ONE, ONE,
                                   full_cell=True, A0_matrix=CoefficientField.tensor(4.0, 1),
                                   keep_correctors=False)
        out.append(float(model.C0[0, 0]))
    return np.asarray(out)


@prop("homogenizer", "laminate_harmonic_mean")
def _p_laminate(rng, ctx):
    vals = laminate_errors((9, 17, 33, 65, 129, 128))
    errs = np.abs(vals - 1.6) / 1.6
    ok = errs[-1] < 0.01 and all(b < a for a, b in zip(errs[:-1], errs[1:-1]))
    return bool(ok), f"C0 at h=1/128: {vals[-1]:.6f}; odd-n errors " + ", ".join(
        f"{e:.1e}" for e in errs[:-1])


def disk_trig_mean(p: TrigPolynomial, center, radius) -> complex:
    """``int_{|y - c| < r} p(y) dy`` in closed form (2D Bessel formula)."""
    total = 0j
    for mu, a in p.terms:
        mu = np.asarray(mu)
        k = np.linalg.norm(mu)
        area = np.pi * radius**2 if k == 0 else 2 * np.pi * radius * j1(k * radius) / k
        total += a * np.exp(1j * mu @ np.asarray(center)) * area
    return total


@prop("homogenizer", "rho0_equals_mean_value")
def _p_rho(rng, ctx):
    c, r = (0.5, 0.5), 0.25
    g = build_cell({"kind": "disk", "center": list(c), "radius": r})
    t1 = TrigPolynomial.from_terms([((0.0, 0.0), 1.0), ((2 * np.pi, 0.0), 0.15),
                                    ((-2 * np.pi, 0.0), 0.15)])
    t2 = TrigPolynomial.from_terms([((0.0, 0.0), 1.0), ((0.0, 2 * np.pi), 0.1j),
                                    ((0.0, -2 * np.pi), -0.1j)])
    r1, r2 = float(rng.uniform(1, 3)), float(rng.uniform(0.5, 2))
    w = density_weights(g, CoefficientField.scalar(r1, t1), CoefficientField.scalar(r2, t2), None, 512)
    oracle = (r2 * mean_value(t2) + r1 * disk_trig_mean(t1, c, r) - r2 * disk_trig_mean(t2, c, r)).real
    err = abs(w[0] + w[1] - oracle)
    return err <= 1e-4, f"|rho0 - oracle| = {err:.1e}"


@prop("homogenizer", "rho0_closed_form_and_load_weights")
def _p_rho_closed(rng, ctx):
    g = build_cell({"kind": "disk", "center": [0.5, 0.5], "radius": 0.25})
    r1, r2 = float(rng.uniform(0.5, 3)), float(rng.uniform(0.5, 3))
    w = density_weights(g, CoefficientField.scalar(r1), CoefficientField.scalar(r2), None, 512)
    exact = r1 * np.pi / 16 + r2 * (1 - np.pi / 16)
    w1 = density_weights(g, ONE, ONE, None, 512)
    ok = abs(w[0] + w[1] - exact) < 1e-3 and w1[0] + w1[1] == 1.0
    return ok, f"|rho0 - closed form| = {abs(w[0] + w[1] - exact):.1e}, weights sum {float(w1[0] + w1[1])!r}"


@prop("homogenizer", "pressure_form_linear")
def _p_h(rng, ctx):
    g, m = _disk_mesh()
    _, B0 = modulated_fixture(rng)
    model = assemble_effective(g, m, CoefficientField.tensor(1.0, 2), None, B0, None, ONE, ONE,
                               keep_correctors=False)
    st = StokesCellProblem(m, B0)
    xi = rng.normal(size=4)
    v = st.solve(xi)
    direct = v.cell_pressure()[st.mask].sum() * m.cell_volume / m.volume
    err = abs(direct - model.h(xi))
    return err <= 1e-7, f"|h(xi) - direct| = {err:.1e}"


# macro_solver ------------------------------------------------------------------

def simple_model(n=2, c0=1.0, c1=0.0, rho0=1.0) -> EffectiveModel:
    eye = np.eye(n * n)
    return EffectiveModel(n, rho0, c0 * eye, c1 * eye, np.zeros(n * n), load_weights=(1.0, 0.0),
                          volume_fractions=(1.0, 0.0))


@prop("macro_solver", "zero_load_zero_trajectory")
def _p_zero(rng, ctx):
    model = simple_model(c1=0.1)
    tr = solve_macro(model, macro_mesh(2, 8), LoadField.zero(2), LoadField.zero(2), 0.5, 1 / 32)
    ok = not np.any(tr.U) and not np.any(tr.V)
    return ok, "exactly zero" if ok else f"max |u| = {np.abs(tr.U).max():.1e}"


@prop("macro_solver", "free_decay_energy_nonincreasing")
def _p_decay(rng, ctx):
    model = simple_model(c0=float(rng.uniform(0.5, 2)), c1=float(rng.uniform(0.01, 0.2)))
    f = LoadField("sine", (1.0, 0.5), "pulse", 0.25)
    tr = solve_macro(model, macro_mesh(2, 12), f, LoadField.zero(2), 2.0, 1 / 64)
    e = tr.energy["kinetic"] + tr.energy["elastic"]
    after = e[int(round(0.25 * 64)):]
    rise = np.max(np.diff(after)) / after.max()
    return rise <= 1e-12, f"max relative step increase after the pulse {rise:.1e}"


def manufactured_static_errors(resolutions=(8, 16, 32)):
    """L2 error of the stiffness solve for ``u = sin(pi x) sin(pi y) (1, 2)``."""
    errs = []
    for r in resolutions:
        m = macro_mesh(2, r)
        ops = assemble_macro_system(simple_model(), m)

        def exact(x):
            s = np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
            return np.stack([s, 2 * s], axis=1)

        # -Laplace u = 2 pi^2 u; consistent load of the exact right-hand side
        fine = 2 * np.pi**2 * exact(m.vertices)
        u = solve_spd(ops.K, ops.load_vector(fine), tol=1e-13)
        e = ops.constraints.expand(u) - exact(m.vertices).T.ravel()
        full = ops.unit_mass
        errs.append(float(np.sqrt(e @ (full @ e))))
    return np.asarray(errs)


@prop("macro_solver", "static_convergence_second_order")
def _p_static(rng, ctx):
    errs = manufactured_static_errors()
    orders = np.log2(errs[:-1] / errs[1:])
    return orders.min() >= 1.8, "L2 orders " + ", ".join(f"{o:.2f}" for o in orders)


def standing_wave_errors(dts=(1 / 16, 1 / 32, 1 / 64), T=0.5, res=16):
    """Error of the discrete ``sin(pi x)`` mode against ``cos(omega_h t)``.

    ``omega_h`` is the exact discrete frequency of the mode on the mesh, so the
    remaining error is the time-stepping phase error alone.
    """
    model = simple_model(1, c0=1.0)
    mesh = macro_mesh(1, res)
    ops = assemble_macro_system(model, mesh)
    x = mesh.vertices[ops.constraints.free, 0]
    phi = np.sin(np.pi * x)
    omega = np.sqrt((phi @ (ops.K @ phi)) / (phi @ (ops.M @ phi)))
    from .macro import MacroState, NewmarkStepper

    errs = []
    for dt in dts:
        stp = NewmarkStepper(ops, dt)
        st = MacroState.zero(ops.size, dt)
        st.u = phi.copy()
        st.a = -omega**2 * phi
        steps = int(round(T / dt))
        for _ in range(steps):
            st = stp.step(st, np.zeros(ops.size))
        errs.append(float(np.abs(st.u - np.cos(omega * T) * phi).max()))
    return np.asarray(errs)


@prop("macro_solver", "standing_wave_phase_second_order")
def _p_wave(rng, ctx):
    errs = standing_wave_errors()
    orders = np.log2(errs[:-1] / errs[1:])
    return orders.min() >= 1.9, "orders " + ", ".join(f"{o:.3f}" for o in orders)


# fine_solver -------------------------------------------------------------------

def _small_fine(eps=0.5):
    g = build_cell({"kind": "disk", "center": [0.5, 0.5], "radius": 0.25})
    dom = build_epsilon_domain(g, eps, resolution=8)
    A0 = CoefficientField.tensor(1.0, 2)
    B0 = CoefficientField.tensor(0.1, 2)
    return assemble_fine_operators(dom, A0, None, B0, None, CoefficientField.scalar(2.0), ONE)


@prop("fine_solver", "causal_zero_until_load")
def _p_fine_causal(rng, ctx):
    ops = _small_fine()
    base = LoadField("curl_bump", (1.0,), "constant")
    t0 = 0.25

    def f(x, t):
        return base(x, t) if t >= t0 - 1e-12 else np.zeros((x.shape[0], 2))

    tr = solve_fine(ops, f, f, 0.5, 1 / 32)
    k0 = int(round(t0 * 32))
    # the implicit step responds at the first loaded step itself
    ok = not np.any(tr.U[:k0]) and not np.any(tr.V[:k0]) and np.any(tr.U[k0])
    return bool(ok), f"zero before step {k0}, nonzero from it" if ok else "not causal"


@prop("fine_solver", "interface_single_valued")
def _p_interface(rng, ctx):
    ops = _small_fine()
    mesh = ops.mesh
    shared = mesh.nodes_touching(ops.solid) & mesh.nodes_touching(ops.fluid)
    n_shared = int(shared.sum())
    # one unknown per node and component, whatever phases touch the node
    ok = ops.size + ops.constraints.fixed.size == 2 * mesh.n_nodes and n_shared > 0
    return ok, f"{n_shared} interface nodes carry one displacement each"


@prop("fine_solver", "energy_identity")
def _p_identity(rng, ctx):
    ops = _small_fine(0.25)
    f = LoadField("curl_bump", (1.0,), "smooth", 0.5)
    tr = solve_fine(ops, f, LoadField.zero(2), 0.5, 1 / 64)
    worst = float(tr.energy["identity_residual"].max())
    return worst < 1e-6, f"max relative identity residual {worst:.1e}"


def energy_quantities(cfg, eps_list=None):
    """The five energy quantities per eps for a configuration."""
    out = {}
    for eps in eps_list or cfg.eps:
        dom = build_epsilon_domain(cfg.geometry, eps, cfg.theta, cfg.mesh.fine)
        ops = assemble_fine_operators(dom, cfg.A0, cfg.A1, cfg.B0, cfg.B1, cfg.rho1, cfg.rho2,
                                      cfg.solver.alpha)
        tr = solve_fine(ops, cfg.f, cfg.g, cfg.T, cfg.dt)
        out[eps] = energy_report(tr)
    return out


ENERGY_KEYS = ("sup_u", "sup_grad_u", "sup_v", "int_grad_v", "p_l2")


@prop("fine_solver", "energy_bounds_uniform_in_eps")
def _p_uniform(rng, ctx):
    cfg = load_config(config_path("disk"))
    q = energy_quantities(cfg)
    spread = {k: max(r[k] for r in q.values()) / min(r[k] for r in q.values()) for k in ENERGY_KEYS}
    resid = max(r["max_identity_residual"] for r in q.values())
    ok = max(spread.values()) < 2 and resid < 1e-6
    return ok, "max/min " + ", ".join(f"{k}={v:.2f}" for k, v in spread.items()) + \
        f"; identity residual {resid:.1e}"


# harness_cli -------------------------------------------------------------------

@prop("harness_cli", "config_round_trip")
def _p_roundtrip(rng, ctx):
    bad = []
    for name in ("disk", "quick", "laminate", "contrast1"):
        text = config_path(name).read_text()
        norm = serialize_config(parse_config(text))
        if serialize_config(parse_config(norm)) != norm:
            bad.append(name)
    return not bad, "fixed point for all bundled configs" if not bad else f"failed: {bad}"


@prop("harness_cli", "reproducible_outputs")
def _p_repro(rng, ctx):
    from .harness import run_convergence

    cfg = load_config(config_path("quick"))
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in ("a", "b"):
            out = Path(tmp) / run
            run_convergence(cfg, out)
            digests.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = digests[0] == digests[1]
    return same, f"{len(digests[0])} CSV files bit-identical" if same else "CSV outputs differ"


# runner -------------------------------------------------------------------------

def run_property_suite(seed: int = 0, out=None, inject_non_spd: bool = False,
                       only: Optional[List[str]] = None) -> List[PropertyResult]:
    """Run the registered properties; write ``properties.csv`` when ``out`` is given."""
    ctx = Context(seed, inject_non_spd)
    results = []
    for index, (module, name, func) in enumerate(REGISTRY):
        if only is not None and name not in only and module not in only:
            continue
        rng = np.random.default_rng([seed, index])
        t0 = time.perf_counter()
        try:
            passed, detail = func(rng, ctx)
        except Exception as exc:  # a crashing property is a failing property
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(PropertyResult(name, module, bool(passed), detail, time.perf_counter() - t0))
    if out is not None:
        out = Path(out)
        write_csv(out / "properties.csv", "properties", COLUMNS["properties"],
                  ([r.name, r.module, r.status, r.detail] for r in results))
        for r in results:
            append_timing(out, f"property {r.name}", r.seconds)
    return results
