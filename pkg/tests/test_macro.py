import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from viscohom.coefficients import CoefficientField
from viscohom.fem import assemble_vector_elliptic, identity_tensor, is_symmetric
from viscohom.geometry import build_cell, mesh_cell
from viscohom.homogenizer import EffectiveModel, assemble_effective
from viscohom.loads import LoadField
from viscohom.macro import (
    MacroState,
    NewmarkStepper,
    assemble_macro_system,
    macro_mesh,
    solve_macro,
    step_newmark,
)


def model(n=2, c0=1.0, c1=0.0, rho0=1.0, H=None):
    eye = np.eye(n * n)
    return EffectiveModel(n, rho0, c0 * eye, c1 * eye, np.zeros(n * n) if H is None else H,
                          load_weights=(1.0, 0.0), volume_fractions=(1.0, 0.0))


def test_operators_structure():
    ops = assemble_macro_system(model(), macro_mesh(2, 8))
    assert is_symmetric(ops.K) and is_symmetric(ops.M)
    assert np.linalg.eigvalsh(ops.M.toarray()).min() > 0
    assert ops.D.nnz == 0 and ops.P.nnz == 0


def test_identity_tensor_gives_vector_laplacian():
    m = macro_mesh(2, 6)
    ops = assemble_macro_system(model(), m)
    lap = ops.constraints.reduce(assemble_vector_elliptic(m, identity_tensor(2)))
    assert abs(ops.K - lap).max() < 1e-14


@given(st.integers(0, 2**16))
def test_pressure_coupling_linear_in_h(seed):
    r = np.random.default_rng(seed)
    m = macro_mesh(2, 5)
    h1, h2 = r.normal(size=(2, 4))
    p1 = assemble_macro_system(model(H=h1), m).P
    p2 = assemble_macro_system(model(H=h2), m).P
    p12 = assemble_macro_system(model(H=h1 + h2), m).P
    assert abs(p12 - p1 - p2).max() <= 1e-12 * max(abs(p12).max(), 1)


def test_zero_step_stays_zero():
    ops = assemble_macro_system(model(c1=0.1), macro_mesh(2, 6))
    state = MacroState.zero(ops.size, 0.01)
    stepper = NewmarkStepper(ops, 0.01)
    for _ in range(5):
        state = step_newmark(state, ops, np.zeros(ops.size), stepper)
    assert not state.u.any() and not state.v.any() and not state.a.any()


def test_zero_load_zero_trajectory():
    tr = solve_macro(model(c1=0.2), macro_mesh(2, 8), LoadField.zero(2), LoadField.zero(2), 0.5, 1 / 32)
    assert not tr.U.any() and not tr.V.any()


def _mode(res=16):
    m = macro_mesh(1, res)
    ops = assemble_macro_system(model(1), m)
    x = m.vertices[ops.constraints.free, 0]
    phi = np.sin(np.pi * x)
    lam = (phi @ (ops.K @ phi)) / (phi @ (ops.M @ phi))
    # the sampled sine is an exact discrete eigenvector on a uniform 1D mesh
    assert np.allclose(ops.K @ phi, lam * (ops.M @ phi), atol=1e-12)
    return m, ops, phi, lam


def test_standing_wave_phase_second_order():
    _, ops, phi, lam = _mode()
    omega = np.sqrt(lam)
    T = 0.5
    errs = []
    for dt in (1 / 16, 1 / 32, 1 / 64, 1 / 128):
        stepper = NewmarkStepper(ops, dt)
        state = MacroState.zero(ops.size, dt)
        state.u, state.a = phi.copy(), -lam * phi
        for _ in range(int(round(T / dt))):
            state = stepper.step(state, np.zeros(ops.size))
        errs.append(np.abs(state.u - np.cos(omega * T) * phi).max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert orders.min() >= 1.9


def test_forced_mode_temporal_order():
    # semi-discrete solution phi q(t) with q = 1 - cos(2 pi t): q'' + lam q = g
    m, ops, phi, lam = _mode()

    def g(t):
        return 4 * np.pi**2 * np.cos(2 * np.pi * t) + lam * (1 - np.cos(2 * np.pi * t))

    def f(x, t):
        return (np.sin(np.pi * x[:, 0]) * g(t))[:, None]

    T = 0.75
    errs = []
    for dt in (1 / 32, 1 / 64, 1 / 128):
        tr = solve_macro(model(1), m, f, LoadField.zero(1), T, dt, ops=ops)
        errs.append(np.abs(tr.U[-1] - (1 - np.cos(2 * np.pi * T)) * phi).max())
    assert np.min(np.log2(np.array(errs[:-1]) / errs[1:])) >= 1.9


def test_constant_load_weights():
    g = build_cell({"kind": "disk", "center": [0.5, 0.5], "radius": 0.25})
    one = CoefficientField.scalar(1.0)
    eff = assemble_effective(g, mesh_cell(g, 8), CoefficientField.tensor(1.0, 2), None,
                             CoefficientField.tensor(1.0, 2), None, one, one, keep_correctors=False)
    np.testing.assert_array_equal(eff.load([1.0, 0.0], [1.0, 0.0]), [1.0, 0.0])


def test_energy_balance():
    f = LoadField("sine", (1.0, 0.5), "smooth", 0.5)
    tr = solve_macro(model(c0=1.3, c1=0.05), macro_mesh(2, 12), f, LoadField.zero(2), 1.0, 1 / 64)
    assert tr.energy["balance_residual"][1:].max() < 1e-6
    assert tr.energy["dissipated"][-1] > 0


@given(st.floats(0.5, 2.0), st.floats(0.01, 0.3))
def test_free_decay_energy_non_increasing(c0, c1):
    pulse = LoadField("sine", (1.0, -0.5), "pulse", 0.25)
    tr = solve_macro(model(c0=c0, c1=c1), macro_mesh(2, 8), pulse, LoadField.zero(2), 1.0, 1 / 32)
    e = tr.energy["kinetic"] + tr.energy["elastic"]
    after = e[8:]
    assert np.all(np.diff(after) <= 1e-12 * after.max())


def test_static_manufactured_second_order():
    from viscohom.fem import solve_spd

    errs = []
    for r in (8, 16, 32):
        m = macro_mesh(2, r)
        ops = assemble_macro_system(model(), m)
        s = np.sin(np.pi * m.vertices[:, 0]) * np.sin(np.pi * m.vertices[:, 1])
        exact = np.stack([s, -s], 1)
        u = solve_spd(ops.K, ops.load_vector(2 * np.pi**2 * exact), tol=1e-13)
        e = ops.constraints.expand(u) - exact.T.ravel()
        errs.append(np.sqrt(e @ (ops.unit_mass @ e)))
    assert np.min(np.log2(np.array(errs[:-1]) / errs[1:])) >= 1.8


def test_non_multiple_horizon_rejected():
    with pytest.raises(ValueError):
        solve_macro(model(), macro_mesh(2, 4), LoadField.zero(2), LoadField.zero(2), 0.3, 0.25)
