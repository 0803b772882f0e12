import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smartskin.ipt import (IptError, MinNormSolver, calibrate_mask_scale, init_currents,
                           min_norm_currents, project_currents, project_pattern,
                           project_reflective, radiate, read_currents, reflective_basis,
                           run_ipt, write_currents, write_history)
from smartskin.masks import FootprintMask, all_pass, square_mask
from smartskin.radiator import (FieldSamples, SurfaceCurrentField, build_plan,
                                pattern_matching_index)
from smartskin.scenario import ETA0, ObservationGrid, SkinGeometry, SynthesisConfig
from smartskin.unitcell import fidelity_index

from conftest import random_currents, rel_err

CFG = SynthesisConfig()


def _cell_mags(J):
    return (np.sqrt(np.sum(np.abs(J.je) ** 2, axis=0)),
            np.sqrt(np.sum(np.abs(J.jm) ** 2, axis=0)))


def test_init_currents_magnitudes(small_geometry):
    me, mm = _cell_mags(init_currents(small_geometry, CFG, 3))
    np.testing.assert_allclose(me, CFG.C_e, rtol=1e-12)
    np.testing.assert_allclose(mm, CFG.c_m, rtol=1e-12)


def test_init_currents_seeded(small_geometry):
    a, b = init_currents(small_geometry, CFG, 1), init_currents(small_geometry, CFG, 1)
    c = init_currents(small_geometry, CFG, 2)
    assert np.array_equal(a.stack(), b.stack())
    differs = np.any(a.stack() != c.stack(), axis=0)
    assert differs.mean() >= 0.99


# ---------------------------------------------------------------- projections
def _field(values, lower_db, upper_db):
    v = np.asarray(values, dtype=complex)
    n = v.shape[1]
    grid = ObservationGrid(n, 1, 0, 0, max(n - 1, 1), 0)
    f = FieldSamples(grid, v[0], v[1], np.ones(n), np.ones(n, bool))
    return f, FootprintMask(grid, np.asarray(lower_db, float), np.asarray(upper_db, float))


def test_pattern_projection_clamps_and_keeps_direction():
    f, m = _field([[3.0 + 4.0j, 0.1, 0.5j], [0.0, 0.0, 0.5]], [-np.inf, 0.0, -10.0], [0.0, 10.0, 10.0])
    g = project_pattern(f, m)
    np.testing.assert_allclose(g.magnitude, [1.0, 1.0, np.sqrt(0.5)], rtol=1e-15)
    assert np.angle(g.e_theta[0]) == pytest.approx(np.angle(3.0 + 4.0j))
    assert g.e_theta[2] == f.e_theta[2] and g.e_phi[2] == f.e_phi[2]


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_pattern_projection_idempotent(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((2, 40)) + 1j * rng.standard_normal((2, 40))
    lo = rng.uniform(-10, 5, 40)
    f, m = _field(v, np.where(rng.random(40) < 0.3, -np.inf, lo), lo + rng.uniform(0, 5, 40))
    once = project_pattern(f, m, 1.7)
    twice = project_pattern(once, m, 1.7)
    assert np.max(np.abs(twice.vectors() - once.vectors())) <= 1e-12 * np.max(np.abs(once.vectors()))


def test_current_projection_arithmetic():
    g = SkinGeometry(1, 2, 5e-3, 5e-3)
    je = np.array([[[3.0, 0.0]], [[4.0, 0.0]]])
    J = project_currents(SurfaceCurrentField(g, je, je), CFG)
    np.testing.assert_allclose(J.je[:, 0, 0], [0.6, 0.8], rtol=1e-15)
    np.testing.assert_array_equal(J.je[:, 0, 1], [CFG.C_e, 0.0])
    np.testing.assert_allclose(J.jm[:, 0, 0], [0.6 * CFG.c_m, 0.8 * CFG.c_m], rtol=1e-15)


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
@settings(max_examples=30, deadline=None)
def test_current_projection_properties(seed, ce, cm):
    cfg = SynthesisConfig(C_e=ce, C_m=cm)
    g = SkinGeometry(6, 5, 5e-3, 5e-3)
    J = project_currents(random_currents(g, np.random.default_rng(seed)), cfg)
    me, mm = _cell_mags(J)
    np.testing.assert_allclose(me, ce, rtol=1e-9)
    np.testing.assert_allclose(mm, cm, rtol=1e-9)
    again = project_currents(J, cfg)
    assert np.max(np.abs(again.stack() - J.stack())) <= 1e-12 * max(ce, cm)


def test_reflective_projection(small_geometry, wave):
    basis = reflective_basis(small_geometry, wave)
    J = project_reflective(random_currents(small_geometry, np.random.default_rng(1)), basis)
    a, b = basis
    g = (J.stack() - a)[2] / b[2]
    np.testing.assert_allclose(np.abs(g), 1.0, rtol=1e-12)
    np.testing.assert_allclose(J.stack(), a + g * b, rtol=1e-12, atol=1e-14)
    again = project_reflective(J, basis)
    assert np.max(np.abs(again.stack() - J.stack())) <= 1e-12 * np.max(np.abs(J.stack()))


def test_reflective_basis_limits(small_geometry, wave):
    # Gamma = +1 leaves only 2 eta0 H_t, Gamma = -1 only 2 E_t / eta0
    a, b = reflective_basis(small_geometry, wave)
    ph = wave.phase(np.array([small_geometry.x_coords()[0], small_geometry.y_coords()[0], 0.0]))
    plus, minus = a + b, a - b
    assert not np.any(plus[:2]) and not np.any(minus[2:])
    np.testing.assert_allclose(plus[2:, 0, 0], 2 * ETA0 * wave.h_vector[:2] * ph, rtol=1e-12)
    np.testing.assert_allclose(minus[:2, 0, 0], 2 * wave.e_vector[:2] * ph / ETA0, rtol=1e-12)


# ------------------------------------------------------------------ calibration
def _square(grid):
    return square_mask(grid, center=(-25.0, 25.0), side=10.0)


def test_calibration_optimal_and_scales(small_geometry, ground_grid, wave):
    plan = build_plan(small_geometry, ground_grid, wave)
    mask = _square(ground_grid)
    E = radiate(plan, init_currents(small_geometry, CFG, 0))
    s = calibrate_mask_scale(E, mask)
    x = pattern_matching_index(E, mask, s)
    assert pattern_matching_index(E, mask, s * 1.01) >= x
    assert pattern_matching_index(E, mask, s * 0.99) >= x
    assert calibrate_mask_scale(E.scaled(2.0), mask) == pytest.approx(4.0 * s, rel=1e-12)


def test_calibration_feasible_and_degenerate():
    f, m = _field([[1.0, 2.0], [0.0, 0.0]], [-3.0, 3.0], [3.0, 9.0])
    s = calibrate_mask_scale(f, m)
    assert pattern_matching_index(f, m, s) == 0.0
    assert calibrate_mask_scale(f, all_pass(f.grid)) == 1.0


# ------------------------------------------------------------------ min-norm
def _wide_grid():
    return ObservationGrid(64, 64, -60.0, 0.0, 60.0, 60.0)


def test_min_norm_zero_target(wave):
    g = SkinGeometry(8, 8, 5e-3, 5e-3)
    plan = build_plan(g, _wide_grid(), wave)
    zero = plan.expand(np.zeros((2, plan.psi.shape[1])))
    for mode in ("exact", "spectral"):
        assert not np.any(min_norm_currents(MinNormSolver(plan, mode), zero).stack())


def test_min_norm_recovers_row_space_component(wave):
    # ground directions leave a null space, so radiated currents are recovered
    # up to their component in the retained singular subspace
    g = SkinGeometry(8, 8, 5e-3, 5e-3)
    plan = build_plan(g, _wide_grid(), wave)
    solver = MinNormSolver(plan, "exact")
    J = init_currents(g, CFG, 1)
    rec = min_norm_currents(solver, radiate(plan, J)).stack().ravel()
    _, _, Vh = solver._factor()
    expected = Vh.conj().T @ (Vh @ J.stack().ravel())
    assert rel_err(rec, expected) <= 1e-6
    # currents already in that subspace come back unchanged
    J2 = SurfaceCurrentField.from_stack(g, expected.reshape(4, 8, 8))
    rec2 = min_norm_currents(solver, radiate(plan, J2)).stack().ravel()
    assert rel_err(rec2, expected) <= 1e-6


def test_exact_mode_guard(wave):
    plan = build_plan(SkinGeometry(65, 64, 5e-3, 5e-3), ObservationGrid(4, 4, -5, 1, 5, 5), wave)
    with pytest.raises(IptError, match="spectral"):
        MinNormSolver(plan, "exact")


def test_dual_path_min_norm(wave):
    g = SkinGeometry(12, 12, 5e-3, 5e-3)
    plan = build_plan(g, _wide_grid(), wave)
    mask = _square(_wide_grid())
    E = radiate(plan, init_currents(g, CFG, 0))
    target = project_pattern(E, mask, calibrate_mask_scale(E, mask))
    exact = min_norm_currents(MinNormSolver(plan, "exact"), target)
    spec = min_norm_currents(MinNormSolver(plan, "spectral"), target)
    b = plan.compact(target)
    res = lambda J: np.linalg.norm(plan.forward(J.stack()) - b) / np.linalg.norm(b)
    assert fidelity_index(spec, exact) <= 0.05
    assert res(spec) <= 1.05 * res(exact)


# ------------------------------------------------------------------ IPT loop
@pytest.fixture(scope="module")
def ipt_case(wave):
    g = SkinGeometry(16, 16, 5e-3, 5e-3)
    grid = ObservationGrid(61, 31, -60.0, 0.0, 60.0, 60.0)
    return g, grid, _square(grid)


def test_ipt_single_iteration(ipt_case, wave):
    g, grid, mask = ipt_case
    res = run_ipt(g, wave, mask, SynthesisConfig(H=1))
    assert res.iterations == 1 and res.best_iteration == 0


def test_ipt_all_pass_converges_immediately(ipt_case, wave):
    g, grid, _ = ipt_case
    res = run_ipt(g, wave, all_pass(grid), SynthesisConfig(H=50))
    assert res.history == [0.0]


@pytest.mark.parametrize("model", ["isophoric", "reflective"])
def test_ipt_loop_properties(ipt_case, wave, model):
    g, grid, mask = ipt_case
    cfg = SynthesisConfig(H=30, current_model=model)
    res = run_ipt(g, wave, mask, cfg)
    assert res.x_ipt == min(res.history) <= res.history[0]
    assert res.history[res.best_iteration] == res.x_ipt
    assert len(res.history) == 30
    if model == "isophoric":
        me, mm = _cell_mags(res.currents)
        np.testing.assert_allclose(me, cfg.C_e, rtol=1e-9)
        np.testing.assert_allclose(mm, cfg.c_m, rtol=1e-9)
    again = run_ipt(g, wave, mask, cfg)
    assert again.history == res.history
    assert np.array_equal(again.currents.stack(), res.currents.stack())


def test_ipt_scale_equivalence(ipt_case, wave):
    g, grid, mask = ipt_case
    base = run_ipt(g, wave, mask, SynthesisConfig(H=20))
    scaled = run_ipt(g, wave, mask, SynthesisConfig(H=20, C_e=2.0, C_m=2.0 * ETA0))
    assert scaled.sigma == pytest.approx(4.0 * base.sigma, rel=1e-12)
    np.testing.assert_allclose(scaled.history, base.history, rtol=1e-9, atol=1e-12)


def test_ipt_rejects_unknown_model(ipt_case, wave):
    g, grid, mask = ipt_case
    with pytest.raises(IptError):
        run_ipt(g, wave, mask, CFG, current_model="amplitude")


def test_currents_and_history_files(tmp_path, small_geometry):
    J = random_currents(small_geometry, np.random.default_rng(2))
    write_currents(J, tmp_path / "j.csv")
    lines = (tmp_path / "j.csv").read_text().splitlines()
    assert lines[0] == "p,q,Re(Jex),Im(Jex),Re(Jey),Im(Jey),Re(Jmx),Im(Jmx),Re(Jmy),Im(Jmy)"
    assert np.array_equal(read_currents(tmp_path / "j.csv", small_geometry).stack(), J.stack())
    with pytest.raises(IptError):
        read_currents(tmp_path / "j.csv", SkinGeometry(4, 4, 5e-3, 5e-3))
    write_history([0.5, 0.25], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "h,X_h\n0,0.5\n1,0.25\n"
