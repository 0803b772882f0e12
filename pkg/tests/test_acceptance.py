"""Acceptance criteria, one test each; every test records a PASS/FAIL line
shown in the terminal summary. Tolerances are pinned here."""

import time

import numpy as np
import pytest

from smartskin.config import Settings
from smartskin.ipt import (MinNormSolver, calibrate_mask_scale, init_currents, min_norm_currents,
                           project_currents, project_pattern, radiate, run_ipt)
from smartskin.masks import FootprintMask, square_mask
from smartskin.pipeline import evaluate_layout, read_report, sweep, synthesize
from smartskin.radiator import (FieldSamples, SurfaceCurrentField, build_plan,
                                pattern_matching_index, radiate_direct, radiate_fast)
from smartskin.scenario import C0, ObservationGrid, SkinGeometry, SynthesisConfig
from smartskin.sbd import oracle_source, run_sbd
from smartskin.surrogate import cross_validate, oracle_training_set, predict, train
from smartskin.unitcell import (fidelity_index, layout_currents, n_cross_grad,
                                oracle_susceptibility, reflection_tensor)

from conftest import random_currents, record

F = 30e9
BOUNDS = [[0.5e-3, 4.5e-3]]

# pinned tolerances
C1_RMS4, C1_RMS8, C1_TIME = 1e-3, 2.5e-4, 1.0
C2_RATIO, C2_HMAX, C2_X, C2_TIME = 1e-3, 100, 5e-3, 120.0
C3_TIME = 20 * 60.0
C4_RATIO = 3.0
C5_DERR, C5_UPS, C5_TIME, C5_THREADS = 0.02, 0.02, 60.0, 4
C6_IDEM, C6_MAG = 1e-12, 1e-9
C7_FID, C7_RES = 0.05, 1.05
C8_GAMMA, C8_COVER, C8_ORDER = 1e-9, 300.0, 3.5
C9_REPRO, C9_MID = 1e-6, 0.05


def _detuned(d, frac=0.05):
    fr = C0 / (2 * np.asarray(d) * np.sqrt(2.2))
    return np.abs(fr - F) >= frac * F


# ------------------------------------------------------------------ 1
def test_criterion_1_radiation_oracle(wave, ground_grid):
    rng = np.random.default_rng(2024)
    worst4 = worst8 = t_max = 0.0
    for P in (16, 32):
        g = SkinGeometry(P, P, 5e-3, 5e-3)
        plans = {R: build_plan(g, ground_grid, wave, R) for R in (4, 8)}
        for _ in range(20):
            J = random_currents(g, rng)
            ref = radiate_direct(J, ground_grid, wave).vectors()
            for R, plan in plans.items():
                t0 = time.perf_counter()
                got = radiate_fast(plan, J).vectors()
                t_max = max(t_max, time.perf_counter() - t0)
                err = np.sqrt(np.mean(np.abs(got - ref) ** 2) / np.mean(np.abs(ref) ** 2))
                if R == 4:
                    worst4 = max(worst4, err)
                else:
                    worst8 = max(worst8, err)
    ok = worst4 <= C1_RMS4 and worst8 <= C1_RMS8 and t_max < C1_TIME
    record(1, ok, f"radiation fast vs direct, 40 fields: rms(R=4)={worst4:.2e} <= {C1_RMS4:g}, "
                  f"rms(R=8)={worst8:.2e} <= {C1_RMS8:g}, max eval {t_max:.3f}s < {C1_TIME:g}s")
    assert ok


# --------------------------------------------------- shared 50x50 square runs
@pytest.fixture(scope="module")
def square_settings():
    return Settings()


@pytest.fixture(scope="module")
def ipt_isophoric(square_settings):
    s = square_settings
    t0 = time.perf_counter()
    res = run_ipt(s.geometry(), s.wave(), s.mask(), s.synthesis)
    return res, time.perf_counter() - t0


# ------------------------------------------------------------------ 2
def test_criterion_2_ipt_convergence(ipt_isophoric):
    res, elapsed = ipt_isophoric
    hist = np.array(res.history)
    best = np.minimum.accumulate(hist)
    ratio = best[min(C2_HMAX, len(best) - 1)] / hist[0]
    ok = ratio < C2_RATIO and res.x_ipt <= C2_X and elapsed <= C2_TIME
    record(2, ok, f"IPT 50x50 square, H=1000: best X_h/X_0 at h<=100 = {ratio:.3g} (< {C2_RATIO:g}), "
                  f"X_ipt={res.x_ipt:.4g} (<= {C2_X:g}), {elapsed:.1f}s (<= {C2_TIME:g}s)")
    assert ok


# ------------------------------------------------------------------ 3
def test_criterion_3_aperture_scaling(tmp_path):
    s = Settings(mask_kind="bitmap", footprint="ELEDIA",
                 mask_params={"text": "ELEDIA", "region": (-55.0, 15.0, -5.0, 35.0)})
    t0 = time.perf_counter()
    reports = sweep(s, [25, 50, 100], tmp_path)
    elapsed = time.perf_counter() - t0
    xs = [r.X_ipt for r in reports]
    rows = read_report(tmp_path / "report.csv")
    ok = all(a > b for a, b in zip(xs, xs[1:])) and elapsed <= C3_TIME and len(rows) == 3
    record(3, ok, "bitmap sweep X_ipt(25,50,100) = " + ", ".join(f"{x:.4g}" for x in xs)
           + f" strictly decreasing; sweep {elapsed:.0f}s (<= {C3_TIME:g}s)")
    assert ok


# ------------------------------------------------------------------ 4
def _end_to_end(settings, ipt):
    source = oracle_source(F)
    sbd = run_sbd(ipt.currents, source, settings.wave(), settings.geometry(), settings.synthesis)
    ev = evaluate_layout(sbd.D_opt, settings, ipt.sigma, source)
    return ev.X, sbd.upsilon


def test_criterion_4_degradation_ratio(square_settings, ipt_isophoric):
    s = square_settings.with_synthesis(current_model="reflective")
    ipt = run_ipt(s.geometry(), s.wave(), s.mask(), s.synthesis)
    x_spss, ups = _end_to_end(s, ipt)
    ratio = x_spss / ipt.x_ipt
    iso = ipt_isophoric[0]
    x_iso, ups_iso = _end_to_end(square_settings, iso)
    ok = ratio <= C4_RATIO
    record(4, ok, f"end-to-end 50x50 square, reflective currents: X_spss/X_ipt = "
                  f"{x_spss:.4g}/{ipt.x_ipt:.4g} = {ratio:.3g} (<= {C4_RATIO:g}), upsilon={ups:.3g}; "
                  f"[info] isophoric currents: {x_iso:.4g}/{iso.x_ipt:.4g} = {x_iso / iso.x_ipt:.3g}, "
                  f"upsilon={ups_iso:.3g}")
    assert ok


# ------------------------------------------------------------------ 5
def test_criterion_5_sbd_round_trip(wave):
    g = SkinGeometry(200, 200, 5e-3, 5e-3)
    D = np.random.default_rng(55).uniform(0.5e-3, 4.5e-3, (200, 200, 1))
    src = oracle_source(F)
    ideal = layout_currents(src(D[..., 0]), g, wave)
    res = run_sbd(ideal, src, wave, g, SynthesisConfig(), threads=C5_THREADS)
    err = np.abs(res.D_opt[..., 0] - D[..., 0]) / 4e-3
    det = _detuned(D[..., 0])
    bad = det & (err > C5_DERR)
    twin = bad & (D[..., 0] >= 4.2e-3)
    ok = not bad.any() and res.upsilon <= C5_UPS and res.elapsed <= C5_TIME
    record(5, ok, f"SbD 200x200 round trip ({C5_THREADS} threads): upsilon={res.upsilon:.3g} "
                  f"(<= {C5_UPS:g}), {res.elapsed:.1f}s (<= {C5_TIME:g}s), descriptor error > 2% "
                  f"in {bad.sum()}/{det.sum()} detuned cells (max {err[det].max():.3g}; "
                  f"{twin.sum()} in the >= 4.2 mm band where two sizes share a response)")
    assert ok


# ------------------------------------------------------------------ 6
def test_criterion_6_projections(small_geometry):
    rng = np.random.default_rng(6)
    cfg = SynthesisConfig(C_e=1.5, C_m=400.0)
    idem_p = idem_c = mag = 0.0
    for _ in range(20):
        n = 200
        grid = ObservationGrid(n, 1, 0, 0, n - 1, 0)
        v = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
        lo = rng.uniform(-10, 5, n)
        m = FootprintMask(grid, np.where(rng.random(n) < 0.3, -np.inf, lo), lo + rng.uniform(0, 5, n))
        f = FieldSamples(grid, v[0], v[1], np.ones(n), np.ones(n, bool))
        once = project_pattern(f, m)
        idem_p = max(idem_p, np.max(np.abs(project_pattern(once, m).vectors() - once.vectors()))
                     / np.max(np.abs(once.vectors())))
        J = project_currents(random_currents(small_geometry, rng), cfg)
        idem_c = max(idem_c, np.max(np.abs(project_currents(J, cfg).stack() - J.stack())) / cfg.C_m)
        me = np.sqrt(np.sum(np.abs(J.je) ** 2, axis=0))
        mm = np.sqrt(np.sum(np.abs(J.jm) ** 2, axis=0))
        mag = max(mag, np.max(np.abs(me / cfg.C_e - 1)), np.max(np.abs(mm / cfg.C_m - 1)))
    grid1 = ObservationGrid(1, 1, 0, 0, 0, 0)
    single = FieldSamples(grid1, np.array([2.0 + 0j]), np.zeros(1), np.ones(1), np.ones(1, bool))
    x = pattern_matching_index(single, FootprintMask(grid1, np.array([-np.inf]), np.array([0.0])))
    ok = idem_p <= C6_IDEM and idem_c <= C6_IDEM and mag <= C6_MAG and x == 0.25
    record(6, ok, f"projections: pattern idempotence {idem_p:.1e}, current idempotence {idem_c:.1e} "
                  f"(<= {C6_IDEM:g}); |J| = C^w to {mag:.1e} (<= {C6_MAG:g}); single-point X = {x!r}")
    assert ok


# ------------------------------------------------------------------ 7
def test_criterion_7_min_norm_dual_path(wave, ground_grid):
    g = SkinGeometry(12, 12, 5e-3, 5e-3)
    plan = build_plan(g, ground_grid, wave)
    mask = square_mask(ground_grid)
    exact, spectral = MinNormSolver(plan, "exact"), MinNormSolver(plan, "spectral")
    worst_fid = worst_ratio = 0.0
    for seed in range(5):
        E = radiate(plan, init_currents(g, SynthesisConfig(), seed))
        target = project_pattern(E, mask, calibrate_mask_scale(E, mask))
        b = plan.compact(target)
        Je, Js = min_norm_currents(exact, target), min_norm_currents(spectral, target)
        res = [np.linalg.norm(plan.forward(J.stack()) - b) / np.linalg.norm(b) for J in (Je, Js)]
        worst_fid = max(worst_fid, fidelity_index(Js, Je))
        worst_ratio = max(worst_ratio, res[1] / res[0])
    ok = worst_fid <= C7_FID and worst_ratio <= C7_RES
    record(7, ok, f"min-norm 12x12, 5 targets: fidelity(spectral, exact) <= {worst_fid:.3g} "
                  f"(<= {C7_FID:g}); residual ratio <= {worst_ratio:.4f} (<= {C7_RES:g})")
    assert ok


# ------------------------------------------------------------------ 8
def test_criterion_8_unit_cell_physics(wave, small_geometry):
    d = np.linspace(0.5e-3, 4.5e-3, 4001)
    gam = reflection_tensor(oracle_susceptibility(d, F), wave)
    dev = max(np.max(np.abs(np.abs(gam.g_pp) - 1)), np.max(np.abs(np.abs(gam.g_ss) - 1)))
    cover = np.degrees(np.ptp(np.unwrap(np.angle(gam.g_pp))))

    def ramp_and_order(n):
        x = np.linspace(0.0, 1.0, n)
        h = x[1] - x[0]
        beta = 3.0
        ramp = n_cross_grad(np.repeat((beta * x)[:, None], 3, axis=1), h, h)[1, 1:-1, 1]
        curved = n_cross_grad(np.repeat(np.sin(3 * x)[:, None], 3, axis=1), h, h)[1, 1:-1, 1]
        return (np.max(np.abs(ramp - beta)),
                np.max(np.abs(curved - 3 * np.cos(3 * x[1:-1]))))

    ramp_err, e1 = ramp_and_order(21)
    _, e2 = ramp_and_order(41)
    J = random_currents(small_geometry, np.random.default_rng(8))
    fid = (fidelity_index(J, J), fidelity_index(SurfaceCurrentField.zeros(small_geometry), J),
           fidelity_index(2 * J, J))
    ok = (dev <= C8_GAMMA and cover >= C8_COVER and ramp_err <= 1e-9 and e1 / e2 >= C8_ORDER
          and fid == (0.0, 1.0, 1.0))
    record(8, ok, f"unit cell: max ||Gamma|-1| = {dev:.1e} (<= {C8_GAMMA:g}); phase coverage "
                  f"{cover:.1f} deg (>= {C8_COVER:g}); ramp gradient error {ramp_err:.1e}; "
                  f"refinement ratio {e1 / e2:.2f} (>= {C8_ORDER:g}); fidelity cases {fid}")
    assert ok


# ------------------------------------------------------------------ 9
def test_criterion_9_surrogate():
    ts = oracle_training_set(BOUNDS, 50, F, seed=0)
    model = train(ts, bounds=BOUNDS)
    pred = predict(model, ts.inputs[:, 0])
    ref = oracle_susceptibility(ts.inputs[:, 0], F)
    repro = max(np.max(np.abs(getattr(pred, k) - getattr(ref, k)) / np.abs(getattr(ref, k)))
                for k in ("chi_xx", "chi_yy", "xi_xx", "xi_yy"))
    x = np.sort(ts.inputs[:, 0])
    mid = 0.5 * (x[1:] + x[:-1])
    smooth = _detuned(mid) & _detuned(x[1:]) & _detuned(x[:-1])
    rel = np.abs(predict(model, mid[smooth]).chi_xx - oracle_susceptibility(mid[smooth], F).chi_xx)
    mid_err = np.max(rel / np.abs(oracle_susceptibility(mid[smooth], F).chi_xx))
    r50, _ = cross_validate(ts, k=10, seed=0, bounds=BOUNDS)
    r100, _ = cross_validate(oracle_training_set(BOUNDS, 100, F, seed=0), k=10, seed=0, bounds=BOUNDS)
    ok = repro <= C9_REPRO and mid_err <= C9_MID and np.all(r100 < r50)
    record(9, ok, f"kriging twin N=50: reproduction {repro:.1e} (<= {C9_REPRO:g}); midpoint error "
                  f"{mid_err:.3%} over {smooth.sum()} smooth midpoints (<= {C9_MID:.0%}); CV nRMSE "
                  f"N=50 {np.array2string(r50[:2], precision=3)} -> N=100 "
                  f"{np.array2string(r100[:2], precision=3)}")
    assert ok


# ------------------------------------------------------------------ 10
def _artifacts(d):
    out = {}
    for p in sorted(d.iterdir()):
        data = p.read_text()
        if p.name == "report.csv":
            # wall-clock columns t_ipt_s and t_sbd_s differ between runs
            data = "\n".join(",".join(c for i, c in enumerate(r.split(",")) if i not in (3, 4))
                             for r in data.splitlines())
        out[p.name] = data
    return out


def test_criterion_10_determinism(tmp_path):
    s = Settings().with_synthesis(H=200)
    synthesize(s, tmp_path / "a", threads=1)
    synthesize(s, tmp_path / "b", threads=4)
    a, b = _artifacts(tmp_path / "a"), _artifacts(tmp_path / "b")
    same = sorted(k for k in a if a[k] == b.get(k))
    ok = a.keys() == b.keys() and len(same) == len(a)
    record(10, ok, f"synthesize twice (1 and 4 threads): {len(same)}/{len(a)} artifacts identical "
                   f"(report timing columns excluded)")
    assert ok
