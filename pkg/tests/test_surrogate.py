import warnings

import numpy as np
import pytest

from smartskin.scenario import C0
from smartskin.surrogate import (SurrogateError, TrainingSet, _lhs, concentrated_loglik,
                                 cross_validate, fold_assignment, load_model, maximin_score,
                                 oracle_training_set, predict, sample_design_space, save_model,
                                 train)
from smartskin.unitcell import SusceptibilityDyad, oracle_susceptibility, resonant_size

F = 30e9
BOUNDS = np.array([[0.5e-3, 4.5e-3]])
D_RES = resonant_size(F)


def detuned(d, frac=0.05):
    fr = C0 / (2 * d * np.sqrt(2.2))
    return np.abs(fr - F) >= frac * F


def chi_rel_err(model, d):
    pred = predict(model, d).chi_xx
    ref = oracle_susceptibility(d, F).chi_xx
    return np.abs(pred - ref) / np.abs(ref)


@pytest.fixture(scope="module")
def ts50():
    return oracle_training_set(BOUNDS, 50, F, seed=0)


@pytest.fixture(scope="module")
def model50(ts50):
    return train(ts50, bounds=BOUNDS)


# --------------------------------------------------------------- sampling
def test_lhs_bins_and_determinism():
    x = sample_design_space(BOUNDS, 50, seed=4)[:, 0]
    bins = np.floor((x - 0.5e-3) / 4e-3 * 50).astype(int)
    assert sorted(bins) == list(range(50))
    assert np.array_equal(x, sample_design_space(BOUNDS, 50, seed=4)[:, 0])


def test_maximin_not_worse_than_plain_lhs():
    b2 = np.array([[0.0, 1.0], [0.0, 1.0]])
    for seed in range(5):
        plain = _lhs(np.random.default_rng(seed), 20, 2)
        best = sample_design_space(b2, 20, seed=seed)
        assert maximin_score(best) >= maximin_score(plain)


def test_training_set_validation():
    with pytest.raises(SurrogateError):
        TrainingSet(np.array([[1.0], [1.0], [2.0]]), np.zeros((3, 12)))
    with pytest.raises(SurrogateError):
        TrainingSet(np.array([[1.0], [2.0]]), np.zeros((2, 12)))
    with pytest.raises(SurrogateError):
        TrainingSet(np.array([[1.0], [2.0], [np.nan]]), np.zeros((3, 12)))


# ---------------------------------------------------------------- training
def test_constant_outputs():
    x = np.linspace(0, 1, 6)[:, None]
    y = np.tile(np.arange(12.0), (6, 1))
    m = train(TrainingSet(x, y), transform="raw")
    np.testing.assert_allclose(m.mu, np.arange(12.0))
    np.testing.assert_allclose(predict(m, np.array([0.33, 0.9])).to_real(), y[:2], atol=1e-12)


def test_training_point_reproduction(model50, ts50):
    pred = predict(model50, ts50.inputs[:, 0])
    ref = SusceptibilityDyad.from_real(ts50.outputs)
    for k in ("chi_xx", "chi_yy", "xi_xx", "xi_yy"):
        a, b = getattr(pred, k), getattr(ref, k)
        assert np.max(np.abs(a - b) / np.abs(b)) <= 1e-6
    assert not np.any(pred.chi_zz) and not np.any(pred.xi_zz)


def test_likelihood_optimality(model50):
    u = model50._unit(model50.inputs)
    for m in range(model50.targets.shape[1]):
        th = model50.theta[m]
        best = concentrated_loglik(u, model50.targets[:, m], th, model50.nugget)
        for f in (2.0, 0.5):
            assert best >= concentrated_loglik(u, model50.targets[:, m], f * th, model50.nugget)


def test_midpoint_accuracy(model50):
    x = np.sort(model50.inputs[:, 0])
    mid = 0.5 * (x[1:] + x[:-1])
    smooth = detuned(mid) & detuned(x[1:]) & detuned(x[:-1])
    assert smooth.sum() >= 30
    assert np.max(chi_rel_err(model50, mid[smooth])) <= 0.05


def test_prediction_deterministic_and_smooth(model50):
    d = np.linspace(0.5e-3, 4.5e-3, 4001)
    a = predict(model50, d).chi_xx.real
    assert np.array_equal(a, predict(model50, d).chi_xx.real)
    # derivative of the predicted reflection phase away from resonance
    k0 = 2 * np.pi * F / C0
    phase = -2 * np.arctan(0.5 * k0 * a)
    dphi = np.diff(phase) / np.diff(d)
    ok = detuned(d[1:]) & detuned(d[:-1])
    for i in np.flatnonzero(ok[1:-1]) + 1:
        if ok[i - 1] and ok[i + 1]:
            ref = max(abs(dphi[i - 1]), abs(dphi[i + 1]))
            assert abs(dphi[i]) <= 10 * ref + 1e-9


def test_permutation_invariance(ts50, model50):
    perm = np.random.default_rng(1).permutation(50)
    m2 = train(TrainingSet(ts50.inputs[perm], ts50.outputs[perm]), bounds=BOUNDS)
    d = np.linspace(0.6e-3, 4.4e-3, 97)
    a, b = predict(model50, d).to_real(), predict(m2, d).to_real()
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_extrapolation_is_flagged(model50):
    with pytest.warns(RuntimeWarning):
        predict(model50, 5e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        predict(model50, 2e-3)


def test_phase_transform_rejects_lossy_data():
    x = np.linspace(1e-3, 2e-3, 5)
    y = oracle_susceptibility(x, F).to_real()
    y[:, 1] = 1e-3 * y[:, 0]
    with pytest.raises(SurrogateError):
        train(TrainingSet(x[:, None], y))


def test_raw_mode_on_bounded_data():
    x = np.linspace(0.0, 1.0, 25)
    y = np.stack([np.sin(3 * x + k) for k in range(12)], axis=1)
    m = train(TrainingSet(x[:, None], y), transform="raw")
    xm = 0.5 * (x[1:] + x[:-1])
    ym = np.stack([np.sin(3 * xm + k) for k in range(12)], axis=1)
    # the reproduction guard favours short length-scales; 0.2% of amplitude
    assert np.max(np.abs(predict(m, xm).to_real() - ym)) <= 2e-3


# ---------------------------------------------------------- cross-validation
def test_fold_assignment_deterministic():
    a, b = fold_assignment(50, 10, 3), fold_assignment(50, 10, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a)) == list(range(50))


def test_in_sample_residuals(model50, ts50):
    z = model50.predict_transformed(model50.inputs)
    assert np.max(np.abs(z - model50.targets)) <= 1e-6 * np.max(np.abs(model50.targets))


def test_cv_improves_with_more_samples(ts50):
    r50, _ = cross_validate(ts50, k=10, seed=0, bounds=BOUNDS)
    r100, _ = cross_validate(oracle_training_set(BOUNDS, 100, F, seed=0), k=10, seed=0, bounds=BOUNDS)
    assert np.all(r100 < r50)


# ------------------------------------------------------------- persistence
def test_model_persistence(tmp_path, model50):
    save_model(model50, tmp_path / "m.json")
    m2 = load_model(tmp_path / "m.json")
    d = np.linspace(0.5e-3, 4.5e-3, 53)
    assert np.array_equal(predict(m2, d).to_real(), predict(model50, d).to_real())
    save_model(m2, tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(SurrogateError):
        load_model(tmp_path / "bad.json")
