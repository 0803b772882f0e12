"""
Ordinary-Kriging digital twin of the unit cell: descriptors -> susceptibility
dyad, with Latin-hypercube sampling, likelihood-fitted Gaussian correlation
and k-fold cross-validation.

Two output transforms are supported:

``"phase"``
    For lossless full-reflection cells (zz entries zero, chi real and
    ``xi = -4 / (k0^2 chi)``). Per in-plane axis the model learns the
    normal-incidence reflection phase, unwrapped to (-2 pi, 0], and the
    log-magnitude ``u = log(|x| / sqrt(1 + x^2))`` with ``x = k0 chi / 2``.
    Both are bounded and smooth through the cell resonance, where chi itself
    has a pole; ``u`` keeps small responses accurate in relative terms.
``"raw"``
    The 12 real and imaginary parts of the six dyad entries.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.spatial.distance import pdist

from .scenario import C0
from .unitcell import SusceptibilityDyad, oracle_susceptibility

log = logging.getLogger(__name__)

MODEL_FORMAT = "smartskin-kriging/1"
THETA_GRID = np.logspace(-2.0, 5.0, 64)
MAX_NUGGET = 1e-6
MAXIMIN_RESTARTS = 100
CONSTRAINT_TOL = 1e-6
REPRO_TOL = 1e-8


class SurrogateError(ValueError):
    pass


# --------------------------------------------------------------- sampling
def _lhs(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    u = (rng.random((n, dim)) + np.arange(n)[:, None]) / n
    for j in range(dim):
        u[:, j] = u[rng.permutation(n), j]
    return u


def maximin_score(unit_points: np.ndarray) -> float:
    """Smallest pairwise distance of a plan in unit coordinates."""
    return float(np.min(pdist(np.atleast_2d(unit_points))))


def sample_design_space(bounds, n: int, seed: int = 0,
                        restarts: int = MAXIMIN_RESTARTS) -> np.ndarray:
    """Latin-hypercube plan with the best maximin score over ``restarts`` draws.

    ``bounds`` is (L, 2); returns (n, L) descriptors. The first draw is the
    plain LHS of the seed, so the result never scores below it.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if n < 2:
        raise SurrogateError("need at least two samples")
    rng = np.random.default_rng(seed)
    best, best_score = None, -np.inf
    for _ in range(max(1, restarts)):
        u = _lhs(rng, n, bounds.shape[0])
        score = maximin_score(u)
        if score > best_score:
            best, best_score = u, score
    return bounds[:, 0] + best * (bounds[:, 1] - bounds[:, 0])


# ------------------------------------------------------------- transforms
def _phase_forward(y12: np.ndarray, k0: float) -> np.ndarray:
    dyad = SusceptibilityDyad.from_real(y12)
    out = []
    for chi, xi in ((dyad.chi_xx, dyad.xi_xx), (dyad.chi_yy, dyad.xi_yy)):
        chi = np.asarray(chi)
        xi = np.asarray(xi)
        if (np.any(chi.real == 0) or np.any(np.abs(chi.imag) > CONSTRAINT_TOL * np.abs(chi))
                or np.any(np.abs(xi * k0 ** 2 * chi / 4.0 + 1.0) > CONSTRAINT_TOL)):
            raise SurrogateError("outputs violate the full-reflection constraint; use transform='raw'")
        x = 0.5 * k0 * chi.real
        phi = np.where(x >= 0, -2.0 * np.arctan(x), -2.0 * np.pi - 2.0 * np.arctan(x))
        out += [phi, -0.5 * np.log1p(1.0 / (x * x))]
    if np.any(np.abs(np.stack([dyad.chi_zz, dyad.xi_zz])) > 0):
        raise SurrogateError("phase transform requires zero zz entries")
    return np.stack(out, axis=-1)


def _phase_inverse(z: np.ndarray, k0: float) -> np.ndarray:
    vals = []
    for phi, u in ((z[..., 0], z[..., 1]), (z[..., 2], z[..., 3])):
        sign = np.where(phi > -np.pi, 1.0, -1.0)
        eu = np.exp(np.minimum(u, -1e-300))
        small = eu < np.sqrt(0.5)  # |x| < 1
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(small, sign * eu / np.sqrt(1.0 - eu * eu), -np.tan(0.5 * phi))
        chi = 2.0 * x / k0
        with np.errstate(divide="ignore"):
            xi = -4.0 / (k0 ** 2 * chi)
        vals.append((chi, xi))
    (cx, xx), (cy, xy) = vals
    zero = np.zeros_like(cx)
    return SusceptibilityDyad(cx + 0j, cy + 0j, zero + 0j, xx + 0j, xy + 0j, zero + 0j).to_real()


TRANSFORMS = ("phase", "raw")


# ---------------------------------------------------------------- kriging
@dataclass(frozen=True)
class TrainingSet:
    """Descriptors (N, L) in meters and outputs (N, 12) Re/Im dyad entries."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if x.shape[0] == 1 and np.ndim(self.inputs) == 1:
            x = x.T
        y = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if y.shape != (x.shape[0], 12):
            raise SurrogateError(f"outputs must be (N, 12), got {y.shape}")
        if x.shape[0] < x.shape[1] + 2:
            raise SurrogateError("need N >= L + 2 training samples")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise SurrogateError("non-finite training data")
        span = np.ptp(x, axis=0)
        if x.shape[0] > 1 and np.min(pdist(x / np.where(span > 0, span, 1.0))) <= 1e-12:
            raise SurrogateError("duplicate training inputs")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    @property
    def n_desc(self) -> int:
        return self.inputs.shape[1]


def oracle_training_set(bounds, n: int, frequency: float, seed: int = 0, **oracle_kw) -> TrainingSet:
    x = sample_design_space(bounds, n, seed)
    return TrainingSet(x, oracle_susceptibility(x[:, 0], frequency, **oracle_kw).to_real())


def _corr(a: np.ndarray, b: np.ndarray, theta: np.ndarray) -> np.ndarray:
    d2 = (a[:, None, :] - b[None, :, :]) ** 2
    return np.exp(-np.einsum("ijl,l->ij", d2, theta))


@dataclass
class _Fit:
    mu: float
    sigma2: float
    chol: np.ndarray
    weights: np.ndarray  # R^-1 (y - mu)
    loglik: float


def _fit(R: np.ndarray, y: np.ndarray, nugget: float) -> Optional[_Fit]:
    n = y.size
    try:
        c = scipy.linalg.cho_factor(R + nugget * np.eye(n), lower=True)
    except np.linalg.LinAlgError:
        return None
    one = np.ones(n)
    ri1 = scipy.linalg.cho_solve(c, one)
    riy = scipy.linalg.cho_solve(c, y)
    mu = float(one @ riy / (one @ ri1))
    w = riy - mu * ri1
    sigma2 = float((y - mu) @ w / n)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    if sigma2 <= 0:
        ll = np.inf if np.allclose(y, mu) else -np.inf
        sigma2 = 0.0
    else:
        ll = -0.5 * n * np.log(sigma2) - 0.5 * logdet
    return _Fit(mu, sigma2, c[0], w, float(ll))


def _admissible(f: Optional[_Fit], y: np.ndarray, nugget: float) -> bool:
    """The nugget's training residual, nugget * R^-1 (y - mu), must stay
    negligible; near-singular correlations otherwise win the likelihood
    on round-off alone."""
    if f is None:
        return False
    scale = max(np.ptp(y), np.max(np.abs(y)), 1e-300)
    return nugget * np.max(np.abs(f.weights), initial=0.0) <= REPRO_TOL * scale


def concentrated_loglik(u: np.ndarray, y: np.ndarray, theta, nugget: float) -> float:
    """Concentrated log-likelihood of one output at correlation ``theta``;
    ``-inf`` where the fit is not positive definite or not admissible."""
    f = _fit(_corr(u, u, np.atleast_1d(np.asarray(theta, dtype=float))), y, nugget)
    return f.loglik if _admissible(f, y, nugget) else -np.inf


def _fit_theta(u: np.ndarray, y: np.ndarray, nugget: float) -> np.ndarray:
    """Cyclic per-dimension search: 64-point log grid, then golden refinement."""
    dim = u.shape[1]
    theta = np.full(dim, THETA_GRID[len(THETA_GRID) // 2])
    if np.ptp(y) == 0:
        return theta
    for _ in range(2 if dim > 1 else 1):
        for j in range(dim):
            def nll(logt, j=j):
                t = theta.copy()
                t[j] = 10.0 ** logt
                ll = concentrated_loglik(u, y, t, nugget)
                return -ll if np.isfinite(ll) else np.inf

            lg = np.log10(THETA_GRID)
            vals = np.array([nll(v) for v in lg])
            if not np.any(np.isfinite(vals)):
                continue
            i = int(np.argmin(vals))
            best = lg[i]
            if 0 < i < len(lg) - 1 and vals[i] < vals[i - 1] and vals[i] < vals[i + 1]:
                res = scipy.optimize.minimize_scalar(nll, bracket=(lg[i - 1], lg[i], lg[i + 1]),
                                                     method="golden", tol=1e-6)
                if res.fun <= vals[i]:
                    best = float(res.x)
            theta[j] = 10.0 ** best
    return theta


@dataclass(frozen=True)
class KrigingModel:
    """Trained Ordinary-Kriging twin; immutable after training."""

    inputs: np.ndarray          # (N, L) sorted training descriptors
    outputs: np.ndarray         # (N, 12) training dyads
    targets: np.ndarray         # (N, M) transformed outputs
    bounds: np.ndarray          # (L, 2) input scaling box
    theta: np.ndarray           # (M, L)
    mu: np.ndarray              # (M,)
    sigma2: np.ndarray          # (M,)
    nugget: float
    transform: str
    frequency: float
    weights: np.ndarray         # (M, N)

    @property
    def k0(self) -> float:
        return 2.0 * np.pi * self.frequency / C0

    @property
    def n_desc(self) -> int:
        return self.inputs.shape[1]

    def _unit(self, x: np.ndarray) -> np.ndarray:
        return (x - self.bounds[:, 0]) / (self.bounds[:, 1] - self.bounds[:, 0])

    def predict_transformed(self, d) -> np.ndarray:
        x = self._as_inputs(d)
        u = self._unit(x)
        ut = self._unit(self.inputs)
        out = np.empty((x.shape[0], self.targets.shape[1]))
        for m in range(self.targets.shape[1]):
            out[:, m] = self.mu[m] + _corr(u, ut, self.theta[m]) @ self.weights[m]
        return out

    def _as_inputs(self, d) -> np.ndarray:
        x = np.asarray(d, dtype=float).reshape(-1, self.n_desc)
        if not np.all(np.isfinite(x)):
            raise SurrogateError("non-finite descriptor")
        return x


def _transform(transform: str, y12: np.ndarray, k0: float) -> np.ndarray:
    if transform == "phase":
        return _phase_forward(y12, k0)
    if transform == "raw":
        return y12.copy()
    raise SurrogateError(f"unknown transform {transform!r}")


def _inverse(transform: str, z: np.ndarray, k0: float) -> np.ndarray:
    return _phase_inverse(z, k0) if transform == "phase" else z


def train(training_set: TrainingSet, nugget: float = 1e-10, transform: str = "phase",
          frequency: float = 30e9, bounds=None) -> KrigingModel:
    """Fit one Ordinary-Kriging process per transformed output.

    Inputs are scaled to the unit box (``bounds`` or the data range) and
    sorted, so the model does not depend on the row order. If a correlation
    matrix is not positive definite (or no length-scale keeps the nugget's
    training residual negligible) the nugget grows tenfold up to 1e-6.
    """
    if transform not in TRANSFORMS:
        raise SurrogateError(f"unknown transform {transform!r}")
    order = np.lexsort(training_set.inputs.T[::-1])
    x = training_set.inputs[order]
    y12 = training_set.outputs[order]
    k0 = 2.0 * np.pi * frequency / C0
    z = _transform(transform, y12, k0)
    if bounds is None:
        bounds = np.stack([x.min(0), x.max(0)], axis=1)
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise SurrogateError("degenerate input bounds")
    u = (x - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])

    while True:
        thetas, fits = [], []
        for m in range(z.shape[1]):
            th = _fit_theta(u, z[:, m], nugget)
            f = _fit(_corr(u, u, th), z[:, m], nugget)
            if not _admissible(f, z[:, m], nugget):
                break
            thetas.append(th)
            fits.append(f)
        if len(fits) == z.shape[1]:
            break
        if nugget * 10 > MAX_NUGGET * (1 + 1e-9):
            raise SurrogateError("correlation matrix not positive definite at the largest nugget")
        nugget *= 10.0
        log.info("escalating nugget to %g", nugget)
    return KrigingModel(x, y12, z, bounds, np.array(thetas), np.array([f.mu for f in fits]),
                        np.array([f.sigma2 for f in fits]), float(nugget), transform,
                        float(frequency), np.array([f.weights for f in fits]))


def predict(model: KrigingModel, d) -> SusceptibilityDyad:
    """Predicted dyads for descriptors ``d`` (shape (..., L), or (...) if L = 1)."""
    d = np.asarray(d, dtype=float)
    lead = d.shape if model.n_desc == 1 else d.shape[:-1]
    x = model._as_inputs(d)
    if np.any(x < model.bounds[:, 0]) or np.any(x > model.bounds[:, 1]):
        warnings.warn("descriptor outside the training box; extrapolating", RuntimeWarning)
    y = _inverse(model.transform, model.predict_transformed(x), model.k0)
    return SusceptibilityDyad.from_real(y.reshape(lead + (12,)))


def fold_assignment(n: int, k: int, seed: int = 0):
    """Deterministic shuffled split of ``range(n)`` into ``k`` folds."""
    return np.array_split(np.random.default_rng(seed).permutation(n), k)


def cross_validate(training_set: TrainingSet, k: int = 10, seed: int = 0,
                   **train_kw) -> Tuple[np.ndarray, np.ndarray]:
    """k-fold CV on the transformed outputs.

    Returns per-output RMSE and max absolute error, both normalized by the
    output's range over the whole set.
    """
    n = training_set.inputs.shape[0]
    if n < k or k < 2:
        raise SurrogateError("need 2 <= k <= N")
    folds = fold_assignment(n, k, seed)
    transform = train_kw.get("transform", "phase")
    k0 = 2.0 * np.pi * train_kw.get("frequency", 30e9) / C0
    z_all = _transform(transform, training_set.outputs, k0)
    bounds = train_kw.pop("bounds", None)
    if bounds is None:
        bounds = np.stack([training_set.inputs.min(0), training_set.inputs.max(0)], axis=1)
    err = np.empty_like(z_all)
    for test in folds:
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        sub = TrainingSet(training_set.inputs[mask], training_set.outputs[mask])
        model = train(sub, bounds=bounds, **train_kw)
        err[test] = model.predict_transformed(training_set.inputs[test]) - z_all[test]
    scale = np.ptp(z_all, axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return np.sqrt(np.mean(err ** 2, axis=0)) / scale, np.max(np.abs(err), axis=0) / scale


# ------------------------------------------------------------ persistence
def save_model(model: KrigingModel, path: Union[str, Path]) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "transform": model.transform,
        "frequency": model.frequency,
        "nugget": model.nugget,
        "bounds": model.bounds.tolist(),
        "inputs": model.inputs.tolist(),
        "outputs": model.outputs.tolist(),
        "theta": model.theta.tolist(),
        "mu": model.mu.tolist(),
        "sigma2": model.sigma2.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path: Union[str, Path]) -> KrigingModel:
    """Rebuild a saved model; the Cholesky weights are recomputed."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SurrogateError(f"{path}: not a model file ({exc})") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise SurrogateError(f"{path}: unsupported model format {doc.get('format')!r}")
    x = np.array(doc["inputs"], dtype=float)
    y12 = np.array(doc["outputs"], dtype=float)
    bounds = np.array(doc["bounds"], dtype=float)
    theta = np.array(doc["theta"], dtype=float)
    freq = float(doc["frequency"])
    nugget = float(doc["nugget"])
    k0 = 2.0 * np.pi * freq / C0
    z = _transform(doc["transform"], y12, k0)
    u = (x - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
    fits = [_fit(_corr(u, u, theta[m]), z[:, m], nugget) for m in range(z.shape[1])]
    if any(f is None for f in fits):
        raise SurrogateError(f"{path}: stored model is not positive definite")
    return KrigingModel(x, y12, z, bounds, theta, np.array(doc["mu"], dtype=float),
                        np.array(doc["sigma2"], dtype=float), nugget, doc["transform"], freq,
                        np.array([f.weights for f in fits]))
