"""
Phase-only inverse source synthesis by alternating projections.

Each iteration radiates the current estimate, clamps the footprint field
into the power mask, maps the clamped field back to the minimum-norm
currents reproducing it, and renormalizes every cell to the prescribed
current magnitude.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .masks import FootprintMask
from .radiator import (FieldSamples, RadiationPlan, SurfaceCurrentField,
                       build_plan, clamp_magnitude, mismatch)
from .scenario import ETA0, IncidentWave, SkinGeometry, SynthesisConfig, cell_centers

log = logging.getLogger(__name__)

EXACT_MAX_CELLS = 4096
IPT_INNER_ITER = 2
_LOG2_DECADE = np.log2(10.0)
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class IptError(RuntimeError):
    pass


def init_currents(geometry: SkinGeometry, config: SynthesisConfig,
                  seed: Optional[int] = None) -> SurfaceCurrentField:
    """Random phase-only currents with per-cell magnitude C_e / C_m.

    Each cell gets ``C (cos g e^{ja}, sin g e^{jb})`` with ``g`` uniform in
    [0, pi/2] and ``a``, ``b`` uniform in [0, 2 pi).
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    shape = (2,) + geometry.shape
    g = rng.uniform(0.0, 0.5 * np.pi, shape)
    a = rng.uniform(0.0, 2.0 * np.pi, shape)
    b = rng.uniform(0.0, 2.0 * np.pi, shape)
    comp = np.stack([np.cos(g) * np.exp(1j * a), np.sin(g) * np.exp(1j * b)], axis=1)
    return SurfaceCurrentField(geometry, config.C_e * comp[0], config.c_m * comp[1])


def _golden_min(f, a: float, b: float, tol: float = 1e-10, max_iter: int = 200):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def calibrate_mask_scale(fields: FieldSamples, mask: FootprintMask, decades: float = 6.0,
                         selection: Optional[np.ndarray] = None) -> float:
    """Mask scale minimizing the matching index of ``fields``.

    The search variable is ``t`` with ``sigma = c * 2**t``, where ``c`` is
    the ratio of the mean field power to the mean finite mask bound, so
    power-of-two rescalings of field or mask map to exact rescalings of
    sigma. A coarse scan over +/- ``decades`` brackets the minimum, which
    golden-section search then refines.
    """
    finite = np.concatenate([mask.lower[np.isfinite(mask.lower) & (mask.lower > 0)],
                             mask.upper[np.isfinite(mask.upper)]])
    if finite.size == 0:
        return 1.0
    power = fields.power[fields.valid]
    if not np.any(power > 0):
        raise IptError("mask calibration needs a non-zero field")
    c = float(np.mean(power) / np.mean(finite))

    def cost(t):
        lo, up = mask.scaled(c * 2.0 ** t)
        return mismatch(fields, lo, up, selection)

    span = decades * _LOG2_DECADE
    ts = np.linspace(-span, span, 8 * int(2 * decades) + 1)
    costs = np.array([cost(t) for t in ts])
    i = int(np.argmin(costs))
    lo_t, hi_t = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
    t, ft = _golden_min(cost, lo_t, hi_t)
    if costs[i] < ft:
        t = ts[i]
    return c * 2.0 ** t


def project_pattern(fields: FieldSamples, mask: FootprintMask, sigma: float = 1.0) -> FieldSamples:
    """Clamp the field magnitude into the (scaled) mask, keeping its direction."""
    lo, up = mask.scaled(sigma)
    return clamp_magnitude(fields, lo, up)


def project_currents(currents: SurfaceCurrentField, config: SynthesisConfig) -> SurfaceCurrentField:
    """Renormalize each cell's (x, y) current pair to magnitude C_e or C_m.

    A cell with a zero pair is set to (C, 0).
    """
    def norm(J, C):
        mag = np.sqrt(np.abs(J[0]) ** 2 + np.abs(J[1]) ** 2)
        zero = mag == 0
        out = C * J / np.where(zero, 1.0, mag)
        out[0][zero] = C
        out[1][zero] = 0.0
        return out

    return SurfaceCurrentField(currents.geometry, norm(currents.je, config.C_e),
                               norm(currents.jm, config.c_m))


def reflective_basis(geometry: SkinGeometry, wave: IncidentWave):
    """Per-cell currents of a lossless full-reflection cell, ``a + g b``.

    ``a`` and ``b`` are (4, P, Q) stacks (Jex, Jey, Jmx, Jmy); ``g`` is the
    unit-modulus reflection coefficient of the cell.
    """
    ph = wave.phase(cell_centers(geometry)).reshape(geometry.shape)
    et = wave.e_vector[:2, None, None] * ph / ETA0
    ht = ETA0 * wave.h_vector[:2, None, None] * ph
    return np.concatenate([et, ht]), np.concatenate([-et, ht])


_FIELD_METRIC = np.array([ETA0 ** 2, ETA0 ** 2, 1.0, 1.0])[:, None, None]


def project_reflective(currents: SurfaceCurrentField, basis) -> SurfaceCurrentField:
    """Nearest current of the form ``a + exp(j theta) b`` in every cell.

    Distances weigh ``eta0 J_e`` and ``J_m`` equally, as they radiate.
    """
    a, b = basis
    c = np.sum(_FIELD_METRIC * np.conj(b) * (currents.stack() - a), axis=0)
    g = np.where(c == 0, 1.0, c / np.where(c == 0, 1.0, np.abs(c)))
    return SurfaceCurrentField.from_stack(currents.geometry, a + g * b)


def dense_operator(plan: RadiationPlan) -> np.ndarray:
    """Explicit matrix from stacked currents (4*P*Q) to compact fields (2*n)."""
    g = plan.geometry
    P, Q = g.shape
    if P * Q > EXACT_MAX_CELLS:
        raise IptError(f"dense operator limited to {EXACT_MAX_CELLS} cells; use spectral mode")
    px = np.arange(P) - (P - 1) / 2.0
    qy = np.arange(Q) - (Q - 1) / 2.0
    phase = np.exp(1j * (plan.psi[0][:, None, None] * px[None, :, None]
                         + plan.psi[1][:, None, None] * qy[None, None, :])).reshape(-1, P * Q)
    # (2, n, 4) x (n, PQ) -> (2, n, 4, PQ)
    A = plan.mixing[:, :, :, None] * phase[None, :, None, :]
    return A.reshape(2 * phase.shape[0], 4 * P * Q)


class MinNormSolver:
    """Minimum-norm currents reproducing a footprint field.

    Parameters
    ----------
    plan : RadiationPlan
        Operator definition (geometry, observation points, wave).
    mode : {"spectral", "exact"}
        ``exact`` factors the dense operator once by SVD (limited to
        ``EXACT_MAX_CELLS`` cells). ``spectral`` works matrix-free through
        the FFT-based plan with Golub-Kahan bidiagonalization and applies
        the same truncation to the projected problem.
    cutoff : float
        Singular values below ``cutoff * sigma_max`` are discarded.
    max_iter : int, optional
        Krylov dimension cap for spectral mode (default: all unknowns,
        at most 400).
    tol : float
        Relative change of the spectral solution between checks that ends
        the iteration.
    """

    def __init__(self, plan: RadiationPlan, mode: str = "spectral", cutoff: float = 1e-3,
                 max_iter: Optional[int] = None, tol: float = 1e-6):
        if mode not in ("spectral", "exact"):
            raise IptError(f"unknown min-norm mode {mode!r}")
        P, Q = plan.geometry.shape
        if mode == "exact" and P * Q > EXACT_MAX_CELLS:
            raise IptError(f"exact mode limited to {EXACT_MAX_CELLS} cells "
                           f"(got {P * Q}); use spectral mode")
        self.plan = plan
        self.mode = mode
        self.cutoff = cutoff
        n_unknown = 4 * P * Q
        self.max_iter = int(max_iter) if max_iter else min(n_unknown, 400)
        self.tol = tol
        self._svd = None
        self.last_iterations = 0

    def _factor(self):
        if self._svd is None:
            U, s, Vh = np.linalg.svd(dense_operator(self.plan), full_matrices=False)
            keep = s >= self.cutoff * s[0]
            self._svd = (U[:, keep], s[keep], Vh[keep])
        return self._svd

    def solve(self, target: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        """Currents (4, P, Q) for a compact target field (2, n).

        With a starting point ``x0`` the truncated pseudo-inverse is applied
        to the residual and the correction added to ``x0``.
        """
        if x0 is not None:
            x0 = np.asarray(x0, dtype=complex)
            resid = np.asarray(target, dtype=complex) - self.plan.forward(x0)
            return x0 + self.solve(resid)
        shape = (4,) + self.plan.geometry.shape
        b = np.asarray(target, dtype=complex).ravel()
        if not np.any(b):
            return np.zeros(shape, dtype=complex)
        if self.mode == "exact":
            U, s, Vh = self._factor()
            x = Vh.conj().T @ ((U.conj().T @ b) / s)
            return x.reshape(shape)
        return self._bidiag(b).reshape(shape)

    def _bidiag(self, b: np.ndarray) -> np.ndarray:
        plan = self.plan
        n_out = b.size
        unknown = 4 * plan.geometry.P * plan.geometry.Q
        op = lambda v: plan.forward(v.reshape((4,) + plan.geometry.shape)).ravel()
        adj = lambda u: plan.adjoint(u.reshape(2, -1)).ravel()
        kmax = self.max_iter
        Us = np.zeros((kmax + 1, n_out), dtype=complex)
        Vs = np.zeros((kmax, unknown), dtype=complex)
        alphas = np.zeros(kmax)
        betas = np.zeros(kmax + 1)
        beta0 = np.linalg.norm(b)
        Us[0] = b / beta0
        v = adj(Us[0])
        x_prev = None
        x = np.zeros(unknown, dtype=complex)
        k = 0
        breakdown = False
        while k < kmax:
            if k:
                v = _reorth(Vs[:k], v)
            alpha = np.linalg.norm(v)
            if alpha <= 1e-14 * beta0:
                breakdown = True
                break
            Vs[k] = v / alpha
            alphas[k] = alpha
            u = op(Vs[k]) - alpha * Us[k]
            u = _reorth(Us[:k + 1], u)
            beta = np.linalg.norm(u)
            k += 1
            betas[k] = beta
            if beta <= 1e-14 * beta0:
                breakdown = True
                break
            Us[k] = u / beta
            v = adj(Us[k]) - beta * Vs[k - 1]
            if k % 10 == 0:
                x = self._projected(Vs, alphas, betas, k, beta0)
                if x_prev is not None and np.linalg.norm(x - x_prev) <= self.tol * np.linalg.norm(x):
                    break
                x_prev = x
        self.last_iterations = k
        if k == 0:
            return np.zeros(unknown, dtype=complex)
        return self._projected(Vs, alphas, betas, k, beta0, square=breakdown)

    def _projected(self, Vs, alphas, betas, k, beta0, square=False):
        rows = k if square else k + 1
        B = np.zeros((rows, k))
        B[np.arange(k), np.arange(k)] = alphas[:k]
        sub = np.arange(min(k, rows - 1))
        B[sub + 1, sub] = betas[1:sub.size + 1]
        W, s, Zh = np.linalg.svd(B, full_matrices=False)
        keep = s >= self.cutoff * s[0]
        rhs = np.zeros(rows)
        rhs[0] = beta0
        y = Zh[keep].T @ ((W[:, keep].T @ rhs) / s[keep])
        return Vs[:k].T @ y


def _reorth(basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Remove the components of ``x`` along the orthonormal rows of ``basis``."""
    coef = (basis @ x.conj()).conj()
    return x - coef @ basis


def min_norm_currents(solver: MinNormSolver, projected: FieldSamples,
                      start: Optional[SurfaceCurrentField] = None) -> SurfaceCurrentField:
    x0 = None if start is None else start.stack()
    stack = solver.solve(solver.plan.compact(projected), x0)
    return SurfaceCurrentField.from_stack(solver.plan.geometry, stack)


@dataclass
class IptResult:
    currents: SurfaceCurrentField
    history: List[float]
    x_ipt: float
    sigma: float
    best_iteration: int
    fields: FieldSamples = field(repr=False)

    @property
    def iterations(self) -> int:
        return len(self.history)


def coverage_selection(mask: FootprintMask, region: str) -> Optional[np.ndarray]:
    if region == "theta":
        return None
    if region == "xi":
        return mask.coverage
    raise IptError(f"unknown matching region {region!r}")


def run_ipt(geometry: SkinGeometry, wave: IncidentWave, mask: FootprintMask,
            config: SynthesisConfig, solver: Optional[MinNormSolver] = None,
            seed: Optional[int] = None, region: str = "theta",
            warm_start: bool = True, current_model: Optional[str] = None) -> IptResult:
    """Alternating-projection synthesis of phase-only ideal currents.

    The mask scale is fitted once to the initial random field and then kept
    fixed. With ``warm_start`` the min-norm step solves for the correction
    to the current iterate, i.e. projects it onto the set of currents
    radiating the clamped field, instead of discarding its null-space part.
    The default solver takes ``IPT_INNER_ITER`` Krylov steps per iteration.
    The iterate with the smallest matching index is returned.

    ``current_model`` selects the current feasibility set: ``"isophoric"``
    (constant per-cell magnitudes C_e and C_m, free phase and polarization)
    or ``"reflective"`` (currents of a lossless full-reflection cell under
    the incident wave, one free reflection phase per cell). It defaults to
    ``config.current_model``.
    """
    current_model = current_model or config.current_model
    if current_model not in ("isophoric", "reflective"):
        raise IptError(f"unknown current model {current_model!r}")
    if solver is None:
        solver = MinNormSolver(build_plan(geometry, mask.grid, wave), "spectral",
                               max_iter=IPT_INNER_ITER)
    plan = solver.plan
    plan.check(geometry)
    sel = coverage_selection(mask, region)

    J = init_currents(geometry, config, seed)
    if current_model == "reflective":
        basis = reflective_basis(geometry, wave)
        project = lambda cur: project_reflective(cur, basis)
        J = project(J)
    else:
        project = lambda cur: project_currents(cur, config)
    E = radiate(plan, J)
    sigma = calibrate_mask_scale(E, mask, selection=sel) if np.any(E.power > 0) else 1.0
    lo, up = mask.scaled(sigma)
    log.info("mask scale %.6g", sigma)

    history: List[float] = []
    best = (np.inf, J, E, 0)
    for h in range(config.H):
        x = mismatch(E, lo, up, sel)
        if not np.isfinite(x):
            raise IptError(f"non-finite matching index at iteration {h}")
        history.append(x)
        if x < best[0]:
            best = (x, J, E, h)
        if x <= config.chi_star or h == config.H - 1:
            break
        target = clamp_magnitude(E, lo, up)
        J = project(min_norm_currents(solver, target, J if warm_start else None))
        E = radiate(plan, J)
    x_best, J_best, E_best, h_best = best
    return IptResult(J_best, history, x_best, sigma, h_best, E_best)


def radiate(plan: RadiationPlan, currents: SurfaceCurrentField) -> FieldSamples:
    return plan.expand(plan.forward(currents.stack()))


def write_history(history, path: Union[str, Path]) -> None:
    lines = ["h,X_h"] + [f"{h},{repr(float(x))}" for h, x in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_currents(currents: SurfaceCurrentField, path: Union[str, Path]) -> None:
    P, Q = currents.geometry.shape
    lines = ["p,q,Re(Jex),Im(Jex),Re(Jey),Im(Jey),Re(Jmx),Im(Jmx),Re(Jmy),Im(Jmy)"]
    st = currents.stack()
    for p in range(P):
        for q in range(Q):
            vals = []
            for c in range(4):
                vals += [repr(float(st[c, p, q].real)), repr(float(st[c, p, q].imag))]
            lines.append(f"{p},{q}," + ",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_currents(path: Union[str, Path], geometry: SkinGeometry) -> SurfaceCurrentField:
    rows = Path(path).read_text().splitlines()[1:]
    data = np.loadtxt(rows, delimiter=",", ndmin=2) if rows else np.zeros((0, 10))
    P, Q = geometry.shape
    if data.shape != (P * Q, 10):
        raise IptError(f"{path}: expected {P * Q} rows of 10 columns")
    st = np.zeros((4, P, Q), dtype=complex)
    p, q = data[:, 0].astype(int), data[:, 1].astype(int)
    for c in range(4):
        st[c, p, q] = data[:, 2 + 2 * c] + 1j * data[:, 3 + 2 * c]
    return SurfaceCurrentField.from_stack(geometry, st)
