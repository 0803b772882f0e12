"""
Particle-swarm matching of unit-cell descriptors to ideal surface currents.

Per-cell mode optimizes every cell independently against a separable cost
(exact when the dyads have no zz entries, so no gradient terms couple
neighbouring cells); global mode runs one swarm over the whole layout with
the fidelity index as cost. Random numbers come from a counter-based hash of
(seed, p, q, iteration, particle, ...) so results never depend on how cells
are scheduled across threads.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from .radiator import SurfaceCurrentField
from .scenario import MU0, IncidentWave, SkinGeometry, SynthesisConfig, cell_centers
from .surrogate import KrigingModel, predict
from .unitcell import (SusceptibilityDyad, UnitCellError, averaged_fields, fidelity_index,
                       layout_currents, oracle_susceptibility, polarization_densities,
                       reflection_tensor)

INERTIA = (0.9, 0.4)
C_COGNITIVE = 2.0
C_SOCIAL = 2.0
VELOCITY_CLAMP = 0.2
GLOBAL_MAX_CELLS = 1024
TABLE_SIZE = 8193
BLOCK_CELLS = 4096

DyadSource = Callable[[np.ndarray], SusceptibilityDyad]


class SbdError(ValueError):
    pass


def model_source(model: KrigingModel) -> DyadSource:
    return lambda d: predict(model, d)


def oracle_source(frequency: float, **kw) -> DyadSource:
    return lambda d: oracle_susceptibility(d, frequency, **kw)


def as_source(model) -> DyadSource:
    return model_source(model) if isinstance(model, KrigingModel) else model


# ------------------------------------------------------------------ hash RNG
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def stream_key(seed: int, *ids) -> np.ndarray:
    """Stream key from a seed and integer identifiers (arrays broadcast)."""
    k = _mix(np.uint64(seed % 2 ** 64))
    with np.errstate(over="ignore"):
        for i in ids:
            k = _mix(k ^ (np.asarray(i, dtype=np.uint64) * _GOLD + np.uint64(0x632BE59BD9B4E019)))
    return k


def _to_unit(x: np.ndarray) -> np.ndarray:
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 2 ** 53)


def stream_base(keys: np.ndarray, n_particles: int, n_desc: int, stream: int) -> np.ndarray:
    """Per (key, particle, dimension) stream states, shape (K, G, L)."""
    g = np.arange(n_particles, dtype=np.uint64)[None, :, None]
    l = np.arange(n_desc, dtype=np.uint64)[None, None, :]
    return stream_key(0, g, l, stream) ^ np.asarray(keys, dtype=np.uint64)[:, None, None]


def hash_uniform(base: np.ndarray, counter: int) -> np.ndarray:
    """Uniform [0, 1) variates of ``base`` streams at step ``counter``."""
    return _to_unit(_mix(base ^ _mix(np.uint64(counter))))


# -------------------------------------------------------------- cell physics
def cell_response(source: DyadSource, wave: IncidentWave, d: np.ndarray):
    """Currents of a cell at the origin for descriptors ``d`` (..., L) or (...).

    Returns ``(je, jm)`` of shape (..., 2). Valid when the zz entries are zero.
    """
    dy = source(d)
    if np.any(np.asarray(dy.chi_zz) != 0) or np.any(np.asarray(dy.xi_zz) != 0):
        raise SbdError("per-cell evaluation needs zero zz susceptibilities")
    gamma = reflection_tensor(dy, wave)
    shape = np.shape(dy.chi_xx)
    e_ave, h_ave = averaged_fields(wave, gamma, np.zeros(shape + (3,)))
    pol = polarization_densities(dy, e_ave, h_ave)
    je = 1j * wave.omega * pol.be[:2]
    jm = 1j * wave.omega * MU0 * pol.bm[:2]
    return np.moveaxis(je, 0, -1), np.moveaxis(jm, 0, -1)


@dataclass(frozen=True)
class ResponseTable:
    """Cell currents on a uniform descriptor grid (L = 1), linearly interpolated."""

    lo: float
    hi: float
    je: np.ndarray  # (n, 2)
    jm: np.ndarray

    @classmethod
    def build(cls, source: DyadSource, wave: IncidentWave, bounds, n: int = TABLE_SIZE):
        lo, hi = (float(v) for v in np.asarray(bounds, dtype=float).reshape(-1)[:2])
        je, jm = cell_response(source, wave, np.linspace(lo, hi, n))
        return cls(lo, hi, je, jm)

    def __call__(self, d: np.ndarray):
        n = self.je.shape[0]
        t = (np.asarray(d, dtype=float) - self.lo) / (self.hi - self.lo) * (n - 1)
        t = np.clip(t, 0.0, n - 1.0)
        i = np.minimum(t.astype(np.int64), n - 2)
        w = (t - i)[..., None]
        return ((1 - w) * self.je[i] + w * self.je[i + 1],
                (1 - w) * self.jm[i] + w * self.jm[i + 1])


def _norms(ideal: SurfaceCurrentField) -> Tuple[float, float]:
    ne = float(np.sum(np.abs(ideal.je) ** 2))
    nm = float(np.sum(np.abs(ideal.jm) ** 2))
    if ne == 0 and nm == 0:
        raise SbdError("ideal currents are identically zero")
    return ne, nm


def _weights(ideal: SurfaceCurrentField):
    ne, nm = _norms(ideal)
    return (1.0 / ne if ne else 0.0), (1.0 / nm if nm else 0.0)


def layout_dyads(source: DyadSource, D: np.ndarray) -> SusceptibilityDyad:
    D = np.asarray(D, dtype=float)
    return source(D[..., 0] if D.shape[-1] == 1 else D)


def _checked_layout_currents(dyads, geometry, wave, D) -> SurfaceCurrentField:
    try:
        return layout_currents(dyads, geometry, wave)
    except UnitCellError as exc:
        raise SbdError(f"{exc}; layout descriptors {np.asarray(D).shape}") from exc


def sbd_cost(D: np.ndarray, ideal: SurfaceCurrentField, model, wave: IncidentWave,
             geometry: SkinGeometry) -> float:
    """Fidelity index of layout ``D`` (P, Q, L) through the full GSTC chain."""
    D = np.asarray(D, dtype=float)
    if D.shape[:2] != geometry.shape:
        raise SbdError(f"layout shape {D.shape[:2]} does not match aperture {geometry.shape}")
    J = _checked_layout_currents(layout_dyads(as_source(model), D), geometry, wave, D)
    return fidelity_index(J, ideal)


def cell_costs(D: np.ndarray, ideal: SurfaceCurrentField, model, wave: IncidentWave,
               geometry: SkinGeometry) -> np.ndarray:
    """Per-cell separable costs through the full chain, shape (P, Q).

    ``|dJe_pq|^2 / ||Je*||^2 + |dJm_pq|^2 / ||Jm*||^2``; they sum to the
    layout's separable cost.
    """
    D = np.asarray(D, dtype=float)
    J = _checked_layout_currents(layout_dyads(as_source(model), D), geometry, wave, D)
    we, wm = _weights(ideal)
    return (we * np.sum(np.abs(J.je - ideal.je) ** 2, axis=0)
            + wm * np.sum(np.abs(J.jm - ideal.jm) ** 2, axis=0))


def separable_cost(D, ideal, model, wave, geometry) -> float:
    return float(np.sum(cell_costs(D, ideal, model, wave, geometry)))


# ---------------------------------------------------------------------- PSO
def _inertia(s: int, n_iter: int) -> float:
    w0, w1 = INERTIA
    return w0 if n_iter <= 1 else w0 + (w1 - w0) * s / (n_iter - 1)


def _swarm(cost: Callable[[np.ndarray], np.ndarray], keys: np.ndarray, lo: np.ndarray,
           hi: np.ndarray, n_particles: int, n_iter: int):
    """Global-best PSO run independently for every key.

    ``cost`` maps positions (K, G, L) to costs (K, G). Returns the best
    positions (K, L), best costs (K,) and the best-cost history (n_iter+1, K).
    """
    K, L = keys.size, lo.size
    span = hi - lo
    vmax = VELOCITY_CLAMP * span
    b_init, b_r1, b_r2 = (stream_base(keys, n_particles, L, k) for k in range(3))
    # Latin-hypercube start: one particle per 1/G slab of every dimension
    slab = np.argsort(hash_uniform(b_init, 2), axis=1, kind="stable")
    x = lo + span * (slab + hash_uniform(b_init, 0)) / n_particles
    v = vmax * (2.0 * hash_uniform(b_init, 1) - 1.0)
    f = cost(x)
    pbest, pcost = x.copy(), f.copy()
    gi = np.argmin(pcost, axis=1)
    rows = np.arange(K)
    gbest, gcost = pbest[rows, gi].copy(), pcost[rows, gi].copy()
    history = [gcost.copy()]
    for s in range(1, n_iter + 1):
        r1 = hash_uniform(b_r1, s)
        r2 = hash_uniform(b_r2, s)
        v = (_inertia(s - 1, n_iter) * v + C_COGNITIVE * r1 * (pbest - x)
             + C_SOCIAL * r2 * (gbest[:, None, :] - x))
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, lo, hi)
        f = cost(x)
        better = f < pcost
        pbest[better] = x[better]
        pcost[better] = f[better]
        gi = np.argmin(pcost, axis=1)
        improved = pcost[rows, gi] < gcost
        gbest[improved] = pbest[rows, gi][improved]
        gcost[improved] = pcost[rows, gi][improved]
        history.append(gcost.copy())
    return gbest, gcost, np.array(history)


def _cell_cost_fn(response, targets_e, targets_m, phase, we, wm):
    """Cost of positions (K, G, L) for cells with targets (K, 2) and phases (K,)."""
    def cost(x):
        je, jm = response(x[..., 0] if x.shape[-1] == 1 else x)
        ph = phase[:, None, None]
        de = je * ph - targets_e[:, None, :]
        dm = jm * ph - targets_m[:, None, :]
        return (we * np.sum(de.real ** 2 + de.imag ** 2, -1)
                + wm * np.sum(dm.real ** 2 + dm.imag ** 2, -1))
    return cost


def _response_fn(source: DyadSource, wave: IncidentWave, config: SynthesisConfig, n_desc: int):
    if n_desc == 1:
        return ResponseTable.build(source, wave, config.descriptor_bounds[0])
    return lambda d: cell_response(source, wave, d)


def _bounds(config: SynthesisConfig, n_desc: int):
    return np.full(n_desc, config.d_min), np.full(n_desc, config.d_max)


def run_pso_cell(target_je: np.ndarray, target_jm: np.ndarray, model, wave: IncidentWave,
                 phase: complex, config: SynthesisConfig, seed: int, p: int = 0, q: int = 0,
                 norms: Optional[Tuple[float, float]] = None, n_desc: int = 1,
                 response=None):
    """PSO over one cell's descriptors; returns ``(d_opt (L,), best-cost history)``.

    ``norms`` are the squared norms of the full ideal current fields used to
    normalize the cell cost (default: the cell's own target norms).
    """
    target_je = np.asarray(target_je, dtype=complex).reshape(1, 2)
    target_jm = np.asarray(target_jm, dtype=complex).reshape(1, 2)
    if norms is None:
        norms = (float(np.sum(np.abs(target_je) ** 2)), float(np.sum(np.abs(target_jm) ** 2)))
    we, wm = (1.0 / n if n else 0.0 for n in norms)
    if response is None:
        response = _response_fn(as_source(model), wave, config, n_desc)
    lo, hi = _bounds(config, n_desc)
    cost = _cell_cost_fn(response, target_je, target_jm, np.array([phase]), we, wm)
    keys = stream_key(seed, np.array([p]), np.array([q]))
    best, _, hist = _swarm(cost, keys, lo, hi, config.G, config.S_cell)
    return best[0], hist[:, 0]


@dataclass
class SbdResult:
    D_opt: np.ndarray            # (P, Q, L) meters
    upsilon: float
    history: List[float]
    elapsed: float
    mode: str
    cell_costs: Optional[np.ndarray] = field(default=None, repr=False)


def _run_per_cell(ideal, source, wave, geometry, config, seed, threads, n_desc):
    P, Q = geometry.shape
    response = _response_fn(source, wave, config, n_desc)
    lo, hi = _bounds(config, n_desc)
    we, wm = _weights(ideal)
    phase = wave.phase(cell_centers(geometry)).reshape(P, Q).ravel()
    te = ideal.je.reshape(2, -1).T
    tm = ideal.jm.reshape(2, -1).T
    pp, qq = np.meshgrid(np.arange(P), np.arange(Q), indexing="ij")
    keys = stream_key(seed, pp.ravel(), qq.ravel())
    n = P * Q
    blocks = [slice(i, min(i + BLOCK_CELLS, n)) for i in range(0, n, BLOCK_CELLS)]

    def work(b):
        cost = _cell_cost_fn(response, te[b], tm[b], phase[b], we, wm)
        return _swarm(cost, keys[b], lo, hi, config.G, config.S_cell)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    best = np.concatenate([r[0] for r in parts])
    costs = np.concatenate([r[1] for r in parts])
    # total separable cost per iteration, summed in fixed cell order
    hist = np.concatenate([r[2] for r in parts], axis=1)
    history = [float(np.sum(h)) for h in hist]
    return best.reshape(P, Q, n_desc), history, costs.reshape(P, Q)


def _run_global(ideal, source, wave, geometry, config, seed, n_desc):
    P, Q = geometry.shape
    if P * Q > GLOBAL_MAX_CELLS:
        raise SbdError(f"global mode is limited to {GLOBAL_MAX_CELLS} cells (got {P * Q})")
    lo1, hi1 = _bounds(config, n_desc)
    lo = np.tile(lo1, P * Q)
    hi = np.tile(hi1, P * Q)

    def cost(x):
        out = np.empty(x.shape[:2])
        for g in range(x.shape[1]):
            try:
                out[0, g] = sbd_cost(x[0, g].reshape(P, Q, n_desc), ideal, source, wave, geometry)
            except SbdError:
                out[0, g] = np.inf
        return out

    best, _, hist = _swarm(cost, stream_key(seed, np.array([2 ** 32])), lo, hi, config.G, config.S)
    return best.reshape(P, Q, n_desc), [float(h) for h in hist[:, 0]]


def run_sbd(ideal: SurfaceCurrentField, model, wave: IncidentWave, geometry: SkinGeometry,
            config: SynthesisConfig, seed: Optional[int] = None, threads: int = 1,
            mode: Optional[str] = None, n_desc: int = 1) -> SbdResult:
    """Match descriptors to ``ideal`` currents; ``upsilon`` is the final
    full-chain fidelity index of the assembled layout.

    The per-cell history holds the separable cost summed over cells; the
    global history holds the swarm's best fidelity index.
    """
    mode = mode or config.mode
    seed = config.seed if seed is None else seed
    source = as_source(model)
    t0 = time.perf_counter()
    costs = None
    if mode == "per-cell":
        D, history, costs = _run_per_cell(ideal, source, wave, geometry, config, seed,
                                          max(1, int(threads)), n_desc)
    elif mode == "global":
        D, history = _run_global(ideal, source, wave, geometry, config, seed, n_desc)
    else:
        raise SbdError(f"unknown mode {mode!r}")
    upsilon = sbd_cost(D, ideal, source, wave, geometry)
    return SbdResult(D, upsilon, history, time.perf_counter() - t0, mode, costs)


# --------------------------------------------------------------------- I/O
def write_layout(D: np.ndarray, path: Union[str, Path]) -> None:
    D = np.asarray(D, dtype=float)
    P, Q, L = D.shape
    lines = ["p,q," + ",".join(f"d_{i + 1}" for i in range(L))]
    for p in range(P):
        for q in range(Q):
            lines.append(f"{p},{q}," + ",".join(repr(float(v)) for v in D[p, q]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_layout(path: Union[str, Path], shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    rows = [r for r in Path(path).read_text().splitlines() if r.strip()]
    if len(rows) < 2 or not rows[0].startswith("p,q,"):
        raise SbdError(f"{path}: empty or malformed layout file")
    try:
        data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    except ValueError as exc:
        raise SbdError(f"{path}: {exc}") from exc
    L = len(rows[0].split(",")) - 2
    if data.ndim != 2 or data.shape[1] != L + 2:
        raise SbdError(f"{path}: inconsistent column count")
    p, q = data[:, 0].astype(int), data[:, 1].astype(int)
    P, Q = (p.max() + 1, q.max() + 1) if shape is None else shape
    if len(data) != P * Q or p.max() >= P or q.max() >= Q or p.min() < 0 or q.min() < 0:
        raise SbdError(f"{path}: layout does not cover a {P}x{Q} aperture")
    D = np.full((P, Q, L), np.nan)
    D[p, q] = data[:, 2:]
    if np.any(np.isnan(D)):
        raise SbdError(f"{path}: missing cells")
    return D


def write_sbd_history(history, path: Union[str, Path]) -> None:
    lines = ["s,upsilon_best"] + [f"{s},{v!r}" for s, v in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")
