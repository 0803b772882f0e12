"""
Reflected far field of discretized surface currents.

Two evaluation paths are provided: ``radiate_direct`` sums the radiation
integral cell by cell in Cartesian form and serves as the reference;
``radiate_fast`` evaluates the same midpoint quadrature through an
oversampled FFT (see :mod:`smartskin.nufft`) and assembles the transverse
field directly in spherical components.

Current arrays are stored component-first: ``je[0]`` is the x component on
the (P, Q) cell grid, ``je[1]`` the y component.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .masks import FootprintMask
from .nufft import GriddingPlan
from .scenario import (ETA0, IncidentWave, ObservationGrid, ScenarioError,
                       SkinGeometry, ground_to_direction)


class RadiationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SurfaceCurrentField:
    geometry: SkinGeometry
    je: np.ndarray
    jm: np.ndarray

    def __post_init__(self):
        shape = (2,) + self.geometry.shape
        je = np.asarray(self.je, dtype=complex)
        jm = np.asarray(self.jm, dtype=complex)
        if je.shape != shape or jm.shape != shape:
            raise ScenarioError(f"current arrays must have shape {shape}")
        object.__setattr__(self, "je", je)
        object.__setattr__(self, "jm", jm)

    @classmethod
    def zeros(cls, geometry: SkinGeometry) -> "SurfaceCurrentField":
        z = np.zeros((2,) + geometry.shape, dtype=complex)
        return cls(geometry, z, z.copy())

    @classmethod
    def from_stack(cls, geometry: SkinGeometry, stack: np.ndarray) -> "SurfaceCurrentField":
        return cls(geometry, stack[:2], stack[2:])

    def stack(self) -> np.ndarray:
        """(4, P, Q) array ordered (Jex, Jey, Jmx, Jmy)."""
        return np.concatenate([self.je, self.jm])

    def __add__(self, other: "SurfaceCurrentField") -> "SurfaceCurrentField":
        return SurfaceCurrentField(self.geometry, self.je + other.je, self.jm + other.jm)

    def __mul__(self, alpha) -> "SurfaceCurrentField":
        return SurfaceCurrentField(self.geometry, alpha * self.je, alpha * self.jm)

    __rmul__ = __mul__

    def conj(self) -> "SurfaceCurrentField":
        return SurfaceCurrentField(self.geometry, self.je.conj(), self.jm.conj())


@dataclass(frozen=True, eq=False)
class FieldSamples:
    grid: Optional[ObservationGrid]
    e_theta: np.ndarray
    e_phi: np.ndarray
    distances: np.ndarray
    valid: np.ndarray

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.e_theta) ** 2 + np.abs(self.e_phi) ** 2

    @property
    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.power)

    def vectors(self) -> np.ndarray:
        return np.stack([self.e_theta, self.e_phi])

    def with_vectors(self, v: np.ndarray) -> "FieldSamples":
        return FieldSamples(self.grid, v[0], v[1], self.distances, self.valid)

    def scaled(self, alpha) -> "FieldSamples":
        return self.with_vectors(alpha * self.vectors())


def _spherical_frame(r_hat: np.ndarray):
    """theta/phi unit vectors in the local frame; phi = 0 on the axis."""
    u, v, w = r_hat[:, 0], r_hat[:, 1], r_hat[:, 2]
    theta = np.arccos(np.clip(w, -1.0, 1.0))
    phi = np.arctan2(v, u)
    ct, st, cp, sp_ = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    t_hat = np.stack([ct * cp, ct * sp_, -st], axis=1)
    p_hat = np.stack([-sp_, cp, np.zeros_like(cp)], axis=1)
    return t_hat, p_hat


def _prefactor(k0: float, dist: np.ndarray, cell_area: float) -> np.ndarray:
    return cell_area * 1j * k0 / (4.0 * np.pi) * np.exp(-1j * k0 * dist) / dist


def _observation(geometry: SkinGeometry, obs: ObservationGrid):
    r_hat, dist, valid = ground_to_direction(obs.points, geometry)
    return r_hat, dist, valid


def radiate_direct(currents: SurfaceCurrentField, obs: ObservationGrid,
                   wave: IncidentWave, *, chunk: int = 2048,
                   return_cartesian: bool = False):
    """Brute-force evaluation of the reflected far field at ground points.

    Each point uses its own direction and distance from the skin center.
    With ``return_cartesian`` the local Cartesian field vectors (N, 3) are
    returned alongside the samples.
    """
    geom = currents.geometry
    r_hat, dist, valid = _observation(geom, obs)
    return _direct(currents, obs, wave, r_hat, dist, valid, chunk, return_cartesian)


def _direct(currents, grid, wave, r_hat, dist, valid, chunk=2048, return_cartesian=False):
    geom = currents.geometry
    k0 = wave.k0
    xs, ys = geom.x_coords(), geom.y_coords()
    n = r_hat.shape[0]
    cart = np.zeros((n, 3), dtype=complex)
    idx = np.flatnonzero(valid)
    for start in range(0, idx.size, chunk):
        sel = idx[start:start + chunk]
        rh = r_hat[sel]
        ex = np.exp(1j * k0 * np.outer(rh[:, 0], xs))
        ey = np.exp(1j * k0 * np.outer(rh[:, 1], ys))
        # sum over cells of J exp(j k0 r_hat . r_pq), per component
        Fe = np.einsum("np,cpq,nq->nc", ex, currents.je, ey)
        Fm = np.einsum("np,cpq,nq->nc", ex, currents.jm, ey)
        Fe = np.concatenate([Fe, np.zeros((sel.size, 1))], axis=1)
        Fm = np.concatenate([Fm, np.zeros((sel.size, 1))], axis=1)
        inner = ETA0 * np.cross(rh, Fe) + Fm
        cart[sel] = np.cross(rh, inner) * _prefactor(k0, dist[sel], geom.cell_area)[:, None]
    t_hat, p_hat = _spherical_frame(r_hat)
    e_t = np.einsum("nc,nc->n", cart, t_hat)
    e_p = np.einsum("nc,nc->n", cart, p_hat)
    out = FieldSamples(grid, e_t, e_p, dist, valid)
    if return_cartesian:
        return out, cart
    return out


class RadiationPlan:
    """Precomputed fast evaluation of the radiation integral.

    Holds the gridding plan for the points' spectral coordinates
    ``psi = k0 * (dx * u, dy * v)``, the per-point scalar factor and the
    2x4 matrices mapping the spectra of (Jex, Jey, Jmx, Jmy) to
    (E_theta, E_phi).
    """

    def __init__(self, geometry: SkinGeometry, wave: IncidentWave, r_hat: np.ndarray,
                 dist: np.ndarray, valid: np.ndarray, grid: Optional[ObservationGrid] = None,
                 oversampling: int = 4, width: int = 6, workers: int = 1):
        self.geometry = geometry
        self.wave = wave
        self.grid = grid
        self.oversampling = oversampling
        self.r_hat = r_hat
        self.distances = dist
        self.valid = np.asarray(valid, dtype=bool)
        self._idx = np.flatnonzero(self.valid)
        rh = r_hat[self._idx]
        if np.any(rh[:, 0] ** 2 + rh[:, 1] ** 2 > 1.0 + 1e-12):
            raise RadiationError("direction outside the visible region")
        k0 = wave.k0
        self.psi = np.stack([k0 * geometry.dx * rh[:, 0], k0 * geometry.dy * rh[:, 1]])
        self.gridding = GriddingPlan(geometry.shape, self.psi[0], self.psi[1],
                                     oversampling, width, workers)
        self.factor = _prefactor(k0, dist[self._idx], geometry.cell_area)
        t_hat, p_hat = _spherical_frame(rh)
        f = self.factor[:, None]
        eta = ETA0
        # rows: E_theta, E_phi; columns: Jex, Jey, Jmx, Jmy
        self.mixing = np.stack([
            np.stack([-eta * t_hat[:, 0], -eta * t_hat[:, 1], -p_hat[:, 0], -p_hat[:, 1]], 1) * f,
            np.stack([-eta * p_hat[:, 0], -eta * p_hat[:, 1], t_hat[:, 0], t_hat[:, 1]], 1) * f,
        ])  # (2, n_valid, 4)

    @property
    def n_points(self) -> int:
        return self.valid.size

    def check(self, geometry: SkinGeometry) -> None:
        g = self.geometry
        if (geometry.shape != g.shape or geometry.dx != g.dx or geometry.dy != g.dy
                or not np.array_equal(geometry.origin, g.origin)
                or not np.array_equal(geometry.orientation, g.orientation)):
            raise RadiationError("current geometry does not match the radiation plan")

    def forward(self, stack: np.ndarray) -> np.ndarray:
        """(4, P, Q) currents to (2, n_valid) field components."""
        spectra = self.gridding.forward(stack)  # (4, n_valid)
        return np.einsum("tnc,cn->tn", self.mixing, spectra)

    def adjoint(self, fields: np.ndarray) -> np.ndarray:
        """(2, n_valid) field components to (4, P, Q) currents."""
        spectra = np.einsum("tnc,tn->cn", self.mixing.conj(), fields)
        return self.gridding.adjoint(spectra)

    def expand(self, compact: np.ndarray) -> FieldSamples:
        full = np.zeros((2, self.n_points), dtype=complex)
        full[:, self._idx] = compact
        return FieldSamples(self.grid, full[0], full[1], self.distances, self.valid)

    def compact(self, fields: FieldSamples) -> np.ndarray:
        return fields.vectors()[:, self._idx]


def build_plan(geometry: SkinGeometry, obs: ObservationGrid, wave: IncidentWave,
               oversampling: int = 4, width: int = 6, workers: int = 1) -> RadiationPlan:
    r_hat, dist, valid = _observation(geometry, obs)
    return RadiationPlan(geometry, wave, r_hat, dist, valid, obs, oversampling, width, workers)


def radiate_fast(plan: RadiationPlan, currents: SurfaceCurrentField) -> FieldSamples:
    plan.check(currents.geometry)
    return plan.expand(plan.forward(currents.stack()))


def clamp_magnitude(fields: FieldSamples, lower: np.ndarray, upper: np.ndarray) -> FieldSamples:
    """Clamp each point's field magnitude into [sqrt(lower), sqrt(upper)].

    The field direction (polarization and phase) is kept. A zero field
    raised to a positive lower bound is placed along theta-hat.
    """
    mag = fields.magnitude
    target = np.clip(mag, np.sqrt(lower), np.sqrt(upper))
    v = fields.vectors()
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(mag > 0, target / mag, 0.0)
    out = v * ratio
    zero_lift = (mag == 0) & (target > 0)
    out[0, zero_lift] = target[zero_lift]
    out[:, ~fields.valid] = 0.0
    return fields.with_vectors(out)


def mismatch(fields: FieldSamples, lower: np.ndarray, upper: np.ndarray,
             selection: Optional[np.ndarray] = None) -> float:
    """Normalized power mismatch between a field and its mask clamp.

    Sums run over valid points, optionally restricted to ``selection``.
    """
    ok = fields.valid if selection is None else fields.valid & selection
    mag = fields.magnitude[ok]
    lo, up = lower[ok], upper[ok]
    target = np.clip(mag, np.sqrt(lo), np.sqrt(up))
    den = float(np.sum(mag * mag))
    if den == 0.0:
        return 1.0 if np.any(lo > 0) else 0.0
    return float(np.sum((target - mag) ** 2) / den)


def pattern_matching_index(fields: FieldSamples, mask: FootprintMask, sigma: float = 1.0,
                           region: str = "theta") -> float:
    """Mask mismatch index over the observation region (``theta``) or only
    over the coverage region (``xi``)."""
    if region not in ("theta", "xi"):
        raise ValueError(f"unknown matching region {region!r}")
    lower, upper = mask.scaled(sigma)
    return mismatch(fields, lower, upper, mask.coverage if region == "xi" else None)


@dataclass(frozen=True)
class AngularMap:
    u: np.ndarray
    v: np.ndarray
    power_db: np.ndarray  # (n, n) indexed [iv, iu]; NaN outside the visible disk
    empty: bool


def angular_power_map(currents: SurfaceCurrentField, wave: IncidentWave,
                      resolution: int = 128) -> AngularMap:
    """Normalized radiated power over direction cosines (u, v)."""
    if resolution < 32:
        raise ValueError("resolution must be >= 32")
    geom = currents.geometry
    u = np.linspace(-1.0, 1.0, resolution)
    U, V = np.meshgrid(u, u, indexing="xy")
    rho2 = U ** 2 + V ** 2
    inside = rho2 <= 1.0
    w = np.sqrt(np.clip(1.0 - rho2, 0.0, None))
    r_hat = np.stack([U.ravel(), V.ravel(), w.ravel()], axis=1)
    ones = np.ones(r_hat.shape[0])
    plan = RadiationPlan(geom, wave, r_hat[inside.ravel()], ones[inside.ravel()],
                         ones[inside.ravel()].astype(bool))
    vec = plan.forward(currents.stack()) / plan.factor * geom.cell_area
    power = np.sum(np.abs(vec) ** 2, axis=0)
    out = np.full(rho2.shape, np.nan)
    peak = power.max() if power.size else 0.0
    if peak <= 0:
        out[inside] = -np.inf
        return AngularMap(u, u, out, True)
    with np.errstate(divide="ignore"):
        out[inside] = 10.0 * np.log10(power / peak)
    return AngularMap(u, u, out, False)


def _db(x: float) -> str:
    if np.isnan(x):
        return "nan"
    if np.isneginf(x):
        return "-inf"
    return repr(float(x))


def write_pattern(fields: FieldSamples, path: Union[str, Path]) -> None:
    if fields.grid is None:
        raise ValueError("pattern export needs an observation grid")
    with np.errstate(divide="ignore"):
        pdb = 10.0 * np.log10(fields.power)
    pdb[~fields.valid] = np.nan
    lines = [fields.grid.header("PATTERNGRID")] + [_db(v) for v in pdb]
    Path(path).write_text("\n".join(lines) + "\n")


def write_angular_map(amap: AngularMap, path: Union[str, Path]) -> None:
    lines = [f"UVGRID {amap.u.size}"] + [_db(v) for v in amap.power_db.ravel()]
    Path(path).write_text("\n".join(lines) + "\n")
