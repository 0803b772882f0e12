"""
Unit-cell physics: susceptibility dyadics, local reflection, surface-averaged
fields, polarization densities and the equivalent GSTC surface currents.

All vectors are expressed in the skin's local frame (normal along +z).
Dyadics are diagonal; their six entries may be scalars or (P, Q) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .radiator import SurfaceCurrentField
from .scenario import C0, EPS0, ETA0, MU0, IncidentWave, SkinGeometry, cell_centers

ORACLE_ALPHA = 5e24      # m^3 Hz^2
ORACLE_EPS_EFF = 2.2
RESONANCE_DETUNE = 1e-6


class UnitCellError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SusceptibilityDyad:
    chi_xx: np.ndarray
    chi_yy: np.ndarray
    chi_zz: np.ndarray
    xi_xx: np.ndarray
    xi_yy: np.ndarray
    xi_zz: np.ndarray

    ORDER = ("chi_xx", "chi_yy", "chi_zz", "xi_xx", "xi_yy", "xi_zz")

    def entries(self) -> Tuple[np.ndarray, ...]:
        return tuple(getattr(self, k) for k in self.ORDER)

    def to_real(self) -> np.ndarray:
        """(..., 12) real array: Re/Im of each entry in ``ORDER``."""
        cols = []
        for v in self.entries():
            v = np.asarray(v, dtype=complex)
            cols += [v.real, v.imag]
        return np.stack(cols, axis=-1)

    @classmethod
    def from_real(cls, arr: np.ndarray) -> "SusceptibilityDyad":
        arr = np.asarray(arr, dtype=float)
        if arr.shape[-1] != 12:
            raise ValueError("expected 12 real values per dyad")
        vals = [arr[..., 2 * i] + 1j * arr[..., 2 * i + 1] for i in range(6)]
        return cls(*vals)

    def __getitem__(self, idx) -> "SusceptibilityDyad":
        return SusceptibilityDyad(*(np.asarray(v)[idx] for v in self.entries()))


@dataclass(frozen=True)
class ReflectionTensor:
    """Entries in the (perp, par) basis: g_pp = perp-perp, g_ps = par<-perp,
    g_sp = perp<-par, g_ss = par-par."""

    g_pp: np.ndarray
    g_ps: np.ndarray
    g_sp: np.ndarray
    g_ss: np.ndarray

    def matrix(self) -> np.ndarray:
        """(..., 2, 2) matrix acting on (perp, par) coefficient vectors."""
        return np.stack([np.stack([self.g_pp, self.g_sp], -1),
                         np.stack([self.g_ps, self.g_ss], -1)], -2)

    def spectral_norm(self) -> np.ndarray:
        return np.linalg.norm(self.matrix(), ord=2, axis=(-2, -1))


@dataclass(frozen=True)
class PolarizationField:
    be: np.ndarray  # (3, P, Q) C/m
    bm: np.ndarray  # (3, P, Q) A


def resonant_size(frequency: float, eps_eff: float = ORACLE_EPS_EFF) -> float:
    """Patch side whose oracle resonance equals ``frequency``."""
    return C0 / (2.0 * frequency * np.sqrt(eps_eff))


def oracle_susceptibility(d, frequency: float, alpha: float = ORACLE_ALPHA,
                          eps_eff: float = ORACLE_EPS_EFF) -> SusceptibilityDyad:
    """Synthetic lossless patch-cell dyad for side length(s) ``d`` (m).

    A single-pole electric response with resonance ``f_r = c / (2 d
    sqrt(eps_eff))`` and a magnetic response tied to it so that the cell
    reflects fully. Sizes within one part in 1e6 of resonance are detuned.
    """
    d = np.asarray(d, dtype=float)
    if d.ndim and d.shape[-1:] == (1,):
        d = d[..., 0]
    f = frequency
    fr = C0 / (2.0 * d * np.sqrt(eps_eff))
    near = np.abs(fr - f) < RESONANCE_DETUNE * f
    fr = np.where(near, f * (1.0 + np.where(fr >= f, 1.0, -1.0) * RESONANCE_DETUNE), fr)
    chi = alpha * d ** 3 / (fr ** 2 - f ** 2) + 0j
    k0 = 2.0 * np.pi * f / C0
    xi = -4.0 / (k0 ** 2 * chi)
    zero = np.zeros_like(chi)
    return SusceptibilityDyad(chi, chi.copy(), zero, xi, xi.copy(), zero.copy())


def _tangential_axes(wave: IncidentWave):
    """In-plane unit vectors carrying the perp and par tangential fields."""
    t_perp = wave.e_hat_perp[:2] / np.linalg.norm(wave.e_hat_perp[:2])
    t_par = np.array([-t_perp[1], t_perp[0]])
    return t_perp, t_par


def _along(dyad_xx, dyad_yy, t):
    return dyad_xx * t[0] ** 2 + dyad_yy * t[1] ** 2


def reflection_tensor(dyad: SusceptibilityDyad, wave: IncidentWave,
                      descriptor=None) -> ReflectionTensor:
    """Homogenized-sheet reflection per polarization.

    For each polarization the electric susceptibility is taken along the
    tangential electric field and the magnetic one along the tangential
    magnetic field; with ``a = j k0 chi / 2`` and ``b = j k0 xi / 2`` the
    reflection coefficient is ``(b - a) / ((1 + a)(1 + b))``.
    """
    k0 = wave.k0
    t_perp, t_par = _tangential_axes(wave)
    out = []
    for te, th in ((t_perp, t_par), (t_par, t_perp)):
        a = 0.5j * k0 * _along(np.asarray(dyad.chi_xx), np.asarray(dyad.chi_yy), te)
        b = 0.5j * k0 * _along(np.asarray(dyad.xi_xx), np.asarray(dyad.xi_yy), th)
        den = (1.0 + a) * (1.0 + b)
        if np.any(den == 0):
            where = tuple(int(i) for i in np.argwhere(np.atleast_1d(den) == 0)[0])
            raise UnitCellError(f"singular cell response at cell {where} (descriptor {descriptor!r})")
        out.append((b - a) / den)
    zero = np.zeros_like(out[0])
    return ReflectionTensor(out[0], zero, zero.copy(), out[1])


_MIRROR = np.array([1.0, 1.0, -1.0])


def reflected_wave_fields(wave: IncidentWave, gamma: ReflectionTensor):
    """Reflected E and H amplitudes at the origin, shape (..., 3).

    Gamma maps the incident (perp, par) coefficients to those of the
    specularly reflected wave, whose par unit vector is the mirror image of
    the incident one, so the tangential electric field scales by Gamma.
    """
    c = gamma.matrix() @ np.array([wave.e_perp, wave.e_par])
    e_ref = c[..., :1] * wave.e_hat_perp + c[..., 1:] * (_MIRROR * wave.e_hat_par)
    k_ref = _MIRROR * wave.k_inc
    h_ref = np.cross(k_ref, e_ref) / (ETA0 * wave.k0)
    return e_ref, h_ref


def averaged_fields(wave: IncidentWave, gamma: ReflectionTensor, centers: np.ndarray):
    """Surface-averaged E and H at cell centers, shape (..., 3).

    The cell average of incident plus reflected field, halved, is taken at
    the cell midpoint. Gamma may be per cell (shape matching ``centers``
    without its last axis) or a single tensor.
    """
    centers = np.asarray(centers, dtype=float)
    phase = wave.phase(centers)[..., None]
    e_ref, h_ref = reflected_wave_fields(wave, gamma)
    e_ave = 0.5 * (wave.e_vector + e_ref) * phase
    h_ave = 0.5 * (wave.h_vector + h_ref) * phase
    return e_ave, h_ave


def polarization_densities(dyads: SusceptibilityDyad, e_ave: np.ndarray,
                           h_ave: np.ndarray) -> PolarizationField:
    """Cellwise B^e = eps0 chi . E_ave and B^m = xi . H_ave.

    ``e_ave`` and ``h_ave`` have shape (P, Q, 3); dyad entries are (P, Q).
    """
    chi = np.stack([np.broadcast_to(v, e_ave.shape[:-1]) for v in (dyads.chi_xx, dyads.chi_yy, dyads.chi_zz)])
    xi = np.stack([np.broadcast_to(v, h_ave.shape[:-1]) for v in (dyads.xi_xx, dyads.xi_yy, dyads.xi_zz)])
    be = EPS0 * chi * np.moveaxis(e_ave, -1, 0)
    bm = xi * np.moveaxis(h_ave, -1, 0)
    return PolarizationField(be, bm)


def n_cross_grad(f: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """z x grad_t f on the cell grid, (2, P, Q).

    Central differences inside, one-sided at the edges; a single row or
    column has zero derivative along it.
    """
    f = np.asarray(f)
    gx = np.gradient(f, dx, axis=0) if f.shape[0] > 1 else np.zeros_like(f)
    gy = np.gradient(f, dy, axis=1) if f.shape[1] > 1 else np.zeros_like(f)
    return np.stack([-gy, gx])


def gstc_currents(pol: PolarizationField, geometry: SkinGeometry,
                  wave: IncidentWave) -> SurfaceCurrentField:
    """Equivalent surface currents from the polarization densities."""
    w = wave.omega
    je = 1j * w * pol.be[:2] - n_cross_grad(pol.bm[2], geometry.dx, geometry.dy)
    jm = 1j * w * MU0 * pol.bm[:2] + n_cross_grad(pol.be[2] / EPS0, geometry.dx, geometry.dy)
    return SurfaceCurrentField(geometry, je, jm)


def layout_currents(dyads: SusceptibilityDyad, geometry: SkinGeometry,
                    wave: IncidentWave) -> SurfaceCurrentField:
    """Full chain from per-cell dyads (P, Q entries) to surface currents."""
    gamma = reflection_tensor(dyads, wave)
    centers = cell_centers(geometry).reshape(geometry.P, geometry.Q, 3)
    e_ave, h_ave = averaged_fields(wave, gamma, centers)
    return gstc_currents(polarization_densities(dyads, e_ave, h_ave), geometry, wave)


def fidelity_index(currents: SurfaceCurrentField, ideal: SurfaceCurrentField) -> float:
    """Normalized distance between realized and ideal currents."""
    den = np.linalg.norm(ideal.je) + np.linalg.norm(ideal.jm)
    if den == 0:
        raise UnitCellError("fidelity index undefined for zero ideal currents")
    num = np.linalg.norm(ideal.je - currents.je) + np.linalg.norm(ideal.jm - currents.jm)
    return float(num / den)


def read_susceptibility_table(path: Union[str, Path], n_desc: Optional[int] = None):
    """Tabulated dyads: columns ``d_1..d_L`` then Re/Im of the six entries.

    Returns ``(inputs (N, L), outputs (N, 12))``. A header line is optional.
    """
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise UnitCellError(f"{path}: empty table")
    try:
        float(text[0].split(",")[0])
        rows = text
    except ValueError:
        rows = text[1:]
    try:
        data = np.array([[float(v) for v in r.split(",")] for r in rows if r.strip()], ndmin=2)
    except ValueError as exc:
        raise UnitCellError(f"{path}: {exc}") from exc
    ncol = data.shape[1]
    L = ncol - 12 if n_desc is None else n_desc
    if L < 1 or ncol != L + 12:
        raise UnitCellError(f"{path}: expected L + 12 columns, found {ncol}")
    return data[:, :L], data[:, L:]


def write_susceptibility_table(path: Union[str, Path], inputs: np.ndarray, outputs: np.ndarray) -> None:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    L = inputs.shape[1]
    names = [f"d_{i + 1}" for i in range(L)]
    for k in SusceptibilityDyad.ORDER:
        names += [f"Re({k})", f"Im({k})"]
    lines = [",".join(names)]
    for x, y in zip(inputs, outputs):
        lines.append(",".join(repr(float(v)) for v in np.concatenate([x, y])))
    Path(path).write_text("\n".join(lines) + "\n")
