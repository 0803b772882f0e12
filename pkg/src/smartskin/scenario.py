"""
Physical scene: skin aperture, incident plane wave, observation grid and the
configuration shared by the synthesis stages.

Two frames are used throughout. The skin's local frame has the aperture in
the z = 0 plane with the surface normal along +z; the global (ground) frame
has the ground at z' = 0. ``SkinGeometry.orientation`` maps local vectors to
global ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import constants as const

log = logging.getLogger(__name__)

C0 = const.c
EPS0 = const.epsilon_0
MU0 = const.mu_0
ETA0 = float(np.sqrt(MU0 / EPS0))

# Skin parallel to the ground, facing down: local z = -z', local y = -y'.
DOWNWARD = np.diag([1.0, -1.0, -1.0])


class ScenarioError(ValueError):
    """Invalid scene description."""


@dataclass(frozen=True)
class IncidentWave:
    frequency: float
    theta_inc: float
    phi_inc: float
    e_perp: complex
    e_par: complex
    k_inc: np.ndarray
    e_hat_perp: np.ndarray
    e_hat_par: np.ndarray

    @property
    def k0(self) -> float:
        return 2.0 * np.pi * self.frequency / C0

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.frequency

    @property
    def eta0(self) -> float:
        return ETA0

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency

    @property
    def e_vector(self) -> np.ndarray:
        """Complex electric field polarization vector (V/m) at the origin."""
        return self.e_perp * self.e_hat_perp + self.e_par * self.e_hat_par

    @property
    def h_vector(self) -> np.ndarray:
        """Complex magnetic field vector (A/m) at the origin."""
        return np.cross(self.k_inc, self.e_vector) / (ETA0 * self.k0)

    def phase(self, points: np.ndarray) -> np.ndarray:
        """exp(-j k_inc . r) for local positions of shape (..., 3)."""
        return np.exp(-1j * (np.asarray(points) @ self.k_inc))


def make_incident_wave(theta_deg: float, phi_deg: float, e_perp: complex,
                       e_par: complex, frequency: float) -> IncidentWave:
    """Plane wave impinging on the skin from direction (theta, phi).

    The wave vector points towards the skin, ``k = -k0 (sin t cos p, sin t
    sin p, cos t)``. At normal incidence the TE unit vector is undefined
    (k x n vanishes) and is fixed to +y by convention.
    """
    if not 0.0 <= theta_deg < 90.0:
        raise ScenarioError(f"theta_inc must lie in [0, 90) deg, got {theta_deg}")
    if frequency <= 0:
        raise ScenarioError("frequency must be positive")
    t, p = np.radians(theta_deg), np.radians(phi_deg)
    k0 = 2.0 * np.pi * frequency / C0
    k_inc = -k0 * np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])
    n_hat = np.array([0.0, 0.0, 1.0])
    kxn = np.cross(k_inc, n_hat)
    norm = np.linalg.norm(kxn)
    if norm <= 1e-12 * k0:
        e_hat_perp = np.array([0.0, 1.0, 0.0])
    else:
        e_hat_perp = kxn / norm
    par = np.cross(e_hat_perp, k_inc)
    e_hat_par = par / np.linalg.norm(par)
    return IncidentWave(frequency, float(theta_deg), float(phi_deg), complex(e_perp),
                        complex(e_par), k_inc, e_hat_perp, e_hat_par)


def slant45_coefficients() -> Tuple[complex, complex]:
    """TE/TM split of a unit-power slant +45 deg linear polarization."""
    a = 1.0 / np.sqrt(2.0)
    return complex(a), complex(a)


@dataclass(frozen=True)
class SkinGeometry:
    P: int
    Q: int
    dx: float
    dy: float
    origin: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 15.0]))
    orientation: np.ndarray = field(default_factory=lambda: DOWNWARD.copy())

    def __post_init__(self):
        if self.P < 1 or self.Q < 1:
            raise ScenarioError("P and Q must be positive")
        if self.dx <= 0 or self.dy <= 0:
            raise ScenarioError("cell periodicity must be positive")
        R = np.asarray(self.orientation, dtype=float)
        if R.shape != (3, 3):
            raise ScenarioError("orientation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ScenarioError("orientation must be a proper rotation")
        object.__setattr__(self, "orientation", R)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.P, self.Q)

    @property
    def n_hat(self) -> np.ndarray:
        return np.array([0.0, 0.0, 1.0])

    @property
    def extent(self) -> Tuple[float, float]:
        return (self.P * self.dx, self.Q * self.dy)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def x_coords(self) -> np.ndarray:
        return (np.arange(self.P) - (self.P - 1) / 2.0) * self.dx

    def y_coords(self) -> np.ndarray:
        return (np.arange(self.Q) - (self.Q - 1) / 2.0) * self.dy

    def resized(self, P: int, Q: int) -> "SkinGeometry":
        return SkinGeometry(P, Q, self.dx, self.dy, self.origin, self.orientation)


def cell_centers(geometry: SkinGeometry) -> np.ndarray:
    """Local cell centers, shape (P*Q, 3), p outer and q inner."""
    X, Y = np.meshgrid(geometry.x_coords(), geometry.y_coords(), indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)


def to_local(geometry: SkinGeometry, v: np.ndarray) -> np.ndarray:
    return np.asarray(v) @ geometry.orientation


def to_global(geometry: SkinGeometry, v: np.ndarray) -> np.ndarray:
    return np.asarray(v) @ geometry.orientation.T


def ground_to_direction(obs_point, geometry: SkinGeometry):
    """Local unit direction and distance from the skin center to ground points.

    Accepts a single point or an array of shape (N, 3). Returns
    ``(r_hat_local, distance, valid)`` where ``valid`` flags points lying in
    the skin's front half-space (positive local z).
    """
    pts = np.atleast_2d(np.asarray(obs_point, dtype=float))
    rel = pts - geometry.origin
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist == 0):
        raise ScenarioError("observation point coincides with the skin center")
    r_hat = to_local(geometry, rel / dist[:, None])
    valid = r_hat[:, 2] > 0
    n_bad = int(np.count_nonzero(~valid))
    if n_bad:
        log.warning("%d observation points behind the skin excluded", n_bad)
    if np.ndim(obs_point) == 1:
        return r_hat[0], float(dist[0]), bool(valid[0])
    return r_hat, dist, valid


@dataclass(frozen=True)
class ObservationGrid:
    """Uniform ground-plane grid, row-major with x varying fastest."""

    nx: int
    ny: int
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ScenarioError("grid needs at least one sample per axis")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys, indexing="xy")
        return np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)

    def header(self, tag: str) -> str:
        return f"{tag} {self.nx} {self.ny} {_fmt(self.x0)} {_fmt(self.y0)} {_fmt(self.x1)} {_fmt(self.y1)}"


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass(frozen=True)
class SynthesisConfig:
    H: int = 1000
    chi_star: float = 1e-4
    S: int = 10000
    G: int = 10
    S_cell: int = 200
    C_e: float = 1.0
    C_m: Optional[float] = None
    d_min: float = 0.5e-3
    d_max: float = 4.5e-3
    seed: int = 0
    mode: str = "per-cell"
    current_model: str = "isophoric"

    def __post_init__(self):
        if self.H < 1:
            raise ScenarioError("H must be >= 1")
        if self.S < 1 or self.S_cell < 1:
            raise ScenarioError("S must be >= 1")
        if self.G < 2:
            raise ScenarioError("G must be >= 2")
        if not self.d_min < self.d_max:
            raise ScenarioError("descriptor bounds need min < max")
        if self.mode not in ("per-cell", "global"):
            raise ScenarioError(f"unknown mode {self.mode!r}")
        if self.current_model not in ("isophoric", "reflective"):
            raise ScenarioError(f"unknown current model {self.current_model!r}")
        if self.C_e <= 0 or (self.C_m is not None and self.C_m <= 0):
            raise ScenarioError("current magnitudes must be positive")

    @property
    def c_m(self) -> float:
        return ETA0 * self.C_e if self.C_m is None else self.C_m

    @property
    def descriptor_bounds(self) -> np.ndarray:
        return np.array([[self.d_min, self.d_max]])
