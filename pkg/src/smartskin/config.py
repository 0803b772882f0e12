"""Plain-text ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .masks import FootprintMask, MaskError, generate_mask, load_mask
from .scenario import (DOWNWARD, IncidentWave, ObservationGrid, ScenarioError, SkinGeometry,
                       SynthesisConfig, make_incident_wave, slant45_coefficients)


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataFileError(OSError):
    """Missing or malformed input data file."""


@dataclass(frozen=True)
class Settings:
    frequency_ghz: float = 30.0
    theta_inc_deg: float = 20.0
    phi_inc_deg: float = 105.0
    e_perp: complex = slant45_coefficients()[0]
    e_par: complex = slant45_coefficients()[1]
    P: int = 50
    Q: int = 50
    dx_mm: float = 5.0
    dy_mm: float = 5.0
    skin_origin_m: Tuple[float, float, float] = (0.0, 0.0, 15.0)
    orientation: Tuple[float, ...] = tuple(DOWNWARD.ravel())
    obs_grid: Tuple[float, ...] = (121, 61, -60.0, 0.0, 60.0, 60.0)
    mask_file: Optional[Path] = None
    mask_kind: str = "square"
    mask_params: Dict[str, object] = field(default_factory=dict)
    footprint: Optional[str] = None
    region: str = "theta"
    model_file: Optional[Path] = None
    train_n: int = 50
    train_seed: int = 0
    train_csv: Optional[Path] = None
    train_folds: int = 10
    transform: str = "phase"
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)

    @property
    def frequency(self) -> float:
        return self.frequency_ghz * 1e9

    def wave(self) -> IncidentWave:
        try:
            return make_incident_wave(self.theta_inc_deg, self.phi_inc_deg, self.e_perp,
                                      self.e_par, self.frequency)
        except ScenarioError as exc:
            raise ConfigError(str(exc)) from exc

    def geometry(self) -> SkinGeometry:
        try:
            return SkinGeometry(self.P, self.Q, self.dx_mm * 1e-3, self.dy_mm * 1e-3,
                                np.array(self.skin_origin_m, dtype=float),
                                np.array(self.orientation, dtype=float).reshape(3, 3))
        except ScenarioError as exc:
            raise ConfigError(str(exc)) from exc

    def grid(self) -> ObservationGrid:
        nx, ny, x0, y0, x1, y1 = self.obs_grid
        try:
            return ObservationGrid(int(nx), int(ny), x0, y0, x1, y1)
        except ScenarioError as exc:
            raise ConfigError(str(exc)) from exc

    def mask(self) -> FootprintMask:
        if self.mask_file is not None:
            try:
                return load_mask(self.mask_file)
            except (OSError, MaskError) as exc:
                raise DataFileError(f"mask file: {exc}") from exc
        try:
            return generate_mask(self.mask_kind, self.grid(), **self.mask_params)
        except (MaskError, TypeError) as exc:
            raise ConfigError(f"mask: {exc}") from exc
        except OSError as exc:
            raise DataFileError(f"mask raster: {exc}") from exc

    @property
    def footprint_name(self) -> str:
        if self.footprint:
            return self.footprint
        return self.mask_file.stem if self.mask_file is not None else self.mask_kind

    def with_size(self, P: int, Q: int) -> "Settings":
        return replace(self, P=P, Q=Q)

    def with_synthesis(self, **kw) -> "Settings":
        try:
            return replace(self, synthesis=replace(self.synthesis, **kw))
        except ScenarioError as exc:
            raise ConfigError(str(exc)) from exc


def _floats(v: str, n: Optional[int] = None) -> Tuple[float, ...]:
    vals = tuple(float(t) for t in v.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} values, got {len(vals)}")
    return vals


def _one(v: str) -> float:
    return _floats(v, 1)[0]


def _int(v: str) -> int:
    x = _one(v)
    if x != int(x):
        raise ConfigError(f"expected an integer, got {v!r}")
    return int(x)


_TOP = {
    "frequency_ghz": _one, "theta_inc_deg": _one, "phi_inc_deg": _one,
    "e_perp": lambda v: complex(v.replace(" ", "")), "e_par": lambda v: complex(v.replace(" ", "")),
    "P": _int, "Q": _int, "dx_mm": _one, "dy_mm": _one,
    "skin_origin_m": lambda v: _floats(v, 3), "orientation": lambda v: _floats(v, 9),
    "obs_grid": lambda v: _floats(v, 6), "footprint": str.strip, "region": str.strip,
    "mask_kind": str.strip, "train_n": _int, "train_seed": _int, "train_folds": _int,
    "transform": str.strip,
}
_PATHS = ("mask_file", "model_file", "train_csv")
_SYNTH = {
    "H": ("H", _int), "chi_star": ("chi_star", _one), "S": ("S", _int), "G": ("G", _int),
    "S_cell": ("S_cell", _int), "seed": ("seed", _int), "mode": ("mode", str.strip),
    "C_e": ("C_e", _one), "C_m": ("C_m", _one), "current_model": ("current_model", str.strip),
    "d_min_mm": ("d_min", lambda v: _one(v) * 1e-3), "d_max_mm": ("d_max", lambda v: _one(v) * 1e-3),
}
_MASK = {
    "mask_center_m": ("center", lambda v: _floats(v, 2)),
    "mask_side_m": ("side", lambda v: _floats(v)),
    "mask_region_m": ("region", lambda v: _floats(v, 4)),
    "mask_tiles": ("tiles", lambda v: tuple(int(t) for t in _floats(v, 2))),
    "mask_level_db": ("level_db", _one), "mask_ripple_db": ("ripple_db", _one),
    "mask_cap_db": ("cap_db", _one), "mask_text": ("text", str.strip), "mask_pbm": ("pbm", str.strip),
}


def parse_config(text: str, base: Union[str, Path] = ".") -> Settings:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Relative paths are resolved against ``base``. Unknown keys and values
    violating the synthesis invariants raise :class:`ConfigError`.
    """
    base = Path(base)
    top, synth, mask = {}, {}, {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key in _TOP:
                top[key] = _TOP[key](val)
            elif key in _PATHS:
                top[key] = base / val
            elif key in _SYNTH:
                name, conv = _SYNTH[key]
                synth[name] = conv(val)
            elif key in _MASK:
                name, conv = _MASK[key]
                value = conv(val)
                if name == "side" and len(value) == 1:
                    value = value[0]
                if name == "pbm":
                    value = str(base / value)
                mask[name] = value
            else:
                raise ConfigError(f"line {n}: unknown key {key!r}")
        except ConfigError as exc:
            raise ConfigError(f"line {n} ({key}): {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"line {n} ({key}): {exc}") from None
    try:
        cfg = SynthesisConfig(**synth)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from exc
    settings = Settings(mask_params=mask, synthesis=cfg, **top)
    if settings.region not in ("theta", "xi"):
        raise ConfigError(f"unknown region {settings.region!r}")
    if settings.transform not in ("phase", "raw"):
        raise ConfigError(f"unknown transform {settings.transform!r}")
    if settings.P < 1 or settings.Q < 1:
        raise ConfigError("P and Q must be >= 1")
    return settings


def load_config(path: Union[str, Path]) -> Settings:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFileError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)
