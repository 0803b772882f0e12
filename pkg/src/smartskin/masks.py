"""Footprint power masks over a ground observation grid."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from .scenario import ObservationGrid


class MaskError(ValueError):
    """Malformed or infeasible mask."""


@dataclass(frozen=True, eq=False)
class FootprintMask:
    """Lower/upper power bounds (dB) per observation point.

    ``lower_db`` may be ``-inf`` (no lower requirement) and ``upper_db`` may
    be ``+inf``. Linear bounds are computed once at construction.
    """

    grid: ObservationGrid
    lower_db: np.ndarray
    upper_db: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower_db, dtype=float).ravel()
        up = np.asarray(self.upper_db, dtype=float).ravel()
        if lo.shape != (self.grid.size,) or up.shape != (self.grid.size,):
            raise MaskError("mask arrays do not match the grid size")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)):
            raise MaskError("NaN in mask bounds")
        if np.any(lo > up):
            raise MaskError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower_db", lo)
        object.__setattr__(self, "upper_db", up)
        with np.errstate(over="ignore"):
            object.__setattr__(self, "lower", 10.0 ** (lo / 10.0))
            object.__setattr__(self, "upper", 10.0 ** (up / 10.0))

    @property
    def coverage(self) -> np.ndarray:
        """Boolean flags of the coverage region (finite lower bound)."""
        return np.isfinite(self.lower_db)

    def validate(self) -> "FootprintMask":
        if not np.any(self.coverage):
            raise MaskError("mask has an empty coverage region")
        return self

    def scaled(self, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
        """Linear (lower, upper) bounds multiplied by ``sigma``."""
        return self.lower * sigma, self.upper * sigma

    def __eq__(self, other):
        if not isinstance(other, FootprintMask):
            return NotImplemented
        return (self.grid == other.grid
                and np.array_equal(self.lower_db, other.lower_db)
                and np.array_equal(self.upper_db, other.upper_db))


def all_pass(grid: ObservationGrid) -> FootprintMask:
    n = grid.size
    return FootprintMask(grid, np.full(n, -np.inf), np.full(n, np.inf))


def _inside(points: np.ndarray, rect: Sequence[float]) -> np.ndarray:
    x0, y0, x1, y1 = rect
    x, y = points[:, 0], points[:, 1]
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def _from_region(grid: ObservationGrid, region: np.ndarray, level_db: float,
                 ripple_db: float, cap_db: float) -> FootprintMask:
    """Finite lower bound inside ``region``; capped upper bound elsewhere."""
    peak = level_db + ripple_db
    lower = np.where(region, level_db, -np.inf)
    upper = np.where(region, peak, peak - cap_db)
    return FootprintMask(grid, lower, upper).validate()


def square_mask(grid: ObservationGrid, center=(-25.0, 25.0), side=10.0,
                level_db: float = 0.0, ripple_db: float = 1.0,
                cap_db: float = 30.0) -> FootprintMask:
    """Constant-power rectangular footprint; ``side`` may be a pair."""
    sx, sy = (side, side) if np.isscalar(side) else side
    cx, cy = center
    rect = (cx - sx / 2, cy - sy / 2, cx + sx / 2, cy + sy / 2)
    return _from_region(grid, _inside(grid.points, rect), level_db, ripple_db, cap_db)


def checkerboard_mask(grid: ObservationGrid, region=(-45.0, 10.0, -5.0, 40.0),
                      tiles=(4, 3), level_db: float = 0.0, ripple_db: float = 1.0,
                      cap_db: float = 30.0) -> FootprintMask:
    """Alternating lit/dark tiles over ``region``; tile (0, 0) is lit."""
    x0, y0, x1, y1 = region
    nx, ny = tiles
    pts = grid.points
    inside = _inside(pts, region)
    ix = np.clip(np.floor((pts[:, 0] - x0) / (x1 - x0) * nx), 0, nx - 1).astype(int)
    iy = np.clip(np.floor((pts[:, 1] - y0) / (y1 - y0) * ny), 0, ny - 1).astype(int)
    lit = inside & ((ix + iy) % 2 == 0)
    return _from_region(grid, lit, level_db, ripple_db, cap_db)


def bitmap_mask(grid: ObservationGrid, raster: np.ndarray, region,
                level_db: float = 0.0, ripple_db: float = 1.0,
                cap_db: float = 30.0) -> FootprintMask:
    """Footprint from a monochrome raster stretched over ``region``.

    Raster row 0 maps to the largest y of the region, column 0 to the
    smallest x.
    """
    raster = np.asarray(raster, dtype=bool)
    if raster.ndim != 2:
        raise MaskError("raster must be 2-D")
    nrow, ncol = raster.shape
    x0, y0, x1, y1 = region
    pts = grid.points
    inside = _inside(pts, region)
    col = np.clip(np.floor((pts[:, 0] - x0) / (x1 - x0) * ncol), 0, ncol - 1).astype(int)
    row = np.clip(np.floor((y1 - pts[:, 1]) / (y1 - y0) * nrow), 0, nrow - 1).astype(int)
    lit = inside & raster[row, col]
    return _from_region(grid, lit, level_db, ripple_db, cap_db)


_GLYPHS = {
    "A": [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "D": ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
    "E": ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    "I": [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "L": ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
}


def text_raster(text: str, spacing: int = 1) -> np.ndarray:
    """Render upper-case text with a 5x7 glyph set (letters A, D, E, I, L)."""
    cols = []
    for i, ch in enumerate(text.upper()):
        if ch not in _GLYPHS:
            raise MaskError(f"no glyph for {ch!r}")
        if i:
            cols.append(np.zeros((7, spacing), dtype=bool))
        cols.append(np.array([[c == "#" for c in row] for row in _GLYPHS[ch]]))
    return np.hstack(cols)


def read_pbm(path: Union[str, Path]) -> np.ndarray:
    """Plain (P1) portable bitmap; 1 = lit."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P1":
        raise MaskError("only plain PBM (P1) rasters are supported")
    w, h = int(tokens[1]), int(tokens[2])
    bits = "".join(tokens[3:])
    if len(bits) != w * h:
        raise MaskError("PBM pixel count mismatch")
    return np.array([b == "1" for b in bits]).reshape(h, w)


def generate_mask(kind: str, grid: ObservationGrid, **params) -> FootprintMask:
    if kind == "square":
        return square_mask(grid, **params)
    if kind == "checkerboard":
        return checkerboard_mask(grid, **params)
    if kind == "bitmap":
        params = dict(params)
        if "text" in params:
            params["raster"] = text_raster(params.pop("text"))
        elif "pbm" in params:
            params["raster"] = read_pbm(params.pop("pbm"))
        return bitmap_mask(grid, **params)
    raise MaskError(f"unknown mask kind {kind!r}")


def _db_token(v: float) -> str:
    if np.isneginf(v):
        return "-inf"
    if np.isposinf(v):
        return "inf"
    return repr(float(v))


def save_mask(mask: FootprintMask, path: Union[str, Path]) -> None:
    lines = [mask.grid.header("MASKGRID")]
    lines += [f"{_db_token(lo)} {_db_token(up)}" for lo, up in zip(mask.lower_db, mask.upper_db)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mask(path: Union[str, Path]) -> FootprintMask:
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 7 or head[0] != "MASKGRID":
        raise MaskError(f"{path}: bad MASKGRID header")
    try:
        nx, ny = int(head[1]), int(head[2])
        x0, y0, x1, y1 = (float(v) for v in head[3:])
        rows = [ln.split() for ln in text[1:] if ln.strip()]
        vals = np.array([[float(a), float(b)] for a, b in rows])
    except ValueError as exc:
        raise MaskError(f"{path}: {exc}") from exc
    grid = ObservationGrid(nx, ny, x0, y0, x1, y1)
    if vals.shape != (grid.size, 2):
        raise MaskError(f"{path}: expected {grid.size} rows, found {len(vals)}")
    return FootprintMask(grid, vals[:, 0], vals[:, 1]).validate()
