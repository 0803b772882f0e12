"""Footprint-pattern synthesis for static passive smart electromagnetic skins.

Ideal phase-only surface currents are found by alternating projections,
then unit-cell descriptors are matched to them by particle swarms driven by a
Kriging digital twin of the cell's susceptibilities.
"""

from .scenario import (IncidentWave, ObservationGrid, SkinGeometry, SynthesisConfig,
                       make_incident_wave, slant45_coefficients)
from .masks import FootprintMask, generate_mask, load_mask, save_mask
from .radiator import SurfaceCurrentField, build_plan, radiate_direct, radiate_fast
from .ipt import run_ipt
from .unitcell import layout_currents, oracle_susceptibility
from .surrogate import predict, train
from .sbd import run_sbd

__version__ = "0.1.0"
