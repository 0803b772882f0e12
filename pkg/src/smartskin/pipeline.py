"""End-to-end synthesis, evaluation and aperture sweeps with file artifacts."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ConfigError, DataFileError, Settings
from .ipt import (IptError, IptResult, calibrate_mask_scale, coverage_selection, radiate, read_currents,
                  run_ipt, write_currents, write_history)
from .masks import FootprintMask
from .radiator import (FieldSamples, SurfaceCurrentField, angular_power_map, build_plan,
                       mismatch, write_angular_map, write_pattern)
from .sbd import (DyadSource, SbdError, SbdResult, as_source, layout_dyads, oracle_source,
                  read_layout, run_sbd, write_layout, write_sbd_history)
from .surrogate import (KrigingModel, SurrogateError, TrainingSet, cross_validate, load_model,
                        oracle_training_set, save_model, train)
from .unitcell import UnitCellError, layout_currents, read_susceptibility_table

log = logging.getLogger(__name__)

REPORT_VERSION = "# smartskin-report v1"
REPORT_COLUMNS = ("footprint", "P", "Q", "t_ipt_s", "t_sbd_s", "X_ipt", "upsilon_sbd", "X_spss")


@dataclass(frozen=True)
class SynthesisReport:
    footprint: str
    P: int
    Q: int
    t_ipt_s: float
    t_sbd_s: float
    X_ipt: float
    upsilon_sbd: float
    X_spss: float

    def row(self) -> str:
        def g3(v):
            return "nan" if not np.isfinite(v) else f"{v:.3g}"

        def idx(v):
            return "nan" if not np.isfinite(v) else repr(float(v))

        return ",".join([self.footprint, str(self.P), str(self.Q), g3(self.t_ipt_s),
                         g3(self.t_sbd_s), idx(self.X_ipt), idx(self.upsilon_sbd), idx(self.X_spss)])


def write_report(reports: Sequence[SynthesisReport], path: Union[str, Path]) -> None:
    lines = [REPORT_VERSION, ",".join(REPORT_COLUMNS)] + [r.row() for r in reports]
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path: Union[str, Path]) -> List[Dict[str, str]]:
    rows = [r for r in Path(path).read_text().splitlines() if r and not r.startswith("#")]
    head = rows[0].split(",")
    return [dict(zip(head, r.split(","))) for r in rows[1:]]


def write_summary(values: Dict[str, object], path: Union[str, Path]) -> None:
    lines = [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_summary(path: Union[str, Path]) -> Dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# ------------------------------------------------------------ digital twin
def training_set(settings: Settings) -> TrainingSet:
    if settings.train_csv is not None:
        try:
            x, y = read_susceptibility_table(settings.train_csv)
        except OSError as exc:
            raise DataFileError(f"training table: {exc}") from exc
        except (ValueError, UnitCellError) as exc:
            raise DataFileError(f"training table {settings.train_csv}: {exc}") from exc
        try:
            return TrainingSet(x, y)
        except SurrogateError as exc:
            raise DataFileError(f"training table {settings.train_csv}: {exc}") from exc
    cfg = settings.synthesis
    return oracle_training_set(cfg.descriptor_bounds, settings.train_n, settings.frequency,
                               settings.train_seed)


def train_twin(settings: Settings, out: Optional[Path] = None):
    """Train, cross-validate and (optionally) save the digital twin."""
    ts = training_set(settings)
    bounds = settings.synthesis.descriptor_bounds if ts.n_desc == 1 else None
    model = train(ts, transform=settings.transform, frequency=settings.frequency, bounds=bounds)
    k = min(settings.train_folds, ts.inputs.shape[0])
    rmse, max_err = cross_validate(ts, k=k, seed=settings.train_seed, transform=settings.transform,
                                   frequency=settings.frequency, bounds=bounds)
    if out is not None:
        save_model(model, out)
    return model, rmse, max_err


def dyad_source(settings: Settings) -> DyadSource:
    """Trained twin from ``model_file``, otherwise the synthetic oracle."""
    if settings.model_file is None:
        return oracle_source(settings.frequency)
    try:
        model = load_model(settings.model_file)
    except OSError as exc:
        raise DataFileError(f"model file: {exc}") from exc
    except SurrogateError as exc:
        raise DataFileError(str(exc)) from exc
    return as_source(model)


# -------------------------------------------------------------- evaluation
def spss_index(fields: FieldSamples, mask: FootprintMask, sigma: float,
               region: str = "theta") -> Tuple[float, float]:
    """Matching index at the frozen scale ``sigma`` times one fitted amplitude.

    Returns ``(X, amplitude)``.
    """
    if not np.any(fields.power[fields.valid] > 0):
        raise SbdError("realized layout radiates no power over the observation grid")
    shift = 10.0 * math.log10(sigma)
    shifted = FootprintMask(mask.grid, mask.lower_db + shift, mask.upper_db + shift)
    sel = coverage_selection(mask, region)
    amp = calibrate_mask_scale(fields, shifted, selection=sel)
    lo, up = mask.scaled(sigma * amp)
    return mismatch(fields, lo, up, sel), amp


@dataclass
class Evaluation:
    currents: SurfaceCurrentField
    fields: FieldSamples
    X: float
    amplitude: float


def evaluate_layout(D: np.ndarray, settings: Settings, sigma: float, source: DyadSource,
                    plan=None) -> Evaluation:
    geometry, wave, mask = settings.geometry(), settings.wave(), settings.mask()
    if D.shape[:2] != geometry.shape:
        raise ConfigError(f"layout is {D.shape[0]}x{D.shape[1]}, config expects {geometry.P}x{geometry.Q}")
    J = layout_currents(layout_dyads(source, D), geometry, wave)
    plan = plan or build_plan(geometry, mask.grid, wave)
    E = radiate(plan, J)
    X, amp = spss_index(E, mask, sigma, settings.region)
    return Evaluation(J, E, X, amp)


# -------------------------------------------------------------- pipeline
def run_ipt_stage(settings: Settings, plan=None) -> Tuple[IptResult, float]:
    geometry, wave, mask = settings.geometry(), settings.wave(), settings.mask()
    t0 = time.perf_counter()
    res = run_ipt(geometry, wave, mask, settings.synthesis, region=settings.region)
    return res, time.perf_counter() - t0


def synthesize(settings: Settings, out: Union[str, Path], threads: int = 1) -> SynthesisReport:
    """IPT, SbD and final evaluation; writes all artifacts into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    geometry, wave, mask = settings.geometry(), settings.wave(), settings.mask()
    source = dyad_source(settings)
    plan = build_plan(geometry, mask.grid, wave)

    t0 = time.perf_counter()
    ipt = run_ipt(geometry, wave, mask, settings.synthesis, region=settings.region)
    t_ipt = time.perf_counter() - t0
    log.info("IPT: X=%.4g after %d iterations", ipt.x_ipt, ipt.iterations)

    sbd = run_sbd(ipt.currents, source, wave, geometry, settings.synthesis, threads=threads)
    log.info("SbD: upsilon=%.4g", sbd.upsilon)

    ev = evaluate_layout(sbd.D_opt, settings, ipt.sigma, source, plan)
    report = SynthesisReport(settings.footprint_name, geometry.P, geometry.Q, t_ipt, sbd.elapsed,
                             ipt.x_ipt, sbd.upsilon, ev.X)

    write_currents(ipt.currents, out / "ideal_currents.csv")
    write_history(ipt.history, out / "ipt_history.csv")
    write_layout(sbd.D_opt, out / "layout.csv")
    write_sbd_history(sbd.history, out / "sbd_history.csv")
    write_pattern(ipt.fields, out / "pattern_ipt.txt")
    write_pattern(ev.fields, out / "pattern_spss.txt")
    write_summary({"mask_sigma": float(ipt.sigma), "spss_amplitude": float(ev.amplitude),
                   "X_ipt": float(ipt.x_ipt), "upsilon_sbd": float(sbd.upsilon),
                   "X_spss": float(ev.X), "ipt_best_iteration": ipt.best_iteration},
                  out / "summary.txt")
    write_report([report], out / "report.csv")
    return report


def sweep(settings: Settings, sizes: Sequence[int], out: Union[str, Path],
          threads: int = 1) -> List[SynthesisReport]:
    """Run :func:`synthesize` for square apertures of each size; a failing
    size is logged and reported with NaN entries."""
    if len(sizes) < 2:
        raise ConfigError("a sweep needs at least two sizes")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for n in sizes:
        try:
            reports.append(synthesize(settings.with_size(n, n), out / f"size_{n}", threads))
        except (ConfigError, DataFileError):
            raise
        except Exception as exc:  # noqa: BLE001 - recorded and skipped
            log.error("size %d failed: %s", n, exc)
            nan = float("nan")
            reports.append(SynthesisReport(settings.footprint_name, n, n, nan, nan, nan, nan, nan))
    write_report(reports, out / "report.csv")
    return reports


def evaluate(settings: Settings, layout_path: Union[str, Path], out: Union[str, Path],
             sigma: Optional[float] = None) -> Evaluation:
    """Recompute the pattern of a stored layout.

    Without ``sigma`` the mask scale is read from ``summary.txt`` next to the
    layout when present, else fitted to the layout's own pattern.
    """
    layout_path = Path(layout_path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        D = read_layout(layout_path, settings.geometry().shape)
    except OSError as exc:
        raise DataFileError(f"layout: {exc}") from exc
    except SbdError as exc:
        raise DataFileError(str(exc)) from exc
    if sigma is None:
        summary = layout_path.parent / "summary.txt"
        sigma = float(read_summary(summary)["mask_sigma"]) if summary.exists() else 1.0
    source = dyad_source(settings)
    ev = evaluate_layout(D, settings, sigma, source)
    write_pattern(ev.fields, out / "pattern_eval.txt")
    write_angular_map(angular_power_map(ev.currents, settings.wave()), out / "angular_map.txt")
    write_summary({"mask_sigma": float(sigma), "spss_amplitude": float(ev.amplitude),
                   "X_spss": float(ev.X)}, out / "evaluation.txt")
    return ev


def load_ideal_currents(settings: Settings, path: Union[str, Path]) -> SurfaceCurrentField:
    try:
        return read_currents(path, settings.geometry())
    except OSError as exc:
        raise DataFileError(f"currents: {exc}") from exc
    except (ValueError, IptError) as exc:
        raise DataFileError(f"currents {path}: {exc}") from exc
