"""Command-line entry point: ``smartskin <subcommand> --config run.cfg ...``.

Exit codes: 0 success, 1 configuration error, 2 input/output error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, DataFileError, Settings, load_config
from .masks import MaskError, save_mask
from .scenario import ScenarioError

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 1, 2, 3
log = logging.getLogger("smartskin")


def _settings(args) -> Settings:
    s = load_config(args.config) if args.config else Settings()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.mode is not None:
        kw["mode"] = args.mode
    return s.with_synthesis(**kw) if kw else s


def cmd_train_dt(args) -> int:
    from .pipeline import train_twin

    s = _settings(args)
    path = Path(args.model) if args.model else args.out / "dt_model.json"
    args.out.mkdir(parents=True, exist_ok=True)
    model, rmse, max_err = train_twin(s, path)
    print(f"trained on {model.inputs.shape[0]} samples, transform {model.transform}, nugget {model.nugget:g}")
    for m, (r, e) in enumerate(zip(rmse, max_err)):
        print(f"output {m}: cv_nrmse={r:.6g} cv_nmax={e:.6g}")
    print(f"model written to {path}")
    return 0


def cmd_ipt(args) -> int:
    from .ipt import write_currents, write_history
    from .pipeline import run_ipt_stage, write_summary
    from .radiator import write_pattern

    s = _settings(args)
    res, t = run_ipt_stage(s)
    args.out.mkdir(parents=True, exist_ok=True)
    write_currents(res.currents, args.out / "ideal_currents.csv")
    write_history(res.history, args.out / "ipt_history.csv")
    write_pattern(res.fields, args.out / "pattern_ipt.txt")
    write_summary({"mask_sigma": float(res.sigma), "X_ipt": float(res.x_ipt),
                   "ipt_best_iteration": res.best_iteration}, args.out / "summary.txt")
    print(f"X_ipt={res.x_ipt:.6g} iterations={res.iterations} t_ipt_s={t:.3g}")
    return 0


def cmd_sbd(args) -> int:
    from .pipeline import dyad_source, load_ideal_currents
    from .sbd import run_sbd, write_layout, write_sbd_history

    s = _settings(args)
    currents = Path(args.currents) if args.currents else args.out / "ideal_currents.csv"
    ideal = load_ideal_currents(s, currents)
    res = run_sbd(ideal, dyad_source(s), s.wave(), s.geometry(), s.synthesis, threads=args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    write_layout(res.D_opt, args.out / "layout.csv")
    write_sbd_history(res.history, args.out / "sbd_history.csv")
    print(f"upsilon_sbd={res.upsilon:.6g} t_sbd_s={res.elapsed:.3g}")
    return 0


def cmd_synthesize(args) -> int:
    from .pipeline import synthesize

    r = synthesize(_settings(args), args.out, threads=args.threads)
    print(f"X_ipt={r.X_ipt:.6g} upsilon_sbd={r.upsilon_sbd:.6g} X_spss={r.X_spss:.6g} "
          f"t_ipt_s={r.t_ipt_s:.3g} t_sbd_s={r.t_sbd_s:.3g}")
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate

    ev = evaluate(_settings(args), args.layout, args.out, sigma=args.sigma)
    print(f"X_spss={ev.X:.6g} amplitude={ev.amplitude:.6g}")
    return 0


def cmd_sweep(args) -> int:
    from .pipeline import sweep

    reports = sweep(_settings(args), args.sizes, args.out, threads=args.threads)
    for r in reports:
        print(r.row())
    return 0


def cmd_mask(args) -> int:
    s = _settings(args)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "mask.txt"
    save_mask(s.mask(), path)
    print(f"mask written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--mode", choices=("per-cell", "global"), help="SbD mode")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="smartskin", description="Smart-skin footprint synthesis.")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("train-dt", parents=[common], help="train the unit-cell digital twin")
    sp.add_argument("--model", help="model file to write (default OUT/dt_model.json)")
    sp.set_defaults(func=cmd_train_dt)
    sub.add_parser("ipt", parents=[common], help="synthesize ideal currents").set_defaults(func=cmd_ipt)
    sp = sub.add_parser("sbd", parents=[common], help="match cell descriptors to ideal currents")
    sp.add_argument("--currents", help="ideal currents CSV (default OUT/ideal_currents.csv)")
    sp.set_defaults(func=cmd_sbd)
    sub.add_parser("synthesize", parents=[common], help="IPT, SbD and evaluation").set_defaults(func=cmd_synthesize)
    sp = sub.add_parser("evaluate", parents=[common], help="pattern and indexes of a stored layout")
    sp.add_argument("--layout", required=True, type=Path)
    sp.add_argument("--sigma", type=float, help="mask scale (default from summary.txt beside the layout)")
    sp.set_defaults(func=cmd_evaluate)
    sp = sub.add_parser("sweep", parents=[common], help="synthesize several square aperture sizes")
    sp.add_argument("--sizes", type=int, nargs="+", required=True)
    sp.set_defaults(func=cmd_sweep)
    sub.add_parser("mask", parents=[common], help="write the configured mask as a MASKGRID file").set_defaults(func=cmd_mask)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ScenarioError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataFileError, OSError)):
        return EXIT_IO
    if isinstance(exc, MaskError):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
