"""Command line entry point ``shapiro-bjj``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import math
import sys
import warnings

import numpy as np

from .config import Config, ConfigError, load_config
from .effective import HarmonicsError, effective_rows
from .exact_small import CapacityError
from .potential import CalibrationError, DomainError, DriveSpec, Variant
from .scan import (
    FLOAT_FORMAT,
    MODELS,
    AmplitudeKind,
    AmplitudeRule,
    find_resonances,
    reference_deltaE0,
    run_scan,
)
from .spectral import ConvergenceError, Grid, Model, PreconditionError, TwoModeValidityWarning, build_parameter_table, parameter_curves
from .trajectory import IntegratorError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
TRAJECTORY_COLUMNS = ("t", "jz_mean_over_N", "jz_var", "frag", "jz_timeavg")


class _Output:
    """Write rows to --out (or stdout) as CSV or JSON."""

    def __init__(self, path: str | None, fmt: str):
        self.path, self.fmt = path, fmt

    def emit(self, rows, columns, metadata=None):
        rows = list(rows)
        if self.path in (None, "-"):
            buf = io.StringIO()
            self._write(buf, rows, columns, metadata)
            sys.stdout.write(buf.getvalue())
        else:
            with open(self.path, "w", newline="") as fh:
                self._write(fh, rows, columns, metadata)

    def _write(self, fh, rows, columns, metadata):
        if self.fmt == "json":
            import json
            from .scan import _jsonable
            payload = {"metadata": metadata or {}, "records": [{c: r[c] for c in columns} for r in rows]}
            json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
            fh.write("\n")
            return
        import csv
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else FLOAT_FORMAT.format(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def _amplitude(args, cfg: Config) -> AmplitudeRule:
    if getattr(args, "lambda1", None) is not None and getattr(args, "coefficient", None) is not None:
        raise ConfigError("give either --lambda1 or --coefficient")
    if getattr(args, "lambda1", None) is not None:
        return AmplitudeRule(AmplitudeKind.FIXED, args.lambda1)
    if getattr(args, "coefficient", None) is not None:
        return AmplitudeRule(AmplitudeKind.COEFFICIENT, args.coefficient)
    return cfg.amplitude


def _drive(args, cfg: Config, deltaE0: float) -> DriveSpec:
    ratio = args.omega if args.omega is not None else cfg.omega
    if ratio <= 0:
        raise ConfigError("--omega must be positive")
    variant = Variant.parse(args.variant) if args.variant else cfg.variant
    return DriveSpec(_amplitude(args, cfg).lambda1(ratio), ratio * deltaE0, variant)


def _meta(cfg: Config, **extra) -> dict:
    return {"calibration": cfg.potential.fingerprint(), **extra}


# -- subcommands ---------------------------------------------------------------

def cmd_calibrate(args, cfg: Config, out: _Output) -> None:
    spec = cfg.potential
    rows = [{"lambda": l, "d": d, "barrier": b}
            for l, d, b in zip(spec.table_lambda, spec.table_d, spec.table_barrier)]
    p0 = parameter_curves(spec, None, [spec.lambda0], grid=cfg.eigen_grid)[0]
    out.emit(rows, ("lambda", "d", "barrier"),
             _meta(cfg, lambda0=spec.lambda0, g=spec.g, Omega0=p0["Omega"], DeltaE0=p0["DeltaE"],
                   DeltaE0_hz=p0["DeltaE"] * cfg.units.energy_hz))


def cmd_static_curves(args, cfg: Config, out: _Output) -> None:
    spec = cfg.potential
    lo, hi = spec.lambda_domain
    lam = np.linspace(args.lambda_min if args.lambda_min is not None else lo,
                      args.lambda_max if args.lambda_max is not None else hi, args.points)
    U0N = args.U0N if args.U0N is not None else cfg.U0N
    N = args.N if args.N is not None else cfg.N
    spec.check_lambda(lam)
    rows = parameter_curves(spec, None, lam, grid=cfg.eigen_grid, U0=U0N / N, N=N)
    out.emit(rows, ("lambda", "Omega", "DeltaE", "kappa", "warn_two_mode"), _meta(cfg, U0N=U0N, N=N))


def cmd_scan(args, cfg: Config, out: _Output) -> None:
    overrides = {"model": args.model, "U0N": args.U0N, "N": args.N, "T": args.T,
                 "variant": Variant.parse(args.variant) if args.variant else None}
    if args.lambda1 is not None or args.coefficient is not None:
        overrides["amplitude"] = _amplitude(args, cfg)
    spec = cfg.scan_spec(**overrides)
    scan = run_scan(spec, cfg.potential, workers=args.workers)
    out.emit(scan.records, scan.COLUMNS, scan.metadata)
    if args.resonances:
        rows = [{"n": r.n, "omega_min": r.omega_min, "depth": r.depth, "fwhm": r.fwhm,
                 "value_min": r.value_min, "resolved": r.resolved} for r in find_resonances(scan)]
        cols = ("n", "omega_min", "depth", "fwhm", "value_min", "resolved")
        _Output(args.resonances, out.fmt).emit(rows, cols, scan.metadata)


def _trajectory_rows(rec, mean_field: bool):
    for row in rec.rows():
        if mean_field:
            row["jz_var"] = math.nan
            row["frag"] = math.nan
        yield row


def cmd_trajectory(args, cfg: Config, out: _Output) -> None:
    spec = cfg.potential
    dE0 = reference_deltaE0(spec)
    drive = _drive(args, cfg, dE0)
    drive.check(spec)
    U0N = args.U0N if args.U0N is not None else cfg.U0N
    N = args.N if args.N is not None else cfg.N
    T = args.T
    if args.model == "gp":
        from .gpdynamics import gp_ground_state_tilted, propagate_gp
        g = cfg.grid
        grid = Grid(*g.get("gp_box", (-4.0, 4.0)), g.get("gp_points", 256))
        field = gp_ground_state_tilted(grid, spec, U0N=U0N)
        rec = propagate_gp(field, drive if drive.lambda1 else None, spec, T,
                           dt=g.get("gp_dt", 0.005), out_dt=args.out_dt)
    else:
        from .twomode import DrivenTMSystem, prepare_initial_state, propagate
        model = Model.IMPROVED if args.model == "tm-improved" else Model.STANDARD
        lam1 = drive.lambda1
        table = build_parameter_table(spec, spec.lambda0 - lam1, spec.lambda0 + lam1, model=model,
                                      U0N=U0N, N=N, grid=cfg.eigen_grid)
        sys_ = DrivenTMSystem(N, table.omega0, table.deltaE0, table.kappa, spec.lambda0, lam1,
                              drive.omega, drive.variant, table if lam1 else None)
        rec = propagate(sys_, prepare_initial_state(sys_, args.initial), T, out_dt=args.out_dt,
                        model=args.model)
    out.emit(_trajectory_rows(rec, args.model == "gp"), TRAJECTORY_COLUMNS,
             _meta(cfg, model=args.model, U0N=U0N, N=N, omega=drive.omega, lambda1=drive.lambda1,
                   variant=drive.variant.value))


def cmd_effective(args, cfg: Config, out: _Output) -> None:
    spec = cfg.potential
    amp = _amplitude(args, cfg)
    if amp.kind is not AmplitudeKind.COEFFICIENT:
        raise ConfigError("effective couplings use the amplitude rule; give --coefficient")
    orders = list(range(1, args.orders + 1))
    lam1_max = amp.value * max(orders)
    table = build_parameter_table(spec, spec.lambda0 - lam1_max, spec.lambda0 + lam1_max,
                                  model=Model.STANDARD, grid=cfg.eigen_grid)
    variants = [args.variant] if args.variant else [v.value for v in Variant]
    rows = effective_rows(spec, table, orders, amp.value, variants)
    cols = ("variant", "n", "omega", "lambda1", "omega_res", "omega_eff_bessel", "omega_eff_rwa",
            "phi_n", "width_est", "omega_eff_bessel_magnitude", "omega_eff_rwa_exact_bias", "b")
    out.emit(rows, cols, _meta(cfg, coefficient=amp.value))


def cmd_oracle(args, cfg: Config, out: _Output) -> None:
    from .exact_small import build_lattice, propagate_exact
    spec = cfg.potential
    dE0 = reference_deltaE0(spec)
    drive = _drive(args, cfg, dE0)
    drive.check(spec)
    U0N = args.U0N if args.U0N is not None else cfg.U0N
    box = args.box if args.box else cfg.grid.get("lattice_box", (-2.5, 2.5))
    grid = Grid(box[0], box[1], args.M if args.M is not None else cfg.grid.get("lattice_sites", 12))
    sys_ = build_lattice(grid, spec, U0N / args.N, args.N)
    rec = propagate_exact(sys_, drive if drive.lambda1 else None, args.T, out_dt=args.out_dt,
                          initial=args.initial)
    out.emit(_trajectory_rows(rec, False), TRAJECTORY_COLUMNS,
             _meta(cfg, model="exact-small", U0N=U0N, N=args.N, M=grid.n_points,
                   omega=drive.omega, lambda1=drive.lambda1, variant=drive.variant.value))


# -- parser ----------------------------------------------------------------------

def _drive_flags(p):
    p.add_argument("--omega", type=float, help="drive frequency in units of DeltaE0")
    p.add_argument("--lambda1", type=float, help="fixed drive amplitude")
    p.add_argument("--coefficient", type=float, help="a in lambda1 = a*DeltaE0/omega")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--T", type=float, default=100.0, help="final time / averaging window")
    p.add_argument("--out-dt", type=float, default=0.05)


def _global_flags(p, suppress: bool):
    # global flags are accepted before and after the subcommand; the copy on
    # the subparsers must not reset values given before it
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="TOML configuration file")
    p.add_argument("--out", default=d(None), help="output file (default: stdout)")
    p.add_argument("--workers", type=int, default=d(1))
    p.add_argument("--format", choices=("csv", "json"), default=d("csv"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    parser = argparse.ArgumentParser(prog="shapiro-bjj",
                                     description="Driven bosonic Josephson junction toolkit")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("calibrate", parents=[common], help="print the calibrated well family")

    p = sub.add_parser("static-curves", parents=[common], help="Omega, DeltaE, kappa versus lambda")
    p.add_argument("--lambda-min", type=float)
    p.add_argument("--lambda-max", type=float)
    p.add_argument("--points", type=int, default=111)
    p.add_argument("--U0N", type=float)
    p.add_argument("--N", type=int)

    p = sub.add_parser("scan", parents=[common], help="time-averaged imbalance versus omega")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--U0N", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--lambda1", type=float)
    p.add_argument("--coefficient", type=float)
    p.add_argument("--resonances", help="also write the extracted resonances here")

    p = sub.add_parser("trajectory", parents=[common], help="one driven trajectory")
    p.add_argument("--model", choices=("tm-standard", "tm-improved", "gp"), default="tm-improved")
    p.add_argument("--U0N", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--initial", choices=("ground", "all-left"), default="ground")
    _drive_flags(p)

    p = sub.add_parser("effective", parents=[common], help="effective couplings per resonance")
    p.add_argument("--orders", type=int, default=5)
    p.add_argument("--coefficient", type=float)
    p.add_argument("--variant", choices=[v.value for v in Variant])

    p = sub.add_parser("oracle", parents=[common], help="exact few-atom lattice dynamics")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--M", type=int, help="lattice sites")
    p.add_argument("--box", type=float, nargs=2)
    p.add_argument("--U0N", type=float)
    p.add_argument("--initial", choices=("coherent", "ground"), default="coherent")
    _drive_flags(p)
    return parser


COMMANDS = {
    "calibrate": cmd_calibrate,
    "static-curves": cmd_static_curves,
    "scan": cmd_scan,
    "trajectory": cmd_trajectory,
    "effective": cmd_effective,
    "oracle": cmd_oracle,
}

NUMERICAL_ERRORS = (CalibrationError, ConvergenceError, IntegratorError, HarmonicsError,
                    PreconditionError, ArithmeticError, np.linalg.LinAlgError)
INPUT_ERRORS = (ConfigError, DomainError, CapacityError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    try:
        cfg = load_config(args.config)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TwoModeValidityWarning)
            COMMANDS[args.command](args, cfg, _Output(args.out, args.format))
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
