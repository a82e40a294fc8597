"""Frequency, amplitude and interaction scans of the time-averaged imbalance.

A scan point is one drive frequency omega (given as omega/DeltaE0), one
amplitude lambda1 and one model.  Each point is propagated to T and
reduced to <J_z>_T/N.  Points are independent; they run in a process pool
and are collected in input order, so the output does not depend on
scheduling.

DeltaE0 on the frequency axis is always the single-particle bias at
lambda0, so curves of different models and interaction strengths share one
axis.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.signal import find_peaks, peak_widths

from . import __version__
from .effective import BiasLinearityWarning
from .potential import DomainError, DriveSpec, PotentialSpec, Variant
from .spectral import ConvergenceError, Grid, Model, TwoModeValidityWarning, build_parameter_table, parameters_at
from .trajectory import IntegratorError, time_averaged_imbalance

MODELS = ("tm-standard", "tm-improved", "gp", "exact-small")
FLOAT_FORMAT = "{:.12g}"

# errors that cost a point but not the scan
POINT_ERRORS = (DomainError, IntegratorError, ConvergenceError, ArithmeticError, ValueError)


class AmplitudeKind(str, enum.Enum):
    FIXED = "fixed"
    COEFFICIENT = "coefficient"


@dataclass(frozen=True)
class AmplitudeRule:
    """Either a fixed lambda1 or lambda1 = a * DeltaE0 / omega."""

    kind: AmplitudeKind = AmplitudeKind.COEFFICIENT
    value: float = 0.03

    def __post_init__(self):
        object.__setattr__(self, "kind", AmplitudeKind(self.kind))
        if self.value < 0:
            raise ValueError("drive amplitude must be non-negative")

    def lambda1(self, omega_ratio: float) -> float:
        # with omega = r * DeltaE0 the rule a * DeltaE0 / omega is a / r
        return self.value if self.kind is AmplitudeKind.FIXED else self.value / omega_ratio


@dataclass(frozen=True)
class ScanSpec:
    omega_grid: tuple
    amplitude: AmplitudeRule = AmplitudeRule()
    U0N: float = 0.0
    N: int = 100
    T: float = 100.0
    model: str = "tm-improved"
    variant: Variant = Variant.FULL
    initial: str = "ground"
    out_dt: float = 0.05
    tm_dt: float | None = None
    gp_points: int = 256
    gp_box: tuple = (-4.0, 4.0)
    gp_dt: float = 0.005
    lattice_sites: int = 12
    lattice_box: tuple = (-2.5, 2.5)

    def __post_init__(self):
        grid = tuple(float(w) for w in np.atleast_1d(self.omega_grid))
        if not grid or any(not w > 0 for w in grid):
            raise ValueError("omega grid needs positive entries")
        object.__setattr__(self, "omega_grid", grid)
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if isinstance(self.amplitude, dict):
            object.__setattr__(self, "amplitude", AmplitudeRule(**self.amplitude))
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.T <= 0 or self.N < 1 or self.U0N < 0:
            raise ValueError("need T > 0, N >= 1 and U0N >= 0")
        object.__setattr__(self, "gp_box", tuple(float(b) for b in self.gp_box))
        object.__setattr__(self, "lattice_box", tuple(float(b) for b in self.lattice_box))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["amplitude"] = {"kind": self.amplitude.kind.value, "value": self.amplitude.value}
        d["variant"] = self.variant.value
        d["omega_grid"] = list(self.omega_grid)
        return d


@dataclass(frozen=True, eq=False)
class ResonanceScan:
    records: list
    metadata: dict = field(default_factory=dict)

    COLUMNS = ("omega_over_deltaE0", "omega", "lambda1", "jz_timeavg_over_N", "model", "variant", "status")

    @property
    def omega_ratio(self) -> np.ndarray:
        return np.array([r["omega_over_deltaE0"] for r in self.records])

    @property
    def values(self) -> np.ndarray:
        return np.array([r["jz_timeavg_over_N"] for r in self.records])

    def write(self, path, fmt: str = "csv") -> None:
        if fmt == "csv":
            write_csv(path, self.records, self.COLUMNS)
        elif fmt == "json":
            write_json(path, {"metadata": self.metadata, "records": self.records})
        else:
            raise ValueError(f"unknown format {fmt!r}")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FORMAT.format(float(v))
    return v


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(FLOAT_FORMAT.format(v)) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, enum.Enum):
        return v.value
    return v


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
        fh.write("\n")


def reference_deltaE0(calibration: PotentialSpec) -> float:
    """Single-particle DeltaE at lambda0: the unit of the frequency axis."""
    return float(parameters_at(Grid(), calibration, calibration.lambda0).DeltaE)


def resonance_window_grid(orders=(1, 2, 3, 4, 5), points: int = 40, half_width=None) -> tuple:
    """omega/DeltaE0 values clustered around 1/n.

    The default half-width 0.05/n keeps roughly ten points inside each
    non-interacting dip at T = 100 and a = 0.03.
    """
    half_width = half_width or (lambda n: 0.05 / n)
    out = []
    for n in orders:
        c, w = 1.0 / n, half_width(n)
        out.extend(np.linspace(c - w, c + w, points))
    return tuple(sorted(set(float(v) for v in out)))


# -- point evaluation ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Context:
    """Everything a worker needs; built once in the parent."""

    scan: ScanSpec
    calibration: PotentialSpec
    deltaE0: float
    table: object = None
    gp_field: object = None


def _prepare(scan: ScanSpec, calibration: PotentialSpec) -> _Context:
    dE0 = reference_deltaE0(calibration)
    lam1_max = max(scan.amplitude.lambda1(r) for r in scan.omega_grid)
    lo, hi = calibration.lambda_domain
    # the table covers the largest admissible amplitude; larger points fail individually
    lam1_max = min(lam1_max, calibration.lambda0 - lo, hi - calibration.lambda0)
    table = None
    gp_field = None
    if scan.model.startswith("tm"):
        model = Model.IMPROVED if scan.model == "tm-improved" else Model.STANDARD
        N = _tm_atoms(scan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TwoModeValidityWarning)
            table = build_parameter_table(calibration, calibration.lambda0 - lam1_max,
                                          calibration.lambda0 + lam1_max, model=model,
                                          U0N=scan.U0N, N=N)
    elif scan.model == "gp":
        from .gpdynamics import gp_ground_state_tilted
        grid = Grid(scan.gp_box[0], scan.gp_box[1], scan.gp_points)
        gp_field = gp_ground_state_tilted(grid, calibration, U0N=scan.U0N)
    return _Context(scan, calibration, dE0, table, gp_field)


def _tm_atoms(scan: ScanSpec) -> int:
    # without interaction <J_z>/N does not depend on N
    return 1 if scan.U0N == 0 else scan.N


def _evaluate(ctx: _Context, ratio: float) -> float:
    scan, spec = ctx.scan, ctx.calibration
    omega = ratio * ctx.deltaE0
    drive = DriveSpec(scan.amplitude.lambda1(ratio), omega, scan.variant)
    drive.check(spec)
    if scan.model.startswith("tm"):
        from .twomode import DrivenTMSystem, propagate, prepare_initial_state
        t = ctx.table
        sys = DrivenTMSystem(_tm_atoms(scan), t.omega0, t.deltaE0, t.kappa, spec.lambda0,
                             drive.lambda1, drive.omega, drive.variant, t if drive.lambda1 else None)
        rec = propagate(sys, prepare_initial_state(sys, scan.initial), scan.T, dt=scan.tm_dt,
                        out_dt=scan.out_dt)
    elif scan.model == "gp":
        from .gpdynamics import propagate_gp
        rec = propagate_gp(ctx.gp_field, drive, spec, scan.T, dt=scan.gp_dt, out_dt=scan.out_dt)
    else:
        from .exact_small import build_lattice, propagate_exact
        grid = Grid(scan.lattice_box[0], scan.lattice_box[1], scan.lattice_sites)
        sys = _lattice(grid, spec, scan.U0N / scan.N, scan.N)
        initial = "coherent" if scan.initial == "ground" else scan.initial
        rec = propagate_exact(sys, drive, scan.T, out_dt=scan.out_dt, initial=initial)
    value = time_averaged_imbalance(rec, scan.T)
    if not -0.5 - 1e-9 <= value <= 0.5 + 1e-9:
        raise ArithmeticError(f"time average {value} outside [-1/2, 1/2]")
    return value


@lru_cache(maxsize=4)
def _lattice(grid, spec, U0, N):
    from .exact_small import build_lattice
    return build_lattice(grid, spec, U0, N)


def _point(args):
    ctx, ratio = args
    scan = ctx.scan
    lam1 = scan.amplitude.lambda1(ratio)
    row = {"omega_over_deltaE0": ratio, "omega": ratio * ctx.deltaE0, "lambda1": lam1,
           "model": scan.model, "variant": scan.variant.value}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", (TwoModeValidityWarning, BiasLinearityWarning))
        try:
            row["jz_timeavg_over_N"] = _evaluate(ctx, ratio)
            row["status"] = "ok"
        except POINT_ERRORS as exc:
            row["jz_timeavg_over_N"] = math.nan
            row["status"] = f"missing: {type(exc).__name__}: {exc}"
    return row


def run_scan(scan: ScanSpec, calibration: PotentialSpec, workers: int = 1) -> ResonanceScan:
    """Evaluate every omega of the grid; failing points are kept as missing.

    Only a failure while preparing shared inputs (parameter table, GP
    ground state) aborts the whole scan.
    """
    ctx = _prepare(scan, calibration)
    jobs = [(ctx, r) for r in scan.omega_grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_point, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = [_point(j) for j in jobs]
    meta = {"scan": scan.to_dict(), "calibration": calibration.fingerprint(),
            "deltaE0": ctx.deltaE0, "version": __version__}
    return ResonanceScan(records, meta)


def amplitude_sensitivity(base: ScanSpec, a_values, calibration: PotentialSpec,
                          workers: int = 1) -> list:
    """One scan per amplitude coefficient a (lambda1 = a * DeltaE0 / omega)."""
    return [run_scan(replace(base, amplitude=AmplitudeRule(AmplitudeKind.COEFFICIENT, float(a))),
                     calibration, workers) for a in a_values]


# -- resonance extraction ----------------------------------------------------

@dataclass(frozen=True)
class Resonance:
    n: int
    omega_min: float
    depth: float
    fwhm: float
    value_min: float
    resolved: bool

    def as_tuple(self):
        return (self.n, self.omega_min, self.depth, self.fwhm)


def find_resonances(scan: ResonanceScan | tuple, min_depth: float = 0.01,
                    relative_depth: float = 0.1, assign: str = "auto",
                    max_order: int = 8) -> list:
    """Dips of <J_z>_T versus omega/DeltaE0, labelled by resonance order.

    The depth of a dip is its prominence (drop below the lower of the two
    neighbouring maxima), the width is measured at half that depth with
    linear interpolation, and the position comes from a parabola through
    the three lowest points.  Dips shallower than ``min_depth`` or than
    ``relative_depth`` times the deepest one are ignored.

    ``assign="nearest"`` labels a dip at omega/DeltaE0 = r with n =
    round(1/r).  ``assign="ordered"`` takes the highest-frequency dip as
    n = 1 and labels the others by the ratio of their frequency to it,
    which still works when interactions shift all positions.  ``"auto"``
    picks ``nearest`` for U0N = 0 scans and ``ordered`` otherwise.  When two
    dips get the same label the deeper one wins.
    """
    if isinstance(scan, ResonanceScan):
        x, y = scan.omega_ratio, scan.values
        U0N = scan.metadata.get("scan", {}).get("U0N", 0.0)
    else:
        x, y = (np.asarray(a, dtype=float) for a in scan)
        U0N = 0.0
    ok = np.isfinite(y)
    x, y = x[ok], y[ok]
    order = np.argsort(x)
    x, y = x[order], y[order]
    if x.size < 3:
        return []
    if assign == "auto":
        assign = "nearest" if U0N == 0 else "ordered"
    if assign not in ("nearest", "ordered"):
        raise ValueError(f"unknown assignment {assign!r}")

    peaks, props = find_peaks(-y, prominence=min_depth)
    if peaks.size == 0:
        return []
    prom = props["prominences"]
    keep = prom >= relative_depth * prom.max()
    peaks, prom = peaks[keep], prom[keep]
    data = (prom, props["left_bases"][keep], props["right_bases"][keep])
    _, _, left_ips, right_ips = peak_widths(-y, peaks, rel_height=0.5, prominence_data=data)
    idx = np.arange(x.size, dtype=float)
    found = []
    for p, d, li, ri in zip(peaks, prom, left_ips, right_ips):
        xl, xr = np.interp(li, idx, x), np.interp(ri, idx, x)
        xm, ym = _parabola_minimum(x, y, p)
        inside = int(np.count_nonzero((x >= xl) & (x <= xr)))
        found.append((xm, float(d), float(xr - xl), ym, inside >= 5))
    if not found:
        return []

    labelled = {}
    ref = max(f[0] for f in found)
    for xm, d, w, ym, res in found:
        n = int(round(1.0 / xm)) if assign == "nearest" else int(round(ref / xm))
        if not 1 <= n <= max_order:
            continue
        if n not in labelled or d > labelled[n].depth:
            labelled[n] = Resonance(n, xm, d, w, ym, res)
    return [labelled[n] for n in sorted(labelled)]


def _parabola_minimum(x, y, i):
    if i == 0 or i == x.size - 1:
        return float(x[i]), float(y[i])
    xs, ys = x[i - 1:i + 2], y[i - 1:i + 2]
    c2, c1, c0 = np.polyfit(xs - xs[1], ys, 2)
    if c2 <= 0:
        return float(x[i]), float(y[i])
    dx = float(np.clip(-c1 / (2 * c2), xs[0] - xs[1], xs[2] - xs[1]))
    return float(xs[1] + dx), float(c0 + c1 * dx + c2 * dx * dx)
