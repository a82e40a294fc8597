"""TOML configuration for the command line tools.

Every section and key is optional; anything not listed below is rejected.

    [units]         length_um, energy_hz, time_ms        (reporting only)
    [potential]     lambda0, g, lambda, d, barrier        (tables replace the calibration)
                    deltaE0, omega0, bias_slope, lambda_c (targets of the default calibration)
    [drive]         omega (in units of DeltaE0), variant,
                    lambda1  or  amplitude_rule = "a*dE0/omega" with coefficient
    [interaction]   U0N, N
    [scan]          omega_grid | (omega_min, omega_max, points) | windows = "resonance"
                    with orders and window_points; T, model, initial, out_dt
    [grid]          x_min, x_max, n_points (eigensolver), gp_points, gp_box, gp_dt,
                    lattice_sites, lattice_box
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .potential import (
    CalibrationTargets,
    PotentialSpec,
    Units,
    Variant,
    calibrate_default,
)
from .scan import MODELS, AmplitudeKind, AmplitudeRule, ScanSpec, resonance_window_grid
from .spectral import Grid

AMPLITUDE_RULE = "a*dE0/omega"

_SCHEMA = {
    "units": {"length_um", "energy_hz", "time_ms"},
    "potential": {"lambda0", "g", "lambda", "d", "barrier", "deltaE0", "omega0", "bias_slope",
                  "lambda_c"},
    "drive": {"omega", "variant", "lambda1", "amplitude_rule", "coefficient"},
    "interaction": {"U0N", "N"},
    "scan": {"omega_grid", "omega_min", "omega_max", "points", "windows", "orders",
             "window_points", "T", "model", "initial", "out_dt"},
    "grid": {"x_min", "x_max", "n_points", "gp_points", "gp_box", "gp_dt", "lattice_sites",
             "lattice_box"},
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit code 2)."""


@dataclass(frozen=True)
class Config:
    potential: PotentialSpec
    units: Units = Units()
    omega: float = 1.0
    variant: Variant = Variant.FULL
    amplitude: AmplitudeRule = AmplitudeRule()
    U0N: float = 0.0
    N: int = 100
    scan: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    @property
    def eigen_grid(self) -> Grid:
        return _eigen_grid(self.grid)

    def scan_spec(self, **overrides) -> ScanSpec:
        s = self.scan
        kw = dict(omega_grid=_omega_grid(s), amplitude=self.amplitude, U0N=self.U0N, N=self.N,
                  T=s.get("T", 100.0), model=s.get("model", "tm-improved"), variant=self.variant,
                  initial=s.get("initial", "ground"), out_dt=s.get("out_dt", 0.05))
        for key in ("gp_points", "gp_dt", "lattice_sites"):
            if key in self.grid:
                kw[key] = self.grid[key]
        for key in ("gp_box", "lattice_box"):
            if key in self.grid:
                kw[key] = tuple(self.grid[key])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return ScanSpec(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _eigen_grid(g: dict) -> Grid:
    base = Grid()
    return Grid(float(g.get("x_min", base.x_min)), float(g.get("x_max", base.x_max)),
                int(g.get("n_points", base.n_points)))


def _omega_grid(s: dict) -> tuple:
    if "omega_grid" in s:
        return tuple(float(w) for w in s["omega_grid"])
    if s.get("windows") == "resonance":
        return resonance_window_grid(tuple(s.get("orders", (1, 2, 3, 4, 5))),
                                     int(s.get("window_points", 40)))
    if "windows" in s:
        raise ConfigError("scan.windows only accepts \"resonance\"")
    lo, hi, n = s.get("omega_min", 0.15), s.get("omega_max", 1.1), int(s.get("points", 200))
    if not 0 < lo < hi or n < 1:
        raise ConfigError("scan needs 0 < omega_min < omega_max and points >= 1")
    return tuple(float(w) for w in np.linspace(lo, hi, n))


def _check_keys(data: dict) -> None:
    for section, body in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(body) - _SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _potential(p: dict, grid: Grid) -> PotentialSpec:
    tables = [k for k in ("lambda", "d", "barrier") if k in p]
    targets = [k for k in ("deltaE0", "omega0", "bias_slope", "lambda_c") if k in p]
    if tables and targets:
        raise ConfigError("give either calibration tables or calibration targets, not both")
    try:
        if tables:
            if len(tables) != 3:
                raise ConfigError("tables need all of lambda, d and barrier")
            base = CalibrationTargets()
            return PotentialSpec(float(p.get("lambda0", base.lambda0)), float(p.get("g", base.g)),
                                 tuple(map(float, p["lambda"])), tuple(map(float, p["d"])),
                                 tuple(map(float, p["barrier"])))
        kw = {k: float(p[k]) for k in ("lambda0", "g", *targets) if k in p}
        default_grid = grid == Grid()
        return calibrate_default(CalibrationTargets(**kw), None if default_grid else grid)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[potential]: {exc}") from exc


def _amplitude(d: dict) -> AmplitudeRule:
    if "lambda1" in d and ("amplitude_rule" in d or "coefficient" in d):
        raise ConfigError("give either drive.lambda1 or an amplitude rule, not both")
    if "lambda1" in d:
        return AmplitudeRule(AmplitudeKind.FIXED, float(d["lambda1"]))
    rule = d.get("amplitude_rule", AMPLITUDE_RULE)
    if rule.replace(" ", "") != AMPLITUDE_RULE:
        raise ConfigError(f"amplitude_rule must be \"{AMPLITUDE_RULE}\"")
    return AmplitudeRule(AmplitudeKind.COEFFICIENT, float(d.get("coefficient", 0.03)))


def config_from_dict(data: dict) -> Config:
    _check_keys(data)
    try:
        units = Units(**{k: float(v) for k, v in data.get("units", {}).items()})
        grid = dict(data.get("grid", {}))
        eig = _eigen_grid(grid)
        potential = _potential(data.get("potential", {}), eig)
        d = data.get("drive", {})
        inter = data.get("interaction", {})
        scan = dict(data.get("scan", {}))
        if "model" in scan and scan["model"] not in MODELS:
            raise ConfigError(f"scan.model must be one of {MODELS}")
        cfg = Config(potential, units, float(d.get("omega", 1.0)),
                     Variant.parse(d.get("variant", "full")), _amplitude(d),
                     float(inter.get("U0N", 0.0)), int(inter.get("N", 100)), scan, grid)
    except ConfigError:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.omega <= 0 or cfg.N < 1 or cfg.U0N < 0:
        raise ConfigError("need drive.omega > 0, interaction.N >= 1 and interaction.U0N >= 0")
    return cfg


def load_config(path=None) -> Config:
    """Read a TOML file; ``None`` gives the defaults (calibrated operating point)."""
    if path is None:
        return config_from_dict({})
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return config_from_dict(data)
