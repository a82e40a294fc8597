"""Unit system, calibrated double-well family and the sinusoidal drive.

All quantities are dimensionless: hbar = m = 1, lengths in units of the
harmonic length a_ho = 1 um and energies in units of hbar*omega_ho.

The double well is the symmetric quartic

    V_lam(x) = c2(lam) * (x**2 - (d(lam)/2)**2)**2,   c2 = barrier / (d/2)**4

so that the minima sit at +-d/2 and the barrier above the minima is
``barrier(lam)``.  A linear gradient ``g*x`` tilts it; for g > 0 the left
well (x < 0) is the lower one.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator


class DomainError(ValueError):
    """A control value or drive excursion left the tabulated lambda range."""


class CalibrationError(RuntimeError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class Units:
    length_um: float = 1.0
    energy_hz: float = 116.26
    time_ms: float = 1.37

    def __post_init__(self):
        # hbar = 1: one time unit times one (angular) energy unit is one
        product = self.time_ms * 1e-3 * 2 * math.pi * self.energy_hz
        if abs(product - 1.0) > 5e-3:
            raise ValueError(f"time and energy units inconsistent with hbar=1 ({product:.4f})")

    def hz(self, energy: float) -> float:
        return energy * self.energy_hz

    def ms(self, time: float) -> float:
        return time * self.time_ms


class Variant(str, enum.Enum):
    FULL = "full"
    CONSTANT_OMEGA = "constant-omega"
    CONSTANT_DELTAE = "constant-deltaE"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "full": cls.FULL,
            "constant-omega": cls.CONSTANT_OMEGA,
            "constantomega": cls.CONSTANT_OMEGA,
            "constant-deltae": cls.CONSTANT_DELTAE,
            "constantdeltae": cls.CONSTANT_DELTAE,
        }
        if key not in aliases:
            raise ValueError(f"unknown drive variant {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class PotentialSpec:
    """Calibrated well family plus operating point.

    ``table_lambda``, ``table_d`` and ``table_barrier`` are knots of monotone
    cubic (PCHIP) interpolants; the tabulated lambda range is the domain.
    """

    lambda0: float
    g: float
    table_lambda: tuple
    table_d: tuple
    table_barrier: tuple
    _d: PchipInterpolator = field(init=False, repr=False, compare=False)
    _barrier: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lam = np.asarray(self.table_lambda, dtype=float)
        d = np.asarray(self.table_d, dtype=float)
        barrier = np.asarray(self.table_barrier, dtype=float)
        if not (lam.shape == d.shape == barrier.shape) or lam.size < 2:
            raise ValueError("lambda, d and barrier tables must have equal length >= 2")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("lambda table must be strictly increasing")
        if np.any(d <= 0) or np.any(barrier <= 0):
            raise ValueError("d and barrier must be positive on the whole table")
        if np.any(np.diff(d) <= 0) or np.any(np.diff(barrier) <= 0):
            raise ValueError("d and barrier must be strictly increasing in lambda")
        object.__setattr__(self, "table_lambda", tuple(float(v) for v in lam))
        object.__setattr__(self, "table_d", tuple(float(v) for v in d))
        object.__setattr__(self, "table_barrier", tuple(float(v) for v in barrier))
        object.__setattr__(self, "_d", PchipInterpolator(lam, d, extrapolate=False))
        object.__setattr__(self, "_barrier", PchipInterpolator(lam, barrier, extrapolate=False))
        self.check_lambda(self.lambda0)

    @property
    def lambda_domain(self) -> tuple[float, float]:
        return self.table_lambda[0], self.table_lambda[-1]

    def check_lambda(self, lam) -> None:
        lo, hi = self.lambda_domain
        arr = np.asarray(lam, dtype=float)
        # a few ulps of slack so lambda0 +- lambda1 may touch the boundary
        tol = 1e-12 * max(1.0, abs(hi))
        if np.any(arr < lo - tol) or np.any(arr > hi + tol) or np.any(~np.isfinite(arr)):
            raise DomainError(f"lambda={lam} outside calibrated domain [{lo}, {hi}]")

    def d(self, lam):
        self.check_lambda(lam)
        lo, hi = self.lambda_domain
        return self._d(np.clip(lam, lo, hi))

    def barrier(self, lam):
        self.check_lambda(lam)
        lo, hi = self.lambda_domain
        return self._barrier(np.clip(lam, lo, hi))

    def quartic_coefficients(self, lam) -> tuple[float, float]:
        """Return (c2, a) with V_lam(x) = c2*(x^2 - a^2)^2."""
        a = 0.5 * float(self.d(lam))
        return float(self.barrier(lam)) / a**4, a

    def with_g(self, g: float) -> "PotentialSpec":
        return replace(self, g=float(g))

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "g": self.g,
            "lambda": list(self.table_lambda),
            "d": list(self.table_d),
            "barrier": list(self.table_barrier),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class DriveSpec:
    lambda1: float
    omega: float
    variant: Variant = Variant.FULL

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not self.omega > 0:
            raise ValueError("drive frequency must be positive")
        if self.lambda1 < 0:
            raise ValueError("drive amplitude must be non-negative")

    @classmethod
    def from_rule(cls, coefficient: float, omega: float, deltaE0: float,
                  variant=Variant.FULL) -> "DriveSpec":
        """Amplitude rule lambda1 = a * dE0 / omega."""
        return cls(lambda1=coefficient * deltaE0 / omega, omega=omega, variant=variant)

    def check(self, spec: PotentialSpec) -> None:
        spec.check_lambda([spec.lambda0 - self.lambda1, spec.lambda0 + self.lambda1])


def evaluate_potential(spec: PotentialSpec, lam: float, x, g: float | None = None):
    """V_lam(x) + g*x.  ``g`` defaults to the calibrated gradient."""
    c2, a = spec.quartic_coefficients(lam)
    x = np.asarray(x, dtype=float)
    tilt = spec.g if g is None else g
    return c2 * (x * x - a * a) ** 2 + tilt * x


def potential_extrema(spec: PotentialSpec, lam: float, g: float | None = None) -> np.ndarray:
    """Real stationary points of the tilted quartic, sorted.

    Three points (left minimum, barrier top, right minimum) while the wells
    are not merged; a single point otherwise.
    """
    c2, a = spec.quartic_coefficients(lam)
    tilt = spec.g if g is None else g
    # V'(x) = 4 c2 x^3 - 4 c2 a^2 x + g
    roots = np.roots([4 * c2, 0.0, -4 * c2 * a * a, tilt])
    real = np.sort(roots[np.abs(roots.imag) < 1e-9 * max(1.0, a)].real)
    return real


def lambda_schedule(drive: DriveSpec, spec: PotentialSpec, t):
    """lambda(t) = lambda0 + lambda1 sin(omega t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return spec.lambda0 + drive.lambda1 * np.sin(drive.omega * t)


# -- calibration ---------------------------------------------------------

CAL_LAMBDA0 = 0.675
CAL_G = 1.5042
CAL_DELTAE0 = 280.0 / 116.26
DEFAULT_OMEGA0 = 0.15
# b ~ n/10 at lambda1 = 0.03 n  ->  d(DeltaE)/d(lambda) = 10/3
DEFAULT_BIAS_SLOPE = 10.0 / 3.0
DEFAULT_KNOTS = tuple(round(0.2 + 0.025 * i, 10) for i in range(45))  # 0.2 .. 1.3


@dataclass(frozen=True)
class CalibrationTargets:
    """Operating point and shape of the calibrated well family.

    The barrier grows as ((lam - lambda_c)/(lambda0 - lambda_c))^2.  With a
    finite gradient the separation d(lam) is solved knot by knot so that the
    bias is exactly linear, DeltaE = deltaE0 + bias_slope*(lam - lambda0).
    """

    lambda0: float = CAL_LAMBDA0
    g: float = CAL_G
    deltaE0: float = CAL_DELTAE0
    omega0: float = DEFAULT_OMEGA0
    bias_slope: float = DEFAULT_BIAS_SLOPE
    lambda_c: float = -1.0
    knots: tuple = DEFAULT_KNOTS


def pitchfork_family(lam, lambda0: float, d0: float, barrier0: float, lambda_c: float):
    """Normal form of a pitchfork splitting: d ~ sqrt(lam - lc), barrier ~ (lam - lc)^2."""
    s = (np.asarray(lam, dtype=float) - lambda_c) / (lambda0 - lambda_c)
    if np.any(s <= 0):
        raise DomainError("family evaluated at or below its splitting point")
    return d0 * np.sqrt(s), barrier0 * s**2


def calibrate_default(targets: CalibrationTargets | None = None, grid=None) -> PotentialSpec:
    """Fit a well family whose two-mode parameters hit the requested targets.

    At lambda0 the separation and barrier are solved so that Omega and
    DeltaE match; away from lambda0 the barrier follows the quadratic law
    and d(lam) is solved for the linear bias (for g = 0, d follows the
    square-root law instead).  Raises :class:`CalibrationError` with the
    residuals if any solve fails.
    """
    targets = targets or CalibrationTargets()
    return _calibrate_cached(targets, grid)


@lru_cache(maxsize=32)
def _calibrate_cached(targets: CalibrationTargets, grid) -> PotentialSpec:
    from scipy.optimize import brentq, least_squares

    from .spectral import Grid, symmetric_mode_parameters

    grid = grid or Grid()
    knots = np.asarray(targets.knots, dtype=float)
    if not np.any(np.isclose(knots, targets.lambda0, rtol=0, atol=1e-12)):
        raise CalibrationError("lambda0 must be one of the table knots")
    if targets.deltaE0 < 0 or targets.omega0 <= 0:
        raise CalibrationError("targets need deltaE0 >= 0 and omega0 > 0")
    if targets.g == 0 and targets.deltaE0 != 0:
        raise CalibrationError("a finite bias needs a finite gradient")
    if targets.lambda_c >= knots.min():
        raise CalibrationError("lambda_c must lie below the table")
    biased = targets.g != 0

    def residual(p):
        d0, barrier0 = math.exp(p[0]), math.exp(p[1])
        omega, xsep = symmetric_mode_parameters(grid, d0, barrier0)
        res = [math.log(omega / targets.omega0)]
        if biased:
            res.append((targets.g * xsep - targets.deltaE0) / targets.deltaE0)
        return np.asarray(res)

    if biased:
        # first-order guess DeltaE ~ g*d
        sol = least_squares(residual, [math.log(targets.deltaE0 / targets.g * 1.1), math.log(12.0)],
                            xtol=1e-14, ftol=1e-14, gtol=1e-14)
        d0, barrier0 = math.exp(sol.x[0]), math.exp(sol.x[1])
    else:
        d0 = 1.6
        sol = least_squares(lambda q: residual([math.log(d0), q[0]]), [math.log(12.0)],
                            xtol=1e-14, ftol=1e-14, gtol=1e-14)
        barrier0 = math.exp(sol.x[0])
    res0 = residual([math.log(d0), math.log(barrier0)])
    if not sol.success or np.max(np.abs(res0)) > 1e-8:
        raise CalibrationError("calibration at lambda0 did not converge", residuals=res0.tolist())

    scale = (knots - targets.lambda_c) / (targets.lambda0 - targets.lambda_c)
    barrier = barrier0 * scale**2
    if not biased:
        d, _ = pitchfork_family(knots, targets.lambda0, d0, barrier0, targets.lambda_c)
        return PotentialSpec(targets.lambda0, targets.g, tuple(knots), tuple(d), tuple(barrier))

    d = np.empty_like(knots)
    bad = []
    for i, (lam, B) in enumerate(zip(knots, barrier)):
        if abs(lam - targets.lambda0) < 1e-12:
            d[i] = d0
            continue
        goal = targets.deltaE0 + targets.bias_slope * (lam - targets.lambda0)

        def f(dd):
            return targets.g * symmetric_mode_parameters(grid, dd, B)[1] - goal

        # keep both wells well inside the box
        lo, hi = 1e-2, min(3.0 * max(d0, goal / targets.g), 0.6 * (grid.x_max - grid.x_min))
        try:
            d[i] = brentq(f, lo, hi, xtol=1e-13, rtol=1e-13)
        except ValueError:
            bad.append(float(lam))
            d[i] = np.nan
    if bad or goal <= 0:
        raise CalibrationError(f"no separation reproduces the linear bias at lambda={bad}",
                               residuals=bad)
    try:
        return PotentialSpec(targets.lambda0, targets.g, tuple(knots), tuple(d), tuple(barrier))
    except ValueError as exc:
        raise CalibrationError(f"calibrated tables invalid: {exc}") from exc


def default_spec() -> PotentialSpec:
    """Calibrated operating point lambda0=0.675, g=1.5042 (cached)."""
    return calibrate_default(CalibrationTargets())


def spec_from_tables(lambda0: float, g: float, lam: Sequence[float], d: Sequence[float],
                     barrier: Sequence[float]) -> PotentialSpec:
    return PotentialSpec(float(lambda0), float(g), tuple(lam), tuple(d), tuple(barrier))
