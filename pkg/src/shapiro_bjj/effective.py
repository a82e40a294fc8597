"""Harmonic content of the drive and rotating-wave effective couplings.

Near the n-th resonance (n*omega = DeltaE) the driven two-mode model reduces
to a static one with coupling

    Omega_n^eff = | < Omega(t) exp(i[n omega t + theta(t)]) >_period |,

where theta(t) = int_0^t (DeltaE(t') - <DeltaE>) dt' is the bias phase
(for DeltaE = DeltaE0 + b sin(omega t) it is -(b/omega) cos(omega t) up to a
constant).  Writing Omega(t) = sum_m C_m exp(i m omega t) and expanding the
phase factor in Bessel functions gives the closed form

    sum_m C_m (-i)^(n+m) J_{n+m}(b/omega).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import jv

from .potential import DriveSpec, PotentialSpec, Variant

MAX_HARMONICS = 32
RECONSTRUCTION_TOL = 1e-6
LINEARITY_TOL = 0.02


class HarmonicsError(RuntimeError):
    pass


class BiasLinearityWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class DriveHarmonics:
    """Fourier content of one drive period.

    ``coefficients[m]`` is C_m (m = 0..M) with Omega(t) = C_0 + 2 Re sum C_m
    e^{i m omega t}; ``Omega1`` = 2 C_m are the complex harmonic amplitudes
    so |Omega1[m-1]| is the real amplitude of the m-th harmonic.  ``b`` is
    the (non-negative) amplitude of the bias fundamental; the time origin is
    shifted by half a period if needed so that the bias goes as +b sin.
    """

    Omega0: float
    coefficients: np.ndarray
    b: float
    DeltaE0: float
    DeltaE_mean: float
    omega: float
    bias_nonlinearity: float = 0.0

    @property
    def M(self) -> int:
        return self.coefficients.size - 1

    @property
    def Omega1(self) -> np.ndarray:
        return 2.0 * self.coefficients[1:]

    def omega_of_t(self, t):
        t = np.asarray(t, dtype=float)
        m = np.arange(1, self.M + 1)
        osc = np.exp(1j * self.omega * np.multiply.outer(t, m)) @ self.coefficients[1:] if self.M else 0.0
        return self.coefficients[0].real + 2.0 * np.real(osc)


@dataclass(frozen=True)
class ResonancePrediction:
    n: int
    omega_res: float
    omega_eff: float
    phi_n: float
    width_est: float
    trivial: bool = False


def _period_samples(omega: float, K: int):
    return 2 * math.pi / omega * np.arange(K) / K


def decompose_drive(table, drive: DriveSpec, spec: PotentialSpec, samples: int = 256) -> DriveHarmonics:
    """Discrete Fourier analysis of Omega(lambda(t)) and DeltaE(lambda(t)).

    ``table`` is anything with ``omega(lam)`` and ``deltaE(lam)`` (a
    :class:`~shapiro_bjj.spectral.ParameterTable`).  Honors the drive
    variant: constant Omega drops the harmonics, constant DeltaE sets b=0.
    """
    drive.check(spec)
    t = _period_samples(drive.omega, samples)
    lam = spec.lambda0 + drive.lambda1 * np.sin(drive.omega * t)
    dE_static = float(table.deltaE(spec.lambda0))
    om_static = float(table.omega(spec.lambda0))
    if drive.variant is Variant.CONSTANT_OMEGA or drive.lambda1 == 0:
        om = np.full(samples, om_static)
    else:
        om = np.asarray(table.omega(lam), dtype=float)
    if drive.variant is Variant.CONSTANT_DELTAE or drive.lambda1 == 0:
        dE = np.full(samples, dE_static)
    else:
        dE = np.asarray(table.deltaE(lam), dtype=float)

    C = np.fft.rfft(om) / samples
    D = np.fft.rfft(dE) / samples
    scale = float(np.max(np.abs(om)))
    M = 0
    for M in range(0, MAX_HARMONICS + 1):
        recon = _reconstruct(C[: M + 1], drive.omega, t)
        if np.max(np.abs(recon - om)) <= RECONSTRUCTION_TOL * scale:
            break
    else:
        raise HarmonicsError(f"Omega(t) needs more than {MAX_HARMONICS} harmonics")
    coef = C[: M + 1].copy()
    coef[np.abs(coef) < 1e-12 * abs(coef[0])] = 0.0
    coef[0] = coef[0].real

    # the sinusoidal control makes the bias fundamental a pure sine
    b_signed = -2.0 * float(D[1].imag) if D.size > 1 else 0.0
    residual = dE - D[0].real - b_signed * np.sin(drive.omega * t)
    b = abs(b_signed)
    nonlin = float(np.max(np.abs(residual)) / b) if b > 0 else 0.0
    if b_signed < 0:
        coef = coef * (-1.0) ** np.arange(coef.size)
    if nonlin > LINEARITY_TOL:
        warnings.warn(f"bias oscillation deviates from a pure sine by {100 * nonlin:.1f}%",
                      BiasLinearityWarning, stacklevel=2)
    return DriveHarmonics(float(coef[0].real), coef, b, dE_static, float(D[0].real), drive.omega, nonlin)


def _reconstruct(C, omega, t):
    out = np.full(t.shape, C[0].real)
    for m in range(1, C.size):
        out += 2.0 * np.real(C[m] * np.exp(1j * m * omega * t))
    return out


def _full_coefficients(h: DriveHarmonics):
    """C_m for m = -M..M as a dict."""
    out = {0: complex(h.coefficients[0])}
    for m in range(1, h.M + 1):
        out[m] = complex(h.coefficients[m])
        out[-m] = complex(np.conj(h.coefficients[m]))
    return out


def printed_form_coupling(h: DriveHarmonics, n: int, omega: float) -> float:
    """Magnitude-only evaluation with no interference between harmonics.

    Harmonic m enters as |C_m| J_{n-m}(b/omega), where C_m is the
    coefficient of exp(i m omega t) (half the real amplitude), and only the
    odd harmonics interfere with the static term.
    """
    z = h.b / omega
    A = lambda l: jv(l, z)  # noqa: E731
    mags = np.abs(h.coefficients[1:])
    s = (h.Omega0 * A(n)) ** 2
    s += sum((mags[m - 1] * A(n - m)) ** 2 for m in range(1, h.M + 1))
    cross = sum((-1) ** k * mags[2 * k] * A(n - 2 * k - 1) for k in range((h.M + 1) // 2))
    s += 2.0 * h.Omega0 * A(n) * cross
    return math.sqrt(max(s, 0.0))


def bessel_effective_coupling(h: DriveHarmonics, n: int, omega: float, form: str = "phase-aware") -> ResonancePrediction:
    """Closed-form Omega_n^eff.

    ``form="phase-aware"`` sums C_m (-i)^(n+m) J_{n+m}(b/omega) over all
    harmonics with their phases; ``form="printed"`` combines magnitudes
    only (see :func:`printed_form_coupling`).
    """
    if n < 0:
        raise ValueError("resonance order must be non-negative")
    z = h.b / omega
    total = 0j
    for m, c in _full_coefficients(h).items():
        if c != 0:
            total += c * (-1j) ** ((n + m) % 4) * jv(n + m, z)
    if form == "phase-aware":
        eff = abs(total)
    elif form == "printed":
        eff = printed_form_coupling(h, n, omega)
    else:
        raise ValueError(f"unknown form {form!r}")
    trivial = n == 0 and h.DeltaE_mean != 0
    omega_res = h.DeltaE_mean / n if n else 0.0
    return ResonancePrediction(n, omega_res, eff, float(np.angle(total)) if total else 0.0, eff, trivial)


def rwa_effective_coupling(h: DriveHarmonics, n: int, omega: float, full_tables=None,
                           bias_phase: str = "fundamental", samples: int = 512,
                           tol: float = 1e-10) -> ResonancePrediction:
    """Numerical period average of Omega(t) exp(i[n omega t + theta(t)]).

    ``full_tables=(omega_fn, deltaE_fn)`` (functions of t) supplies the
    untruncated Omega(t).  The bias phase is -(b/omega) cos(omega t) by
    default; ``bias_phase="exact"`` integrates the tabulated DeltaE(t)
    instead, which also picks up the curvature of DeltaE(lambda).  Periodic
    trapezoid quadrature, doubled until successive estimates agree to ``tol``.
    """
    if n < 0:
        raise ValueError("resonance order must be non-negative")
    if bias_phase not in ("fundamental", "exact"):
        raise ValueError(f"unknown bias phase {bias_phase!r}")
    if bias_phase == "exact" and full_tables is None:
        raise ValueError("the exact bias phase needs full_tables")
    prev = None
    K = samples
    while K <= 1 << 16:
        val = _rwa_average(h, n, omega, full_tables, bias_phase, K)
        if prev is not None and abs(val - prev) <= tol * max(abs(val), h.Omega0, 1e-300):
            eff = abs(val)
            trivial = n == 0 and h.DeltaE_mean != 0
            omega_res = h.DeltaE_mean / n if n else 0.0
            return ResonancePrediction(n, omega_res, eff, float(np.angle(val)) if val else 0.0, eff, trivial)
        prev = val
        K *= 2
    raise HarmonicsError("RWA quadrature did not converge")


def _rwa_average(h, n, omega, full_tables, bias_phase, K):
    period = 2 * math.pi / omega
    t = period * np.arange(K) / K
    if full_tables is None:
        om = h.omega_of_t(t)
    else:
        om = np.asarray(full_tables[0](t), dtype=float)
    if bias_phase == "fundamental":
        sign = 1.0
        if full_tables is not None:
            # undo the half-period shift applied to the harmonics when b < 0
            dE = np.asarray(full_tables[1](t), dtype=float)
            sign = 1.0 if np.mean(dE * np.sin(omega * t)) >= 0 else -1.0
        theta = -sign * (h.b / omega) * np.cos(omega * t)
    else:
        # integrate the periodic bias fluctuation spectrally
        dE = np.asarray(full_tables[1](t), dtype=float)
        F = np.fft.rfft(dE - dE.mean())
        m = np.arange(F.size)
        G = np.zeros_like(F)
        G[1:] = F[1:] / (1j * m[1:] * omega)
        theta = np.fft.irfft(G, K)
    return complex(np.mean(om * np.exp(1j * (n * omega * t + theta))))


@dataclass(frozen=True)
class RabiPrediction:
    frequency: float
    amplitude: float

    @property
    def period(self) -> float:
        return 2 * math.pi / self.frequency if self.frequency > 0 else math.inf


def predict_rabi(pred: ResonancePrediction, N: int = 1, detuning: float = 0.0) -> RabiPrediction:
    """Two-level oscillation of <J_z>: generalized Rabi frequency and transfer amplitude.

    In the non-interacting limit every atom follows the same two-level
    dynamics, so N only enters as the normalization of <J_z>.
    """
    W2 = detuning**2 + pred.omega_eff**2
    if W2 == 0:
        return RabiPrediction(0.0, 0.0)
    return RabiPrediction(math.sqrt(W2), pred.omega_eff**2 / W2)


def resonance_drive(spec: PotentialSpec, deltaE0: float, n: int, coefficient: float,
                    variant=Variant.FULL) -> DriveSpec:
    """Drive tuned to the n-th resonance with lambda1 = a * DeltaE0 / omega."""
    omega = deltaE0 / n
    return DriveSpec.from_rule(coefficient, omega, deltaE0, variant)


def effective_rows(spec: PotentialSpec, table, orders, coefficient: float, variants) -> list[dict]:
    """Effective couplings per (variant, n) at omega = DeltaE0/n."""
    rows = []
    dE0 = float(table.deltaE(spec.lambda0))
    for variant in variants:
        variant = Variant.parse(variant)
        for n in orders:
            drive = resonance_drive(spec, dE0, n, coefficient, variant)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", BiasLinearityWarning)
                h = decompose_drive(table, drive, spec)
            bes = bessel_effective_coupling(h, n, drive.omega)
            full = _variant_functions(table, drive, spec)
            rwa = rwa_effective_coupling(h, n, drive.omega, full_tables=full)
            exact = rwa_effective_coupling(h, n, drive.omega, full_tables=full, bias_phase="exact")
            rows.append({
                "variant": variant.value, "n": n, "omega": drive.omega, "lambda1": drive.lambda1,
                "omega_res": bes.omega_res, "omega_eff_bessel": bes.omega_eff,
                "omega_eff_bessel_magnitude": printed_form_coupling(h, n, drive.omega),
                "omega_eff_rwa": rwa.omega_eff, "omega_eff_rwa_exact_bias": exact.omega_eff,
                "phi_n": rwa.phi_n, "width_est": rwa.width_est, "b": h.b,
            })
    return rows


def _variant_functions(table, drive: DriveSpec, spec: PotentialSpec):
    lam = lambda t: spec.lambda0 + drive.lambda1 * np.sin(drive.omega * t)  # noqa: E731
    om0 = float(table.omega(spec.lambda0))
    dE0 = float(table.deltaE(spec.lambda0))
    if drive.variant is Variant.CONSTANT_OMEGA:
        omega_fn = lambda t: np.full_like(t, om0)  # noqa: E731
    else:
        omega_fn = lambda t: table.omega(lam(t))  # noqa: E731
    if drive.variant is Variant.CONSTANT_DELTAE:
        deltaE_fn = lambda t: np.full_like(t, dE0)  # noqa: E731
    else:
        deltaE_fn = lambda t: table.deltaE(lam(t))  # noqa: E731
    return omega_fn, deltaE_fn
