"""Stationary 1D problems and extraction of two-mode parameters.

Everything here uses the 3-point finite-difference Laplacian on a uniform
grid with Dirichlet walls just outside the box, so the single-particle
Hamiltonian is a symmetric tridiagonal matrix.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.linalg import eigh_tridiagonal, solve_banded

from .potential import PotentialSpec, evaluate_potential


class PreconditionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class TwoModeValidityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Grid:
    x_min: float = -4.0
    x_max: float = 4.0
    n_points: int = 12001

    def __post_init__(self):
        if self.n_points < 2 or not self.x_max > self.x_min:
            raise ValueError("grid needs x_max > x_min and at least 2 points")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    def refined(self, factor: int) -> "Grid":
        return Grid(self.x_min, self.x_max, (self.n_points - 1) * factor + 1)

    def check_box(self, spec: PotentialSpec, lam: float) -> None:
        c2, a = spec.quartic_coefficients(lam)
        well_freq = math.sqrt(8.0 * c2 * a * a)
        reach = a + 4.0 / math.sqrt(well_freq)
        if self.x_min > -reach or self.x_max < reach:
            raise ValueError(f"box [{self.x_min}, {self.x_max}] too small, need +-{reach:.3f}")


class Provenance(str, enum.Enum):
    SINGLE_PARTICLE = "single-particle"
    GP_SELF_CONSISTENT = "gp-self-consistent"


class Model(str, enum.Enum):
    STANDARD = "standard"
    IMPROVED = "improved"


@dataclass(frozen=True, eq=False)
class ModePair:
    x: np.ndarray
    phi_g: np.ndarray
    phi_e: np.ndarray
    E_g: float
    E_e: float
    provenance: Provenance = Provenance.SINGLE_PARTICLE
    E_third: float = math.nan
    two_mode_warning: bool = False
    U0N: float = 0.0

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def phi_L(self) -> np.ndarray:
        return (self.phi_g + self.phi_e) / math.sqrt(2.0)

    @property
    def phi_R(self) -> np.ndarray:
        return (self.phi_g - self.phi_e) / math.sqrt(2.0)


@dataclass(frozen=True)
class TMParams:
    Omega: float
    DeltaE: float
    kappa: float
    model: Model = Model.STANDARD


# -- finite-difference operators -------------------------------------------

def _kinetic_diag(n: int, h: float):
    return np.full(n, 1.0 / h**2), np.full(n - 1, -0.5 / h**2)


def apply_hamiltonian(psi: np.ndarray, V: np.ndarray, h: float) -> np.ndarray:
    """(-1/2 d^2/dx^2 + V) psi with zero Dirichlet values outside the box."""
    out = (1.0 / h**2 + V) * psi
    out[:-1] -= 0.5 / h**2 * psi[1:]
    out[1:] -= 0.5 / h**2 * psi[:-1]
    return out


def _inner(a: np.ndarray, b: np.ndarray, h: float) -> float:
    return float(np.real(np.vdot(a, b)) * h)


def _lowest_eigenpairs(V: np.ndarray, h: float, count: int):
    diag, off = _kinetic_diag(V.size, h)
    w, v = eigh_tridiagonal(diag + V, off, select="i", select_range=(0, count - 1))
    return w, v / math.sqrt(h)


def _fix_signs(x, phi_g, phi_e):
    if phi_g.sum() < 0:
        phi_g = -phi_g
    # phi_e positive on the left so that (phi_g + phi_e)/sqrt(2) sits at x < 0
    if phi_e[x < 0].sum() < phi_e[x > 0].sum():
        phi_e = -phi_e
    return phi_g, phi_e


def symmetric_potential(grid: Grid, spec: PotentialSpec, lam: float) -> np.ndarray:
    return evaluate_potential(spec, lam, grid.x, g=0.0)


def lowest_two_states(grid: Grid, spec: PotentialSpec | None, lam: float = 0.0, g: float = 0.0,
                      potential=None) -> ModePair:
    """Two lowest eigenpairs of -1/2 d^2/dx^2 + V on the grid.

    ``potential`` (a callable of x) bypasses ``spec``; it is the hook used
    for analytic checks such as the harmonic oscillator.  A warning flag is
    set when the third level is closer than ten times the doublet splitting.
    """
    x = grid.x
    if potential is not None:
        V = np.asarray(potential(x), dtype=float)
    else:
        V = evaluate_potential(spec, lam, x, g=g)
    if _mirror_symmetric(x, V):
        w, phi_g, phi_e = _parity_eigenpairs(x, V, grid.h)
    else:
        w, v = _lowest_eigenpairs(V, grid.h, 3)
        phi_g, phi_e = v[:, 0], v[:, 1]
    if not np.all(np.isfinite(w)):
        raise ConvergenceError("tridiagonal eigensolver failed")
    phi_g, phi_e = _fix_signs(x, phi_g, phi_e)
    gap = w[1] - w[0]
    warn = bool((w[2] - w[1]) < 10.0 * gap)
    if warn:
        warnings.warn(f"two-mode validity: third level at {w[2] - w[1]:.3g} above doublet of "
                      f"splitting {gap:.3g} (lambda={lam})", TwoModeValidityWarning, stacklevel=2)
    return ModePair(x, phi_g, phi_e, float(w[0]), float(w[1]), Provenance.SINGLE_PARTICLE,
                    float(w[2]), warn)


def symmetric_mode_parameters(grid: Grid, d: float, barrier: float) -> tuple[float, float]:
    """(Omega, centroid separation of phi_L, phi_R) for a bare quartic; calibration helper."""
    x = grid.x
    a = 0.5 * d
    V = barrier / a**4 * (x * x - a * a) ** 2
    if _mirror_symmetric(x, V):
        w, phi_g, phi_e = _parity_eigenpairs(x, V, grid.h)
    else:
        w, v = _lowest_eigenpairs(V, grid.h, 2)
        phi_g, phi_e = v[:, 0], v[:, 1]
    xge = float(np.sum(phi_g * x * phi_e) * grid.h)
    return float(w[1] - w[0]), 2.0 * abs(xge)


def _mirror_symmetric(x, V) -> bool:
    n = x.size
    if n % 2 == 0 or abs(x[n // 2]) > 1e-12 * (x[-1] - x[0]):
        return False
    scale = max(float(np.max(np.abs(V))), 1.0)
    return bool(np.max(np.abs(V - V[::-1])) <= 1e-13 * scale)


def _parity_eigenpairs(x, V, h):
    """Lowest three levels of a mirror-symmetric potential, parity by parity.

    Solving the even and odd sectors on the half line keeps the doublet well
    defined even when its splitting drops below machine precision.  The even
    sector is symmetrized by scaling the x = 0 amplitude with sqrt(2).
    Returns (levels, phi_g, phi_e) with grid-normalized full-line modes.
    """
    c = x.size // 2
    Vh = V[c:]
    m = Vh.size
    diag = np.full(m, 1.0 / h**2) + Vh
    off = np.full(m - 1, -0.5 / h**2)
    off[0] = -1.0 / (math.sqrt(2.0) * h**2)
    we, ve = eigh_tridiagonal(diag, off, select="i", select_range=(0, 1))
    wo, vo = eigh_tridiagonal(diag[1:], off[1:], select="i", select_range=(0, 0))
    even = ve[:, 0].copy()
    even[0] *= math.sqrt(2.0)
    phi_g = np.concatenate([even[:0:-1], even]) / math.sqrt(2.0 * h)
    odd = np.concatenate([[0.0], vo[:, 0]])
    phi_e = np.concatenate([-odd[:0:-1], odd]) / math.sqrt(2.0 * h)
    levels = np.array([we[0], wo[0], we[1]])
    return levels, phi_g, phi_e


def _check_normalized(modes: ModePair) -> None:
    h = modes.h
    for name, phi in (("phi_g", modes.phi_g), ("phi_e", modes.phi_e)):
        if abs(_inner(phi, phi, h) - 1.0) > 1e-10:
            raise PreconditionError(f"{name} is not normalized")


def _bias_and_tunnelling(phi_L, phi_R, V, h):
    hL = apply_hamiltonian(phi_L, V, h)
    hR = apply_hamiltonian(phi_R, V, h)
    omega = -2.0 * _inner(phi_L, hR, h)
    # positive bias means the left mode is the lower one
    deltaE = _inner(phi_R, hR, h) - _inner(phi_L, hL, h)
    return omega, deltaE


def tm_parameters(modes: ModePair, spec: PotentialSpec, lam: float, g: float | None,
                  U0: float = 0.0, N: int = 1) -> TMParams:
    """Standard two-mode parameters from localized combinations of the modes.

    Omega = -<L|h|R> - c.c., DeltaE = <R|h|R> - <L|h|L> (tilt included in
    h), kappa = U0/2 int |phi_L|^4.
    """
    _check_normalized(modes)
    h = modes.h
    V = evaluate_potential(spec, lam, modes.x, g=g)
    omega, deltaE = _bias_and_tunnelling(modes.phi_L, modes.phi_R, V, h)
    kappa = 0.5 * U0 * float(np.sum(modes.phi_L**4) * h)
    return TMParams(omega, deltaE, kappa, Model.STANDARD)


# -- self-consistent GP states ---------------------------------------------

def gp_residual(phi: np.ndarray, V: np.ndarray, h: float, U0N: float) -> tuple[float, float]:
    """(mu, ||(H_GP - mu) phi||) for a normalized real state."""
    Hphi = apply_hamiltonian(phi, V + U0N * phi**2, h)
    mu = _inner(phi, Hphi, h)
    return mu, math.sqrt(_inner(Hphi - mu * phi, Hphi - mu * phi, h))


def imaginary_time_state(V: np.ndarray, h: float, U0N: float, guess: np.ndarray, *,
                         orthogonal_to: np.ndarray | None = None, parity: int = 0,
                         tau: float = 1.0, tol: float = 1e-8, max_iter: int = 5000):
    """Backward-Euler imaginary-time flow (1 + tau H[phi]) phi' = phi.

    ``orthogonal_to`` is removed by Gram-Schmidt after every step and
    ``parity`` (+1/-1) restricts to even/odd states on a symmetric grid.
    Returns (phi, mu, residual, iterations).
    """
    n = V.size
    kd, ko = _kinetic_diag(n, h)
    phi = guess.astype(float).copy()

    def project(p):
        if parity:
            p = 0.5 * (p + parity * p[::-1])
        if orthogonal_to is not None:
            p = p - _inner(orthogonal_to, p, h) * orthogonal_to
        return p / math.sqrt(_inner(p, p, h))

    phi = project(phi)
    ab = np.zeros((3, n))
    ab[0, 1:] = tau * ko
    ab[2, :-1] = tau * ko
    for it in range(1, max_iter + 1):
        ab[1] = 1.0 + tau * (kd + V + U0N * phi**2)
        phi = project(solve_banded((1, 1), ab, phi))
        mu, res = gp_residual(phi, V, h, U0N)
        if res < tol:
            return phi, mu, res, it
    raise ConvergenceError(f"imaginary-time flow stalled at residual {res:.3e} after {max_iter} steps")


def gp_stationary_states(grid: Grid, spec: PotentialSpec, lam: float, U0N: float,
                         method: str = "both", tol: float = 1e-8) -> ModePair:
    """First and second self-consistent GP states of the symmetric well.

    The excited state is kept orthogonal to the GP ground state by
    Gram-Schmidt ("gram-schmidt"), by odd parity ("parity"), or both.
    """
    if U0N < 0:
        raise PreconditionError("U0N must be non-negative")
    x, h = grid.x, grid.h
    V = symmetric_potential(grid, spec, lam)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TwoModeValidityWarning)
        lin = lowest_two_states(grid, spec, lam)
    symmetric = np.allclose(x, -x[::-1], atol=1e-12 * max(1.0, abs(x[0])))
    even = 1 if symmetric else 0
    phi_g, mu_g, _, _ = imaginary_time_state(V, h, U0N, lin.phi_g, parity=even, tol=tol)
    odd = -1 if symmetric and method in ("parity", "both") else 0
    ortho = phi_g if method in ("gram-schmidt", "both") else None
    phi_e, mu_e, _, _ = imaginary_time_state(V, h, U0N, lin.phi_e, orthogonal_to=ortho,
                                             parity=odd, tol=tol)
    phi_g, phi_e = _fix_signs(x, phi_g, phi_e)
    return ModePair(x, phi_g, phi_e, mu_g, mu_e, Provenance.GP_SELF_CONSISTENT,
                    lin.E_third, lin.two_mode_warning, U0N)


def improved_tm_parameters(gp_modes: ModePair, spec: PotentialSpec, lam: float, g: float | None,
                           U0: float, N: int) -> TMParams:
    """Improved two-mode parameters built from self-consistent GP states.

    Omega^(I) = mu_e - mu_g - (U0 N / 2)(int|phi_e|^4 - int|phi_g|^4); the
    bias uses the GP-localized modes, kappa = U0/2 int |phi_L^GP|^4.
    """
    if gp_modes.provenance is not Provenance.GP_SELF_CONSISTENT:
        raise PreconditionError("improved parameters need GP self-consistent modes")
    _check_normalized(gp_modes)
    h = gp_modes.h
    U0N = U0 * N
    i4g = float(np.sum(gp_modes.phi_g**4) * h)
    i4e = float(np.sum(gp_modes.phi_e**4) * h)
    omega = gp_modes.E_e - gp_modes.E_g - 0.5 * U0N * (i4e - i4g)
    V = evaluate_potential(spec, lam, gp_modes.x, g=g)
    _, deltaE = _bias_and_tunnelling(gp_modes.phi_L, gp_modes.phi_R, V, h)
    kappa = 0.5 * U0 * float(np.sum(gp_modes.phi_L**4) * h)
    return TMParams(omega, deltaE, kappa, Model.IMPROVED)


def parameters_at(grid: Grid, spec: PotentialSpec, lam: float, g: float | None = None,
                  model: Model = Model.STANDARD, U0N: float = 0.0, N: int = 100) -> TMParams:
    g = spec.g if g is None else g
    U0 = U0N / N if N else 0.0
    if Model(model) is Model.IMPROVED:
        return improved_tm_parameters(gp_stationary_states(grid, spec, lam, U0N), spec, lam, g, U0, N)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TwoModeValidityWarning)
        modes = lowest_two_states(grid, spec, lam)
    return tm_parameters(modes, spec, lam, g, U0, N)


def parameter_curves(spec: PotentialSpec, g: float | None, lambda_samples, grid: Grid | None = None,
                     U0: float = 0.0, N: int = 1) -> list[dict]:
    """Tabulate (lambda, Omega, DeltaE, kappa, warn_two_mode) over lambda samples."""
    grid = grid or Grid()
    g = spec.g if g is None else g
    rows = []
    for lam in np.atleast_1d(np.asarray(lambda_samples, dtype=float)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TwoModeValidityWarning)
            modes = lowest_two_states(grid, spec, float(lam))
        p = tm_parameters(modes, spec, float(lam), g, U0, N)
        rows.append({"lambda": float(lam), "Omega": p.Omega, "DeltaE": p.DeltaE,
                     "kappa": p.kappa, "warn_two_mode": modes.two_mode_warning})
    return rows


# -- parameter tables for driven runs ---------------------------------------

@dataclass(frozen=True, eq=False)
class ParameterTable:
    """Chebyshev interpolants of ln Omega(lambda) and DeltaE(lambda) on [lo, hi]."""

    lo: float
    hi: float
    log_omega_coef: np.ndarray
    deltaE_coef: np.ndarray
    kappa: float
    omega0: float
    deltaE0: float
    model: Model

    def _u(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.hi == self.lo:
            return np.zeros_like(lam)
        return (2.0 * lam - self.lo - self.hi) / (self.hi - self.lo)

    def omega(self, lam):
        if self.hi == self.lo:
            return np.full_like(np.asarray(lam, dtype=float), self.omega0)
        return np.exp(cheb.chebval(self._u(lam), self.log_omega_coef))

    def deltaE(self, lam):
        if self.hi == self.lo:
            return np.full_like(np.asarray(lam, dtype=float), self.deltaE0)
        return cheb.chebval(self._u(lam), self.deltaE_coef)


def build_parameter_table(spec: PotentialSpec, lam_lo: float, lam_hi: float, *,
                          model: Model = Model.IMPROVED, U0N: float = 0.0, N: int = 100,
                          grid: Grid | None = None, nodes: int = 25) -> ParameterTable:
    """Sample two-mode parameters at Chebyshev nodes; kappa is fixed at lambda0."""
    grid = grid or Grid()
    return _table_cached(spec, float(lam_lo), float(lam_hi), Model(model), float(U0N), int(N),
                         grid, int(nodes))


@lru_cache(maxsize=64)
def _table_cached(spec, lo, hi, model, U0N, N, grid, nodes):
    spec.check_lambda([lo, hi])
    p0 = parameters_at(grid, spec, spec.lambda0, spec.g, model, U0N, N)
    if hi <= lo:
        return ParameterTable(lo, lo, np.zeros(1), np.zeros(1), p0.kappa, p0.Omega, p0.DeltaE, model)
    k = np.arange(nodes)
    u = np.cos(np.pi * (k + 0.5) / nodes)
    lam = 0.5 * (lo + hi) + 0.5 * (hi - lo) * u
    vals = [parameters_at(grid, spec, float(l), spec.g, model, U0N, N) for l in lam]
    om = np.array([v.Omega for v in vals])
    de = np.array([v.DeltaE for v in vals])
    if np.any(om <= 0):
        raise ConvergenceError("non-positive tunnel coupling in table range")
    log_coef = cheb.chebfit(u, np.log(om), nodes - 1)
    de_coef = cheb.chebfit(u, de, nodes - 1)
    return ParameterTable(lo, hi, log_coef, de_coef, p0.kappa, p0.Omega, p0.DeltaE, model)
