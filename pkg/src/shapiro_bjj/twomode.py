"""Driven two-mode (pseudo-spin) dynamics in the (N+1)-dimensional Fock basis.

Basis index k = number of atoms in the left well, J_z = k - N/2 and

    H(t) = -Omega(t) J_x - DeltaE(t) J_z + 2 kappa J_z^2 .

With the bias convention DeltaE = <R|h|R> - <L|h|L>, a positive bias makes
the left well the lower one, so the static ground state at small Omega is
k = N and <J_z>/N = +1/2 means "everything still in the lower well".
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .potential import DriveSpec, PotentialSpec, Variant
from .spectral import Grid, Model, ParameterTable, build_parameter_table
from .trajectory import IntegratorError, TrajectoryRecord

# commutator-free fourth order Magnus: two exponentials per step
_SQ3 = math.sqrt(3.0)
CF4_NODES = (0.5 - _SQ3 / 6.0, 0.5 + _SQ3 / 6.0)
CF4_WEIGHTS = ((0.25 + _SQ3 / 6.0, 0.25 - _SQ3 / 6.0), (0.25 - _SQ3 / 6.0, 0.25 + _SQ3 / 6.0))

DT_RULE = 0.05


def jz_diagonal(N: int) -> np.ndarray:
    return np.arange(N + 1, dtype=float) - 0.5 * N


def jx_offdiagonal(N: int) -> np.ndarray:
    """<k+1| J_x |k> = sqrt((k+1)(N-k))/2."""
    k = np.arange(N, dtype=float)
    return 0.5 * np.sqrt((k + 1.0) * (N - k))


def hamiltonian_bands(N: int, Omega: float, DeltaE: float, kappa: float):
    jz = jz_diagonal(N)
    return -DeltaE * jz + 2.0 * kappa * jz * jz, -Omega * jx_offdiagonal(N)


def dense_hamiltonian(N: int, Omega: float, DeltaE: float, kappa: float) -> np.ndarray:
    diag, off = hamiltonian_bands(N, Omega, DeltaE, kappa)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


@dataclass(frozen=True, eq=False)
class SpinState:
    N: int
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.shape != (self.N + 1,):
            raise ValueError(f"need {self.N + 1} amplitudes, got shape {a.shape}")
        if abs(np.vdot(a, a).real - 1.0) > 1e-10:
            raise ValueError("state is not normalized")
        object.__setattr__(self, "amplitudes", a)


class InitialState(str, enum.Enum):
    GROUND_STATE_STATIC = "ground"
    ALL_LEFT_FOCK = "all-left"


@dataclass(frozen=True, eq=False)
class DrivenTMSystem:
    """Two-mode system with drive.

    ``table`` provides Omega(lambda) and DeltaE(lambda); with ``lambda1 = 0``
    or no table the system is static with (Omega0, DeltaE0).
    """

    N: int
    Omega0: float
    DeltaE0: float
    kappa: float
    lambda0: float = 0.0
    lambda1: float = 0.0
    omega: float = 1.0
    variant: Variant = Variant.FULL
    table: ParameterTable | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one atom")
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.lambda1 and self.table is None:
            raise ValueError("a driven system needs a parameter table")
        if self.omega <= 0:
            raise ValueError("drive frequency must be positive")

    @classmethod
    def static(cls, N: int, Omega: float, DeltaE: float, kappa: float = 0.0) -> "DrivenTMSystem":
        return cls(N, float(Omega), float(DeltaE), float(kappa))

    @property
    def is_static(self) -> bool:
        return self.lambda1 == 0 or self.table is None

    def lam(self, t):
        return self.lambda0 + self.lambda1 * np.sin(self.omega * np.asarray(t, dtype=float))

    def Omega(self, t):
        if self.is_static or self.variant is Variant.CONSTANT_OMEGA:
            return np.full_like(np.asarray(t, dtype=float), self.Omega0)
        return self.table.omega(self.lam(t))

    def DeltaE(self, t):
        if self.is_static or self.variant is Variant.CONSTANT_DELTAE:
            return np.full_like(np.asarray(t, dtype=float), self.DeltaE0)
        return self.table.deltaE(self.lam(t))

    def rate_scale(self) -> float:
        """Largest single-atom energy scale: bias, tunnelling and mean-field shift."""
        ts = np.linspace(0.0, 2 * math.pi / self.omega, 64)
        return float(np.max(np.abs(self.DeltaE(ts))) + np.max(np.abs(self.Omega(ts)))
                     + 2.0 * abs(self.kappa) * self.N)


def driven_system(spec: PotentialSpec, drive: DriveSpec, N: int, U0N: float = 0.0,
                  model: Model | str = Model.IMPROVED, grid: Grid | None = None,
                  table: ParameterTable | None = None) -> DrivenTMSystem:
    """Assemble a driven two-mode system from the calibrated potential.

    ``table`` may be shared between scan points as long as it covers
    lambda0 +- lambda1; otherwise one is built for this drive.
    """
    drive.check(spec)
    lo, hi = spec.lambda0 - drive.lambda1, spec.lambda0 + drive.lambda1
    if table is None or table.lo > lo + 1e-12 or table.hi < hi - 1e-12:
        table = build_parameter_table(spec, lo, hi, model=Model(model), U0N=U0N, N=N, grid=grid)
    return DrivenTMSystem(N, table.omega0, table.deltaE0, table.kappa, spec.lambda0,
                          drive.lambda1, drive.omega, drive.variant, table)


def build_hamiltonian(sys: DrivenTMSystem, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("time must be non-negative")
    return dense_hamiltonian(sys.N, float(sys.Omega(t)), float(sys.DeltaE(t)), sys.kappa)


def prepare_initial_state(sys: DrivenTMSystem, mode=InitialState.GROUND_STATE_STATIC) -> SpinState:
    mode = InitialState(mode)
    N = sys.N
    if mode is InitialState.ALL_LEFT_FOCK:
        a = np.zeros(N + 1, dtype=complex)
        a[N] = 1.0
        return SpinState(N, a)
    diag, off = hamiltonian_bands(N, sys.Omega0, sys.DeltaE0, sys.kappa)
    _, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    a = v[:, 0].astype(complex)
    # fix the global sign for reproducible output
    if a[np.argmax(np.abs(a))].real < 0:
        a = -a
    return SpinState(N, a / np.linalg.norm(a))


def observables(amplitudes: np.ndarray, N: int):
    """(<J_z>, var J_z, fragmentation) for one state or a stack of states (rows)."""
    a = np.atleast_2d(np.asarray(amplitudes))
    p = np.abs(a) ** 2
    jz = jz_diagonal(N)
    mean = p @ jz
    var = np.maximum(p @ (jz * jz) - mean**2, 0.0)
    k = np.arange(N, dtype=float)
    rho_lr = np.sum(np.conj(a[:, 1:]) * a[:, :-1] * np.sqrt((k + 1.0) * (N - k)), axis=1)
    # rho_LL - rho_RR = 2 <J_z>
    frag = 2.0 * np.sqrt(mean**2 + np.abs(rho_lr) ** 2) / N
    if np.ndim(amplitudes) == 1:
        return float(mean[0]), float(var[0]), float(frag[0])
    return mean, var, frag


def _expm_tridiagonal(diag: np.ndarray, off: np.ndarray, dt: float):
    w, v = eigh_tridiagonal(diag, off)
    return v, np.exp(-1j * dt * w)


def cf4_step_factors(sys: DrivenTMSystem, t: float, dt: float):
    """Both CF4 exponentials for the step [t, t+dt], as (eigvecs, phases) pairs."""
    tt = t + dt * np.asarray(CF4_NODES)
    Om, dE = sys.Omega(tt), sys.DeltaE(tt)
    jz, jx = jz_diagonal(sys.N), jx_offdiagonal(sys.N)
    out = []
    for w1, w2 in CF4_WEIGHTS:
        om = w1 * Om[0] + w2 * Om[1]
        de = w1 * dE[0] + w2 * dE[1]
        # the interaction term is static; its weights sum to 1/2
        out.append(_expm_tridiagonal(-de * jz + sys.kappa * jz * jz, -om * jx, dt))
    return out


def default_dt(sys: DrivenTMSystem, rule: float = DT_RULE) -> float:
    return rule / max(sys.omega if not sys.is_static else 0.0, sys.rate_scale(), 1e-12)


def _apply(factors, psi):
    if psi.ndim == 2:
        for v, ph in factors:
            psi = v @ (ph[:, None] * (v.T @ psi))
        return psi
    for v, ph in factors:
        psi = v @ (ph * (v.T @ psi))
    return psi


def propagate(sys: DrivenTMSystem, state0: SpinState, t_final: float, dt: float | None = None,
              out_dt: float = 0.05, model: str = "tm") -> TrajectoryRecord:
    """Propagate to t_final and record observables about every ``out_dt``.

    Static systems use the exact eigen-decomposition.  Driven systems take
    CF4 steps with dt commensurate with the drive period; the cumulative
    propagators at the output times of one period are built once and reused
    for every later period (the Hamiltonian is periodic).  The record ends
    at the first output time >= t_final.
    """
    if state0.N != sys.N:
        raise ValueError("state and system disagree on N")
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    N = sys.N
    psi0 = state0.amplitudes
    if sys.is_static:
        diag, off = hamiltonian_bands(N, sys.Omega0, sys.DeltaE0, sys.kappa)
        w, v = eigh_tridiagonal(diag, off)
        n_out = max(1, int(math.ceil(t_final / out_dt - 1e-9)))
        times = np.linspace(0.0, n_out * (t_final / n_out), n_out + 1)
        c = v.T @ psi0
        states = (v @ (np.exp(-1j * np.outer(w, times)) * c[:, None])).T
        return _record(times, states, N, model)

    period = 2 * math.pi / sys.omega
    dt_max = dt if dt is not None else default_dt(sys)
    span = min(period, t_final * (1 + 1e-12))
    samples = max(1, int(math.ceil(span / out_dt - 1e-9)))
    if span < period:
        # less than one period requested: plain stepping over [0, t_final]
        per = int(math.ceil(t_final / (samples * dt_max) - 1e-9))
        h = t_final / (samples * per)
        return _march(sys, psi0, samples, per, h, 1, model)
    per = int(math.ceil(period / (samples * dt_max) - 1e-9))
    h = period / (samples * per)
    n_periods = int(math.ceil(t_final / period - 1e-9))
    return _march(sys, psi0, samples, per, h, n_periods, model, t_final)


def _march(sys, psi0, samples, per, h, n_periods, model, t_final=None):
    N = sys.N
    dim = N + 1
    # cumulative propagators from the start of a period to each output time
    U = np.eye(dim, dtype=complex)
    cumulative = np.empty((samples, dim, dim), dtype=complex)
    for s in range(samples):
        for j in range(per):
            t = (s * per + j) * h
            U = _apply(cf4_step_factors(sys, t, h), U)
        cumulative[s] = U
    tau = h * per * (np.arange(samples) + 1)
    period = samples * per * h
    times = [0.0]
    states = [psi0]
    psi = psi0
    for m in range(n_periods):
        block = np.einsum("sij,j->si", cumulative, psi)
        for s in range(samples):
            t = m * period + tau[s]
            times.append(t)
            states.append(block[s])
            if t_final is not None and t >= t_final * (1 - 1e-12):
                break
        psi = block[-1]
    return _record(np.asarray(times), np.asarray(states), N, model)


def _record(times, states, N, model):
    norms = np.sum(np.abs(states) ** 2, axis=1)
    drift = float(np.max(np.abs(norms - 1.0)))
    if not drift <= 1e-6:
        raise IntegratorError(f"norm drift {drift:.3e}")
    mean, var, frag = observables(states, N)
    return TrajectoryRecord(times, mean / N, var, frag, N, model, drift)


def propagate_states(sys: DrivenTMSystem, state0: SpinState, times, dt: float | None = None):
    """Amplitudes at the given increasing times by direct CF4 stepping (no caching)."""
    times = np.asarray(times, dtype=float)
    dt_max = dt if dt is not None else (default_dt(sys) if not sys.is_static else np.inf)
    psi = state0.amplitudes.copy()
    out = []
    t = 0.0
    for target in times:
        span = target - t
        if span > 0:
            n = max(1, int(math.ceil(span / dt_max - 1e-9))) if np.isfinite(dt_max) else 1
            h = span / n
            for j in range(n):
                psi = _apply(cf4_step_factors(sys, t + j * h, h), psi)
            t = target
        out.append(psi.copy())
    return np.asarray(out)
