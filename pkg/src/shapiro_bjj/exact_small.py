"""Exact many-body dynamics of a few bosons on a coarse lattice.

The field Hamiltonian is discretized with the same 3-point finite
differences as :mod:`spectral` (Dirichlet walls just outside the box):

    H = sum_i eps_i(t) n_i - J sum_i (a_i^+ a_{i+1} + h.c.) + (U/2) sum_i n_i (n_i - 1)

with J = 1/(2h^2), eps_i = 1/h^2 + V(x_i; lambda(t), g) and U = U0/h.  The
full bosonic Fock space of N atoms on M sites is enumerated, so this is a
brute-force reference for small N only.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal, expm

from .gpdynamics import barrier_position, spec_potential
from .potential import DriveSpec, PotentialSpec
from .spectral import Grid
from .trajectory import IntegratorError, TrajectoryRecord
from .twomode import CF4_NODES, CF4_WEIGHTS

MAX_DIMENSION = 50_000
MAX_ATOMS = 6
MAX_SITES = 16


class CapacityError(ValueError):
    pass


def fock_dimension(N: int, M: int) -> int:
    return math.comb(N + M - 1, N)


def fock_basis(N: int, M: int) -> np.ndarray:
    """All occupation vectors (rows) of N bosons on M sites, in a fixed order."""
    states = []
    for combo in itertools.combinations_with_replacement(range(M), N):
        occ = np.zeros(M, dtype=np.int64)
        for site in combo:
            occ[site] += 1
        states.append(occ)
    return np.asarray(states, dtype=np.int64).reshape(-1, M)


class _Index:
    """Occupation vector -> basis index through a base-(N+1) key."""

    def __init__(self, basis: np.ndarray, N: int):
        self.weights = (N + 1) ** np.arange(basis.shape[1], dtype=np.int64)
        keys = basis @ self.weights
        self.order = np.argsort(keys)
        self.sorted = keys[self.order]

    def __call__(self, occ: np.ndarray) -> np.ndarray:
        keys = occ @ self.weights
        return self.order[np.searchsorted(self.sorted, keys)]


def hopping_operator(basis: np.ndarray, index: _Index, i: int, j: int) -> sp.csr_matrix:
    """Sparse matrix of a_i^+ a_j (i != j)."""
    src = np.nonzero(basis[:, j] > 0)[0]
    occ = basis[src].copy()
    coef = np.sqrt(occ[:, j] * (occ[:, i] + 1.0))
    occ[:, j] -= 1
    occ[:, i] += 1
    dst = index(occ)
    dim = basis.shape[0]
    return sp.csr_matrix((coef, (dst, src)), shape=(dim, dim))


@dataclass(frozen=True, eq=False)
class LatticeSystem:
    grid: Grid
    spec: PotentialSpec
    N: int
    U0: float
    g: float
    basis: np.ndarray
    hopping: sp.csr_matrix
    interaction: np.ndarray

    @property
    def M(self) -> int:
        return self.grid.n_points

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    @property
    def J(self) -> float:
        return 0.5 / self.grid.h**2

    @property
    def U(self) -> float:
        return self.U0 / self.grid.h

    def onsite(self, lam) -> np.ndarray:
        """eps_i for one lambda value (or rows of them)."""
        return 1.0 / self.grid.h**2 + spec_potential(self.spec, lam, self.grid.x, self.g)

    def diagonal(self, eps: np.ndarray) -> np.ndarray:
        return self.basis @ eps + self.interaction

    def hamiltonian(self, lam: float) -> sp.csr_matrix:
        return (self.hopping + sp.diags(self.diagonal(self.onsite(lam)))).tocsr()

    def single_particle_matrix(self, lam: float) -> np.ndarray:
        eps = self.onsite(lam)
        return np.diag(eps) - self.J * (np.eye(self.M, k=1) + np.eye(self.M, k=-1))


def build_lattice(grid_coarse: Grid, spec: PotentialSpec, U0: float, N: int,
                  g: float | None = None) -> LatticeSystem:
    M = grid_coarse.n_points
    if not 1 <= N <= MAX_ATOMS or not 2 <= M <= MAX_SITES:
        raise CapacityError(f"need 1 <= N <= {MAX_ATOMS} and 2 <= M <= {MAX_SITES}")
    dim = fock_dimension(N, M)
    if dim > MAX_DIMENSION:
        raise CapacityError(f"Fock space of dimension {dim} exceeds {MAX_DIMENSION}")
    basis = fock_basis(N, M)
    index = _Index(basis, N)
    J = 0.5 / grid_coarse.h**2
    hop = sp.csr_matrix((dim, dim))
    for i in range(M - 1):
        hop = hop + hopping_operator(basis, index, i, i + 1) + hopping_operator(basis, index, i + 1, i)
    hop = (-J * hop).tocsr()
    U = U0 / grid_coarse.h
    interaction = 0.5 * U * np.sum(basis * (basis - 1), axis=1).astype(float)
    return LatticeSystem(grid_coarse, spec, N, float(U0), spec.g if g is None else float(g),
                         basis, hop, interaction)


def krylov_expm(matvec, v: np.ndarray, tau: float, tol: float = 1e-12, m_max: int = 40):
    """exp(-i tau A) v for Hermitian A by Lanczos with full reorthogonalization.

    The subspace grows until the standard residual estimate falls below
    ``tol``; if ``m_max`` is reached the step is split in two.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy()
    dim = v.size
    m_cap = min(m_max, dim)
    V = np.zeros((m_cap + 1, dim), dtype=complex)
    alpha = np.zeros(m_cap)
    beta = np.zeros(m_cap)
    V[0] = v / beta0
    for j in range(m_cap):
        w = matvec(V[j])
        alpha[j] = np.real(np.vdot(V[j], w))
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        evals, evecs = eigh_tridiagonal(alpha[: j + 1], beta[:j]) if j > 0 else (alpha[:1], np.ones((1, 1)))
        coeffs = evecs @ (np.exp(-1j * tau * evals) * evecs[0])
        invariant = beta[j] < 1e-14 * max(1.0, abs(alpha[j]))
        if invariant or beta[j] * abs(coeffs[-1]) < tol or j + 1 == dim:
            return beta0 * (V[: j + 1].T @ coeffs)
        V[j + 1] = w / beta[j]
    half = krylov_expm(matvec, v, 0.5 * tau, tol, m_max)
    return krylov_expm(matvec, half, 0.5 * tau, tol, m_max)


class LatticeInitial(str, enum.Enum):
    COHERENT = "coherent"
    GROUND = "ground"


def coherent_state(sys: LatticeSystem, orbital: np.ndarray) -> np.ndarray:
    """(sum_i phi_i a_i^+)^N |0> / sqrt(N!) for a normalized site vector phi."""
    phi = np.asarray(orbital, dtype=complex)
    phi = phi / np.linalg.norm(phi)
    occ = sys.basis
    logfact = np.array([math.lgamma(n + 1) for n in range(sys.N + 1)])
    mult = np.exp(0.5 * (math.lgamma(sys.N + 1) - logfact[occ].sum(axis=1)))
    amps = mult * np.prod(phi[None, :] ** occ, axis=1)
    return amps / np.linalg.norm(amps)


def lowest_orbital(sys: LatticeSystem, lam: float) -> np.ndarray:
    w, v = np.linalg.eigh(sys.single_particle_matrix(lam))
    phi = v[:, 0]
    return phi if phi.sum() >= 0 else -phi


def prepare_lattice_state(sys: LatticeSystem, mode=LatticeInitial.COHERENT,
                          lam: float | None = None) -> np.ndarray:
    lam = sys.spec.lambda0 if lam is None else lam
    mode = LatticeInitial(mode)
    if mode is LatticeInitial.COHERENT:
        return coherent_state(sys, lowest_orbital(sys, lam))
    H = sys.hamiltonian(lam)
    if sys.dimension <= 400:
        w, v = np.linalg.eigh(H.toarray())
    else:
        from scipy.sparse.linalg import eigsh
        w, v = eigsh(H, k=1, which="SA", tol=1e-12)
    a = v[:, 0].astype(complex)
    return a / np.linalg.norm(a)


class LatticeObservables:
    """<J_z>, its variance from a left/right site split, and fragmentation.

    The split follows the barrier top passed at call time; a site sitting
    exactly on the barrier counts half to each side, as in the GP imbalance.
    """

    def __init__(self, sys: LatticeSystem, lower_left: bool = True):
        self.sys = sys
        self.lower_left = lower_left
        index = _Index(sys.basis, sys.N)
        M = sys.M
        self.pairs = [(i, j, hopping_operator(sys.basis, index, i, j))
                      for i in range(M) for j in range(i + 1, M)]

    def n_left(self, x_barrier: float) -> np.ndarray:
        x = self.sys.grid.x
        w = np.where(x < x_barrier, 1.0, np.where(x == x_barrier, 0.5, 0.0))
        n = self.sys.basis @ w
        return n if self.lower_left else self.sys.N - n

    def one_body_density(self, psi: np.ndarray) -> np.ndarray:
        M = self.sys.M
        rho = np.zeros((M, M), dtype=complex)
        p = np.abs(psi) ** 2
        rho[np.diag_indices(M)] = p @ self.sys.basis
        for i, j, op in self.pairs:
            # rho_ij = <a_i^+ a_j>
            rho[i, j] = np.vdot(psi, op @ psi)
            rho[j, i] = np.conj(rho[i, j])
        return rho

    def __call__(self, psi: np.ndarray, x_barrier: float):
        N = self.sys.N
        p = np.abs(psi) ** 2
        jz = self.n_left(x_barrier) - 0.5 * N
        mean = float(p @ jz)
        var = max(float(p @ (jz * jz)) - mean**2, 0.0)
        occ = np.linalg.eigvalsh(self.one_body_density(psi))[::-1]
        frag = float(occ[0] - (occ[1] if occ.size > 1 else 0.0)) / N
        return mean, var, frag


def lattice_dt(sys: LatticeSystem, drive: DriveSpec | None) -> float:
    return 0.01 if drive is None else min(0.01, 0.05 / drive.omega)


def propagate_exact(sys: LatticeSystem, drive: DriveSpec | None, t_final: float,
                    dt: float | None = None, out_dt: float = 0.05, psi0: np.ndarray | None = None,
                    initial=LatticeInitial.COHERENT, tol: float = 1e-12,
                    return_states: bool = False):
    """CF4 steps with Lanczos exponentials; records observables every ``out_dt``."""
    spec = sys.spec
    if drive is not None:
        drive.check(spec)
    psi = prepare_lattice_state(sys, initial) if psi0 is None else np.asarray(psi0, dtype=complex)
    if abs(np.vdot(psi, psi).real - 1.0) > 1e-10:
        raise ValueError("initial lattice state is not normalized")
    dt = dt or lattice_dt(sys, drive)
    n_steps = max(1, int(math.ceil(t_final / dt - 1e-9)))
    dt = t_final / n_steps
    stride = max(1, int(round(out_dt / dt)))

    def lam_at(t):
        if drive is None:
            return spec.lambda0
        return spec.lambda0 + drive.lambda1 * math.sin(drive.omega * t)

    observables = LatticeObservables(sys, sys.g >= 0)

    def observe(psi, t):
        return observables(psi, barrier_position(spec, lam_at(t), sys.g))

    static_part = 0.5 * (sys.hopping + sp.diags(sys.interaction)).tocsr()
    occ = sys.basis.astype(float)
    times, rows, states = [0.0], [observe(psi, 0.0)], [psi.copy()]
    for s in range(n_steps):
        t = s * dt
        eps = [sys.onsite(lam_at(t + c * dt)) for c in CF4_NODES]
        for w1, w2 in CF4_WEIGHTS:
            diag = occ @ (w1 * eps[0] + w2 * eps[1])
            psi = krylov_expm(lambda v: static_part @ v + diag * v, psi, dt, tol)
        if (s + 1) % stride == 0 or s + 1 == n_steps:
            times.append((s + 1) * dt)
            rows.append(observe(psi, times[-1]))
            if return_states:
                states.append(psi.copy())
    drift = abs(np.vdot(psi, psi).real - 1.0)
    if not drift <= 1e-6:
        raise IntegratorError(f"lattice norm drift {drift:.3e}")
    rows = np.asarray(rows)
    rec = TrajectoryRecord(np.asarray(times), rows[:, 0] / sys.N, rows[:, 1], rows[:, 2], sys.N,
                           "exact-small", drift)
    if return_states:
        return rec, np.asarray(states)
    return rec


def dense_propagator(sys: LatticeSystem, lam: float, t: float) -> np.ndarray:
    """exp(-i H t) for a static lattice; reference for small Fock spaces."""
    return expm(-1j * t * sys.hamiltonian(lam).toarray())
