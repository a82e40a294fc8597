import math

import numpy as np
import pytest
from scipy.linalg import eigh

from shapiro_bjj.gpdynamics import (
    GeometryError,
    GPField,
    Kinetic,
    barrier_position,
    even_superposition,
    gp_energy,
    gp_ground_state_tilted,
    imbalance,
    propagate_gp,
    spec_potential,
)
from shapiro_bjj.potential import DriveSpec, evaluate_potential
from shapiro_bjj.spectral import Grid, Model, parameters_at
from shapiro_bjj.trajectory import IntegratorError
from shapiro_bjj.twomode import (
    DrivenTMSystem,
    driven_system,
    observables,
    prepare_initial_state,
    propagate,
)

GP_GRID = Grid(-4.0, 4.0, 256)


def test_kinetic_representations():
    grid = Grid(-4.0, 4.0, 64)
    x = grid.x
    psi = np.exp(-x**2)
    fd = Kinetic(grid, "fd").apply(psi).real
    ref = -0.5 * (np.r_[psi[1:], 0] - 2 * psi + np.r_[0, psi[:-1]]) / grid.h**2
    assert np.allclose(fd, ref, atol=1e-12)
    K = Kinetic(grid, "fft").matrix()
    assert np.allclose(K, K.T, atol=1e-12)
    with pytest.raises(ValueError):
        Kinetic(grid, "spline")


def test_linear_ground_state_matches_eigenproblem(spec):
    for kind in ("fd", "fft"):
        field = gp_ground_state_tilted(GP_GRID, spec, U0N=0.0, kinetic=kind)
        V = evaluate_potential(spec, spec.lambda0, GP_GRID.x)
        w, v = eigh(Kinetic(GP_GRID, kind).matrix() + np.diag(V))
        ref = v[:, 0] / math.sqrt(GP_GRID.h)
        ref = ref if ref.sum() > 0 else -ref
        assert np.max(np.abs(field.psi.real - ref)) < 1e-6


def test_deep_tilt_localizes(spec):
    field = gp_ground_state_tilted(GP_GRID, spec, g=8.0, U0N=1.0)
    assert imbalance(field, spec, spec.lambda0, g=8.0) == pytest.approx(0.5, rel=0.01)


def test_repulsion_delocalizes(spec):
    weak = gp_ground_state_tilted(GP_GRID, spec, U0N=1.0)
    strong = gp_ground_state_tilted(GP_GRID, spec, U0N=4.0)
    assert imbalance(strong, spec, spec.lambda0) < imbalance(weak, spec, spec.lambda0)


def test_ground_state_imbalance_matches_two_mode(spec):
    field = gp_ground_state_tilted(GP_GRID, spec, U0N=1.0)
    p = parameters_at(Grid(), spec, spec.lambda0, model=Model.IMPROVED, U0N=1.0, N=100)
    sys = DrivenTMSystem.static(100, p.Omega, p.DeltaE, p.kappa)
    jz, _, _ = observables(prepare_initial_state(sys).amplitudes, 100)
    assert imbalance(field, spec, spec.lambda0) == pytest.approx(jz / 100, abs=0.02)


def test_imbalance_examples(spec):
    x, h = GP_GRID.x, GP_GRID.h
    sym = GPField(GP_GRID, np.exp(-x**2) / math.sqrt(np.sum(np.exp(-2 * x**2)) * h), 0.0)
    assert imbalance(sym, spec, spec.lambda0, g=0.0) == pytest.approx(0.0, abs=1e-14)
    xb = barrier_position(spec, spec.lambda0)
    left = np.where(x < xb - 0.5, np.exp(-(x + 1.5) ** 2), 0.0)
    left = GPField(GP_GRID, left / math.sqrt(np.sum(left**2) * h), 0.0)
    assert imbalance(left, spec, spec.lambda0) == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(GeometryError):
        imbalance(left, spec, spec.lambda0, g=200.0)


def test_field_validation():
    with pytest.raises(ValueError):
        GPField(GP_GRID, np.ones(10), 0.0)
    with pytest.raises(ValueError):
        GPField(GP_GRID, np.ones(256), 0.0)


def test_linear_beating_of_superposition(spec):
    field = even_superposition(GP_GRID, spec, spec.lambda0)
    V = spec_potential(spec, spec.lambda0, GP_GRID.x, 0.0)
    w = eigh(Kinetic(GP_GRID).matrix() + np.diag(V), eigvals_only=True, subset_by_index=(0, 1))
    rec = propagate_gp(field, None, spec, 60.0, g=0.0, out_dt=0.5)
    expected = 0.5 * np.cos((w[1] - w[0]) * rec.times)
    # the barrier split differs from the phi_L projection by the small mode overlap
    assert np.max(np.abs(rec.jz_mean - expected)) < 0.01
    assert np.max(rec.jz_mean) > 0.49 and np.min(rec.jz_mean) < -0.49


def test_linear_limit_matches_eigenbasis_expansion(spec):
    field = gp_ground_state_tilted(GP_GRID, spec, lambda0=0.6, U0N=0.0)
    V = spec_potential(spec, spec.lambda0, GP_GRID.x)
    w, v = eigh(Kinetic(GP_GRID).matrix() + np.diag(V))
    c = v.T @ field.psi
    xb = barrier_position(spec, spec.lambda0)
    # observable at the production step
    rec = propagate_gp(field, None, spec, 10.0, out_dt=0.5)
    exact = [imbalance(GPField(GP_GRID, v @ (np.exp(-1j * w * t) * c), 0.0), spec, spec.lambda0)
             for t in rec.times]
    assert np.max(np.abs(rec.jz_mean - exact)) < 1e-6
    # the full wavefunction carries splitting error in wall-region components, dt^4
    _, end = propagate_gp(field, None, spec, 10.0, dt=0.00125, return_field=True)
    exact_psi = v @ (np.exp(-1j * w * 10.0) * c)
    assert math.sqrt(np.sum(np.abs(end.psi - exact_psi) ** 2) * GP_GRID.h) < 1e-6
    assert xb < 0.1


def test_norm_and_energy_conserved(spec):
    field = gp_ground_state_tilted(GP_GRID, spec, lambda0=0.6, U0N=1.0)
    kin = Kinetic(GP_GRID)
    V = spec_potential(spec, spec.lambda0, GP_GRID.x)
    E0 = gp_energy(field.psi, V, kin, GP_GRID.h, 1.0)
    rec, end = propagate_gp(field, None, spec, 100.0, dt=0.0025, out_dt=1.0, return_field=True)
    assert rec.norm_drift < 1e-8
    assert abs(gp_energy(end.psi, V, kin, GP_GRID.h, 1.0) / E0 - 1) < 1e-7
    assert np.all(np.isnan(rec.jz_var)) and np.all(np.isnan(rec.frag))


def test_driven_norm_conserved(spec):
    field = gp_ground_state_tilted(GP_GRID, spec, U0N=1.0)
    rec = propagate_gp(field, DriveSpec(0.05, 2.0), spec, 100.0, out_dt=1.0)
    assert rec.norm_drift < 1e-8


def _gp_vs_tm(spec, table, ratio, T=20.0):
    dE0 = table.deltaE0
    drive = DriveSpec.from_rule(0.03, ratio * dE0, dE0)
    field = gp_ground_state_tilted(GP_GRID, spec, U0N=0.0)
    gp = propagate_gp(field, drive, spec, T, out_dt=0.25)
    sys = driven_system(spec, drive, 1, table=table)
    tm = propagate(sys, prepare_initial_state(sys), T)
    return np.max(np.abs(gp.jz_mean - np.interp(gp.times, tm.times, tm.jz_mean)))


@pytest.mark.parametrize("ratio", [0.5, 0.8, 0.9])
def test_linear_driven_matches_two_mode_mean_field(spec, table, ratio):
    assert _gp_vs_tm(spec, table, ratio) < 0.02 * 0.5


@pytest.mark.xfail(strict=True, reason="two-mode bias is 2e-3 above the exact tilted splitting; "
                   "on resonance that detunes by ~9 % of the effective coupling")
def test_linear_driven_matches_two_mode_on_resonance(spec, table):
    assert _gp_vs_tm(spec, table, 1.0) < 0.02 * 0.5


def test_grid_refinement(spec):
    drive = DriveSpec(0.03, 2.0)
    coarse = gp_ground_state_tilted(GP_GRID, spec, U0N=1.0)
    fine = gp_ground_state_tilted(Grid(-4.0, 4.0, 511), spec, U0N=1.0)
    a = propagate_gp(coarse, drive, spec, 20.0, out_dt=0.5)
    b = propagate_gp(fine, drive, spec, 20.0, out_dt=0.5)
    assert np.max(np.abs(a.jz_mean - b.jz_mean)) < 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_order_and_drift_checks(spec):
    field = gp_ground_state_tilted(GP_GRID, spec, U0N=0.0)
    with pytest.raises(ValueError):
        propagate_gp(field, None, spec, 1.0, order=3)
    with pytest.raises(IntegratorError):
        # an overflowing nonlinear phase turns the field into NaN
        bad = GPField(GP_GRID, field.psi, math.inf)
        propagate_gp(bad, None, spec, 0.01, dt=0.01)
