"""Galerkin right-hand side: oracle equivalence, skew-symmetry, energy terms."""

import math

import numpy as np
import pytest

from periflow.basis import SpectralField, TorusDomain, get_basis, random_field
from periflow.galerkin import (
    DegenerateRheologyWarning,
    ForcingMode,
    ForcingSignal,
    GalerkinState,
    convection_rhs,
    energy_terms,
    forcing_rhs,
    full_rhs,
    make_rhs,
    viscous_rhs,
)
from periflow.rheology import RegularizationParams, StressParams

from .oracles import DenseGalerkinOracle, stokes_rate

TWO_PI = 2.0 * math.pi


def single_mode_field(dom, wavevector, value=1.0 + 0.0j, pol=0):
    basis = get_basis(dom)
    c = np.zeros(basis.n_modes, dtype=complex)
    idx = [i for i, m in enumerate(basis.modes)
           if m.wavevector == wavevector and m.polarization == pol][0]
    c[idx] = value
    return SpectralField(dom, c), idx


# ---------------------------------------------------------------------------
# forcing
# ---------------------------------------------------------------------------

def make_forcing(dom, period=2.0, shutoff=None):
    return ForcingSignal(dom, period, [
        ForcingMode((1, 0), 0, 0.3 + 0.1j, "harmonic", 1, 0.4),
        ForcingMode((0, 1), 0, 0.2, "constant"),
    ], shutoff=shutoff)


def test_forcing_periodicity():
    dom = TorusDomain(2, TWO_PI, 2)
    f = make_forcing(dom, period=1.7)
    for t in (0.0, 0.3, 1.1, 1.69):
        a = f.coefficients(t)
        b = f.coefficients(t + 1.7)
        assert np.max(np.abs(a - b)) < 1e-12
    assert f.l2_norm(0.5) == pytest.approx(
        np.linalg.norm(f.real_vector(0.5)), rel=1e-13)


def test_forcing_continuity_sampled():
    dom = TorusDomain(2, TWO_PI, 2)
    f = make_forcing(dom, period=2.0, shutoff=1.2)
    ts = np.linspace(0.0, 2.0, 4001)
    vals = np.array([f.l2_norm(t) for t in ts])
    assert np.max(np.abs(np.diff(vals))) < 10.0 * f.max_l2 / 4000 * 10


def test_forcing_shutoff_zero_after_tbar():
    dom = TorusDomain(2, TWO_PI, 2)
    tbar = 1.3
    f = make_forcing(dom, period=2.0, shutoff=tbar)
    for t in np.linspace(tbar, 2.0, 17):
        assert f.l2_norm(t) == 0.0
        assert np.all(forcing_rhs(t, f) == 0.0)
    assert f.l2_norm(0.5 * tbar) > 0.0
    assert f.l2_norm(0.0) == 0.0  # continuity at the period wrap


def test_forcing_max_l2_cached():
    dom = TorusDomain(2, TWO_PI, 2)
    f = make_forcing(dom)
    samples = [f.l2_norm(t) for t in np.linspace(0, 2.0, 333)]
    assert f.max_l2 >= max(samples) - 1e-12
    assert f.max_l2 <= max(samples) * 1.001 + 1e-12


def test_forcing_validation():
    dom = TorusDomain(2, TWO_PI, 2)
    with pytest.raises(ValueError):
        ForcingSignal(dom, -1.0, [])
    with pytest.raises(ValueError):
        ForcingSignal(dom, 1.0, [], shutoff=1.5)
    with pytest.raises(ValueError):
        ForcingSignal(dom, 1.0, [ForcingMode((5, 0), 0, 1.0)])  # beyond cutoff
    with pytest.raises(ValueError):
        ForcingSignal(dom, 1.0, [ForcingMode((-1, 0), 0, 1.0)])  # not half-space
    with pytest.raises(ValueError):
        ForcingSignal(dom, 1.0, [ForcingMode((1, 0), 0, 1.0),
                                 ForcingMode((1, 0), 0, 2.0)])


def test_forcing_rhs_examples():
    dom = TorusDomain(2, TWO_PI, 2)
    f = ForcingSignal(dom, 2.0, [ForcingMode((1, 0), 0, 0.7, "constant")])
    a = forcing_rhs(0.1, f)
    b = forcing_rhs(1.9, f)
    assert np.array_equal(a, b)  # constant profile
    with pytest.raises(ValueError):
        forcing_rhs(-0.1, f)


# ---------------------------------------------------------------------------
# convection
# ---------------------------------------------------------------------------

def test_convection_zero_field():
    dom = TorusDomain(2, TWO_PI, 2)
    out = convection_rhs(GalerkinState(0.0, SpectralField.zero(dom)))
    assert np.all(out == 0.0)


def test_convection_single_mode_vanishes():
    # v x v of one real mode is supported on {0, 2k} and its divergence is
    # annihilated there (k.e = 0), so the projected term vanishes
    dom = TorusDomain(2, TWO_PI, 2)
    f, _ = single_mode_field(dom, (1, 0), 0.9 - 0.4j)
    out = convection_rhs(GalerkinState(0.0, f))
    assert np.max(np.abs(out)) < 1e-13
    oracle = DenseGalerkinOracle(dom, quad_pts=16)
    u = f.to_real_vector()
    ref = np.einsum("i,j,ijk->k", u, u, oracle.f)
    assert np.max(np.abs(ref)) < 1e-12


def test_convection_matches_quadrature_oracle(rng):
    dom = TorusDomain(2, TWO_PI, 2)
    oracle = DenseGalerkinOracle(dom, quad_pts=16)
    for _ in range(5):
        f = random_field(dom, rng, l2_norm=1.2)
        u = f.to_real_vector()
        got = convection_rhs(GalerkinState(0.0, f))
        ref = np.einsum("i,j,ijk->k", u, u, oracle.f)
        assert np.max(np.abs(got - ref)) < 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_convection_skew_symmetry(rng):
    dom = TorusDomain(2, TWO_PI, 4)
    for _ in range(20):
        f = random_field(dom, rng, l2_norm=rng.uniform(0.1, 4.0))
        u = f.to_real_vector()
        conv = convection_rhs(GalerkinState(0.0, f))
        scale = np.linalg.norm(u) * np.linalg.norm(conv)
        assert abs(np.dot(conv, u)) <= 1e-11 * max(scale, 1e-12)


# ---------------------------------------------------------------------------
# viscous terms
# ---------------------------------------------------------------------------

def test_viscous_zero_field():
    dom = TorusDomain(2, TWO_PI, 2)
    out = viscous_rhs(GalerkinState(0.0, SpectralField.zero(dom)),
                      StressParams(q=2.5), RegularizationParams(0.1))
    assert np.all(out == 0.0)


def test_viscous_stokes_symbol():
    """q = 2, kappa = 0, eps = 0: single mode decays with -|k|^2/2 c."""
    dom = TorusDomain(2, TWO_PI, 2)
    f, idx = single_mode_field(dom, (1, 1), 0.8 + 0.3j)
    basis = get_basis(dom)
    with pytest.warns(DegenerateRheologyWarning):
        out = viscous_rhs(GalerkinState(0.0, f), StressParams(q=2.0),
                          RegularizationParams(0.0))
    got = out.view(np.complex128)[idx] / basis.scale
    nu = stokes_rate(dom, (1, 1))
    assert abs(got + nu * f.coefficients[idx]) < 1e-12
    # and against the dense quadrature oracle
    oracle = DenseGalerkinOracle(dom, quad_pts=16)
    forcing = ForcingSignal(dom, 1.0, [])
    ref = oracle.full_rhs(f.to_real_vector(), 0.0, StressParams(q=2.0),
                          RegularizationParams(0.0), forcing, stress_pts=16)
    assert np.max(np.abs(out - ref)) < 1e-12


def test_viscous_laplacian_exact_diagonal(rng):
    """The eps-Laplacian contribution is exactly -eps (2 pi |k|/L)^2 c."""
    dom = TorusDomain(2, 1.9, 3)
    basis = get_basis(dom)
    f = random_field(dom, rng, l2_norm=1.1)
    st = GalerkinState(0.0, f)
    params = StressParams(q=2.5, kappa=0.0)
    eps = 0.37
    with_eps = viscous_rhs(st, params, RegularizationParams(eps))
    without = viscous_rhs(st, params, RegularizationParams(0.0))
    # subtract the p-regularizer contribution evaluated separately
    basis_engine_diff = (with_eps - without).view(np.complex128) / basis.scale
    from periflow.galerkin import _stress_coeffs
    from periflow.basis import grid_size
    npts = grid_size(dom)
    p_only = (_stress_coeffs(basis, f.coefficients, npts, params,
                             RegularizationParams(eps))
              - _stress_coeffs(basis, f.coefficients, npts, params,
                               RegularizationParams(0.0)))
    lap = basis_engine_diff - p_only
    expected = -eps * basis.lam * f.coefficients
    assert np.max(np.abs(lap - expected)) < 1e-10 * np.max(np.abs(expected))


def test_viscous_linear_at_q2(rng):
    """With q = 2 and eps = 0 the stress term is linear in c."""
    dom = TorusDomain(2, TWO_PI, 3)
    params = StressParams(q=2.0, kappa=0.3)
    reg = RegularizationParams(0.0)
    f = random_field(dom, rng, l2_norm=1.0)
    g = random_field(dom, rng, l2_norm=0.5)
    vf = viscous_rhs(GalerkinState(0.0, f), params, reg)
    vg = viscous_rhs(GalerkinState(0.0, g), params, reg)
    vsum = viscous_rhs(GalerkinState(0.0, f + g), params, reg)
    assert np.max(np.abs(vsum - vf - vg)) < 1e-10 * max(1.0, np.max(np.abs(vsum)))
    # finite-difference directional derivative equals the map itself
    h = 1e-5
    fd = (viscous_rhs(GalerkinState(0.0, f + h * g), params, reg) - vf) / h
    assert np.max(np.abs(fd - vg)) < 1e-8 * max(1.0, np.max(np.abs(vg)))


def test_degenerate_warning():
    dom = TorusDomain(2, TWO_PI, 2)
    f, _ = single_mode_field(dom, (1, 0))
    with pytest.warns(DegenerateRheologyWarning):
        viscous_rhs(GalerkinState(0.0, f), StressParams(q=1.5, kappa=0.0),
                    RegularizationParams(0.0))


# ---------------------------------------------------------------------------
# full rhs and the dense oracle
# ---------------------------------------------------------------------------

def test_full_rhs_zero():
    dom = TorusDomain(2, TWO_PI, 2)
    out = full_rhs(GalerkinState(0.0, SpectralField.zero(dom)),
                   StressParams(q=2.5), RegularizationParams(0.0),
                   ForcingSignal(dom, 1.0, []))
    assert np.all(out == 0.0)


def test_full_rhs_decomposition_bitwise(rng):
    dom = TorusDomain(2, TWO_PI, 3)
    f = random_field(dom, rng, l2_norm=0.8)
    st = GalerkinState(0.4, f)
    params = StressParams(q=1.8, kappa=1e-3)
    reg = RegularizationParams(0.05)
    forcing = make_forcing(dom)
    total = full_rhs(st, params, reg, forcing)
    parts = (convection_rhs(st) + viscous_rhs(st, params, reg)
             + forcing_rhs(st.time, forcing))
    assert np.array_equal(total, parts)


@pytest.mark.parametrize("q,kappa,eps", [(1.5, 1e-2, 0.3), (2.0, 0.0, 0.0),
                                         (2.5, 0.0, 0.1)])
def test_full_rhs_dense_oracle(q, kappa, eps, rng):
    from periflow.basis import grid_size

    dom = TorusDomain(2, TWO_PI, 1)
    oracle = DenseGalerkinOracle(dom, quad_pts=16)
    params = StressParams(q=q, kappa=kappa)
    reg = RegularizationParams(eps)
    forcing = ForcingSignal(dom, 2.0, [ForcingMode((1, 0), 0, 0.3, "harmonic")])
    npts = grid_size(dom)
    for _ in range(10):
        f = random_field(dom, rng, l2_norm=rng.uniform(0.2, 2.0))
        st = GalerkinState(0.7, f)
        got = full_rhs(st, params, reg, forcing)
        ref = oracle.full_rhs(f.to_real_vector(), 0.7, params, reg, forcing,
                              stress_pts=npts)
        assert np.max(np.abs(got - ref)) <= 1e-11 * max(1.0, np.max(np.abs(ref)))


def test_engine_matches_modular_path(rng):
    dom = TorusDomain(2, TWO_PI, 4)
    params = StressParams(q=1.7, kappa=1e-3)
    reg = RegularizationParams(0.02)
    forcing = make_forcing(dom)
    nonstiff, stiff, _ = make_rhs(dom, params, reg, forcing)
    f = random_field(dom, rng, l2_norm=1.4)
    u = f.to_real_vector()
    fused = nonstiff(0.3, u) - stiff * u
    modular = full_rhs(GalerkinState(0.3, f), params, reg, forcing)
    assert np.max(np.abs(fused - modular)) < 1e-13 * max(1.0, np.max(np.abs(modular)))


# ---------------------------------------------------------------------------
# energy terms
# ---------------------------------------------------------------------------

def test_energy_terms_zero_state():
    dom = TorusDomain(2, TWO_PI, 2)
    e = energy_terms(GalerkinState(0.0, SpectralField.zero(dom)),
                     StressParams(q=2.0), RegularizationParams(0.1),
                     make_forcing(dom), 0.3)
    assert (e.kinetic, e.dissipation_q, e.dissipation_lap, e.dissipation_p,
            e.power_in) == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_energy_q2_korn_identity(rng):
    """||Dv||_2^2 = ||grad v||_2^2 / 2 for divergence-free periodic fields."""
    dom = TorusDomain(2, TWO_PI, 4)
    f = random_field(dom, rng, l2_norm=2.0)
    e = energy_terms(GalerkinState(0.0, f), StressParams(q=2.0),
                     RegularizationParams(1.0), None, 0.0)
    # with eps = 1, dissipation_lap is exactly ||grad v||^2
    assert e.dissipation_q == pytest.approx(0.5 * e.dissipation_lap, rel=1e-10)


def test_energy_power_cauchy_schwarz(rng):
    dom = TorusDomain(2, TWO_PI, 3)
    forcing = make_forcing(dom)
    for t in (0.0, 0.37, 1.2):
        f = random_field(dom, rng, l2_norm=rng.uniform(0.2, 3.0))
        e = energy_terms(GalerkinState(t, f), StressParams(q=2.0),
                         RegularizationParams(0.0), forcing, t)
        assert abs(e.power_in) <= forcing.l2_norm(t) * f.l2_norm() * (1 + 1e-12)


def test_viscous_dissipativity(rng):
    """<viscous_rhs(v), v> equals minus the dissipation functionals."""
    dom = TorusDomain(2, TWO_PI, 3)
    params = StressParams(q=2.5, kappa=0.0)
    reg = RegularizationParams(0.15)
    f = random_field(dom, rng, l2_norm=1.5)
    u = f.to_real_vector()
    visc = viscous_rhs(GalerkinState(0.0, f), params, reg)
    e = energy_terms(GalerkinState(0.0, f), params, reg, None, 0.0)
    lhs = np.dot(visc, u)
    rhs = -(e.dissipation_q + e.dissipation_lap + e.dissipation_p)
    assert lhs <= 0.0
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_energy_balance_identity(rng):
    """d/dt ||v||^2/2 from <full_rhs, v> = power_in - total dissipation."""
    dom = TorusDomain(2, TWO_PI, 3)
    params = StressParams(q=2.5, kappa=0.0)
    reg = RegularizationParams(0.05)
    forcing = make_forcing(dom)
    f = random_field(dom, rng, l2_norm=1.1)
    u = f.to_real_vector()
    st = GalerkinState(0.6, f)
    lhs = np.dot(full_rhs(st, params, reg, forcing), u)
    e = energy_terms(st, params, reg, forcing, 0.6)
    rhs = e.power_in - e.dissipation_q - e.dissipation_lap - e.dissipation_p
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)
