"""Adaptive integration: closed-form decay, reference oracle, energy checks."""

import math

import numpy as np
import pytest

from periflow.basis import SpectralField, TorusDomain, get_basis, random_field
from periflow.galerkin import (
    ForcingMode,
    ForcingSignal,
    GalerkinState,
    make_rhs,
)
from periflow.integrate import (
    DegenerateRheologyError,
    IntegrationError,
    IntegratorConfig,
    check_energy_step,
    integrate,
)
from periflow.rheology import RegularizationParams, StressParams

from .oracles import rk4_reference, stokes_rate

TWO_PI = 2.0 * math.pi

pytestmark = pytest.mark.filterwarnings(
    "ignore::periflow.galerkin.DegenerateRheologyWarning")


def single_mode(dom, wavevector, value):
    basis = get_basis(dom)
    c = np.zeros(basis.n_modes, dtype=complex)
    idx = [i for i, m in enumerate(basis.modes)
           if m.wavevector == wavevector and m.polarization == 0][0]
    c[idx] = value
    return SpectralField(dom, c), idx


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(min_dt=1.0, max_dt=0.1)
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="leapfrog")
    with pytest.raises(ValueError):
        IntegratorConfig(sample_count=0)


def test_equilibrium_zero_state():
    dom = TorusDomain(2, TWO_PI, 2)
    forcing = ForcingSignal(dom, 1.0, [])
    cfg = IntegratorConfig(sample_count=16, override_degenerate=True)
    final, rec = integrate(GalerkinState(0.0, SpectralField.zero(dom)),
                           0.0, 1.0, StressParams(q=2.0), RegularizationParams(0.0),
                           forcing, cfg)
    assert final.field.l2_norm() == 0.0
    assert np.all(rec.kinetic == 0.0)


def test_stokes_decay_closed_form():
    dom = TorusDomain(2, TWO_PI, 2)
    f, idx = single_mode(dom, (1, 0), 1.0 + 0.5j)
    forcing = ForcingSignal(dom, 3.0, [])
    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, sample_count=64,
                           override_degenerate=True)
    final, rec = integrate(GalerkinState(0.0, f), 0.0, 3.0,
                           StressParams(q=2.0), RegularizationParams(0.0),
                           forcing, cfg)
    nu = stokes_rate(dom, (1, 0))
    exact = f.coefficients[idx] * np.exp(-nu * 3.0)
    got = final.field.coefficients[idx]
    assert abs(got - exact) <= 1e-8 * abs(exact)


def test_imex_factor_matches_explicit_scheme(rng):
    """Both schemes solve the same system; results agree to tolerance."""
    dom = TorusDomain(2, TWO_PI, 2)
    f = random_field(dom, rng, l2_norm=0.8)
    params = StressParams(q=2.5, kappa=0.0)
    reg = RegularizationParams(0.2)
    forcing = ForcingSignal(dom, 1.0, [ForcingMode((1, 0), 0, 0.3, "harmonic")])
    outs = []
    for scheme in ("imex_stiff", "explicit_adaptive"):
        cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, sample_count=8,
                               scheme=scheme)
        final, _ = integrate(GalerkinState(0.0, f), 0.0, 1.0, params, reg,
                             forcing, cfg)
        outs.append(final.field.to_real_vector())
    assert np.max(np.abs(outs[0] - outs[1])) < 1e-7


def test_against_fixed_step_reference(rng):
    dom = TorusDomain(2, TWO_PI, 2)
    f = random_field(dom, rng, l2_norm=1.0)
    params = StressParams(q=2.5, kappa=0.0)
    reg = RegularizationParams(1e-2)
    forcing = ForcingSignal(dom, 1.0, [ForcingMode((1, 1), 0, 0.5, "harmonic")])
    nonstiff, stiff, _ = make_rhs(dom, params, reg, forcing)

    def full(t, u):
        return nonstiff(t, u) - stiff * u

    ref = rk4_reference(full, f.to_real_vector(), 0.0, 1.0, 4000)
    rel = 1e-6
    cfg = IntegratorConfig(rel_tol=rel, abs_tol=1e-9, sample_count=4)
    final, _ = integrate(GalerkinState(0.0, f), 0.0, 1.0, params, reg,
                         forcing, cfg)
    diff = np.linalg.norm(final.field.to_real_vector() - ref)
    assert diff <= 10.0 * rel * max(1.0, np.linalg.norm(ref))


def test_tolerance_refinement_converges(rng):
    dom = TorusDomain(2, TWO_PI, 2)
    f = random_field(dom, rng, l2_norm=1.0)
    params = StressParams(q=2.5, kappa=0.0)
    reg = RegularizationParams(0.0)
    forcing = ForcingSignal(dom, 1.0, [ForcingMode((1, 0), 0, 0.4, "harmonic")])
    nonstiff, stiff, _ = make_rhs(dom, params, reg, forcing)
    ref = rk4_reference(lambda t, u: nonstiff(t, u), f.to_real_vector(),
                        0.0, 1.0, 6000)
    devs = []
    for rel in (1e-4, 5e-5, 2.5e-5):
        cfg = IntegratorConfig(rel_tol=rel, abs_tol=rel * 1e-2, sample_count=4)
        final, _ = integrate(GalerkinState(0.0, f), 0.0, 1.0, params, reg,
                             forcing, cfg)
        devs.append(np.linalg.norm(final.field.to_real_vector() - ref))
    assert devs[2] < devs[1] < devs[0]


def test_zero_forcing_monotone_decay(rng):
    dom = TorusDomain(2, TWO_PI, 3)
    f = random_field(dom, rng, l2_norm=1.7)
    forcing = ForcingSignal(dom, 2.0, [])
    cfg = IntegratorConfig(sample_count=128)
    final, rec = integrate(GalerkinState(0.0, f), 0.0, 2.0,
                           StressParams(q=2.5, kappa=0.0),
                           RegularizationParams(0.0), forcing, cfg)
    drops = np.diff(np.sqrt(rec.kinetic))
    assert np.all(drops <= 1e-10 * math.sqrt(rec.kinetic[0]))


def test_energy_step_checks_zero_forcing(rng, constants_for):
    dom = TorusDomain(2, TWO_PI, 2)
    consts = constants_for(dom, 2.0)
    f = random_field(dom, rng, l2_norm=1.0)
    forcing = ForcingSignal(dom, 1.5, [])
    cfg = IntegratorConfig(sample_count=64, override_degenerate=True)
    _, rec = integrate(GalerkinState(0.0, f), 0.0, 1.5, StressParams(q=2.0),
                       RegularizationParams(0.0), forcing, cfg, consts=consts)
    assert rec.step_slack_min >= 0.0
    assert rec.step_slack_violations == 0
    for i in range(len(rec) - 1):
        ok, slack = check_energy_step(rec, i, consts, StressParams(q=2.0))
        assert ok
        assert slack >= -1e-12


def test_stokes_energy_slack_is_dissipation_surplus(constants_for):
    """Single-mode q = 2 decay: the slack equals the untracked dissipation."""
    dom = TorusDomain(2, TWO_PI, 2)
    consts = constants_for(dom, 2.0)
    f, idx = single_mode(dom, (1, 0), 1.0)
    forcing = ForcingSignal(dom, 1.0, [])
    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, sample_count=32,
                           override_degenerate=True)
    _, rec = integrate(GalerkinState(0.0, f), 0.0, 1.0, StressParams(q=2.0),
                       RegularizationParams(0.0), forcing, cfg, consts=consts)
    for i in range(len(rec) - 1):
        ok, slack = check_energy_step(rec, i, consts, StressParams(q=2.0))
        assert ok
        # dE = -2 int ||Dv||^2; the check keeps C1 = 1/2 of it, so the slack
        # is (2 - C1) int ||Dv||^2 up to the per-step trapezoid error
        surplus = (2.0 - consts.C1) * (rec.int_dissipation_q[i + 1]
                                       - rec.int_dissipation_q[i])
        assert slack == pytest.approx(surplus, rel=1e-3)


@pytest.mark.parametrize("q", [1.4, 2.0, 2.5])
def test_energy_step_property_sweep(q, rng, constants_for):
    dom = TorusDomain(2, TWO_PI, 2)
    consts = constants_for(dom, q)
    kappa = 0.0 if q >= 2.2 else 1e-4
    params = StressParams(q=q, kappa=kappa)
    forcing = ForcingSignal(dom, 1.0, [ForcingMode((1, 0), 0, 0.5, "harmonic"),
                                       ForcingMode((0, 1), 0, 0.3j, "constant")])
    f = random_field(dom, rng, l2_norm=0.7)
    cfg = IntegratorConfig(sample_count=64, override_degenerate=True)
    _, rec = integrate(GalerkinState(0.0, f), 0.0, 1.0, params,
                       RegularizationParams(1e-2), forcing, cfg, consts=consts)
    assert rec.step_slack_violations == 0
    checks = [check_energy_step(rec, i, consts, params)
              for i in range(len(rec) - 1)]
    assert all(ok for ok, _ in checks)


def test_clamp_event_logged(rng):
    dom = TorusDomain(2, TWO_PI, 2)
    f = random_field(dom, rng, l2_norm=0.05)
    forcing = ForcingSignal(dom, 4.0, [])
    cfg = IntegratorConfig(rel_tol=1e-8, abs_tol=1e-14, sample_count=64,
                           clamp_norm=1e-11)
    final, rec = integrate(GalerkinState(0.0, f), 0.0, 4.0,
                           StressParams(q=1.5, kappa=1e-6),
                           RegularizationParams(1e-3), forcing, cfg)
    assert len(rec.clamp_events) == 1
    assert final.field.l2_norm() == 0.0
    t_clamp, norm_at_clamp = rec.clamp_events[0]
    assert 0.0 < norm_at_clamp < 1e-11


def test_degenerate_guard():
    dom = TorusDomain(2, TWO_PI, 2)
    f, _ = single_mode(dom, (1, 0), 1.0)
    forcing = ForcingSignal(dom, 1.0, [])
    with pytest.raises(DegenerateRheologyError):
        integrate(GalerkinState(0.0, f), 0.0, 1.0,
                  StressParams(q=1.5, kappa=0.0), RegularizationParams(0.0),
                  forcing, IntegratorConfig())


def test_step_underflow_aborts():
    dom = TorusDomain(2, TWO_PI, 2)
    f, _ = single_mode(dom, (1, 0), 1.0)
    forcing = ForcingSignal(dom, 1.0, [ForcingMode((1, 0), 0, 5.0, "harmonic")])
    cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, min_dt=0.2,
                           max_dt=1.0, sample_count=1, override_degenerate=True)
    with pytest.raises(IntegrationError, match="underflow"):
        integrate(GalerkinState(0.0, f), 0.0, 1.0, StressParams(q=2.0),
                  RegularizationParams(0.0), forcing, cfg)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_initial_state_aborts():
    dom = TorusDomain(2, TWO_PI, 2)
    basis = get_basis(dom)
    c = np.full(basis.n_modes, 1e200 + 0.0j)
    forcing = ForcingSignal(dom, 1.0, [])
    with pytest.raises(IntegrationError):
        integrate(GalerkinState(0.0, SpectralField(dom, c)), 0.0, 1.0,
                  StressParams(q=2.5, kappa=0.0), RegularizationParams(0.0),
                  forcing, IntegratorConfig(sample_count=1, min_dt=1e-10))


def test_trajectory_record_invariants(rng):
    dom = TorusDomain(2, TWO_PI, 2)
    f = random_field(dom, rng, l2_norm=0.5)
    forcing = ForcingSignal(dom, 1.0, [ForcingMode((1, 0), 0, 0.2, "constant")])
    cfg = IntegratorConfig(sample_count=32)
    _, rec = integrate(GalerkinState(0.0, f), 0.0, 1.0,
                       StressParams(q=2.5, kappa=0.0),
                       RegularizationParams(0.0), forcing, cfg)
    assert np.all(np.diff(rec.times) > 0)
    for series in (rec.int_dissipation_q, rec.int_dissipation_lap,
                   rec.int_dissipation_p, rec.int_forcing_qdual):
        assert np.all(np.diff(series) >= -1e-15)
    assert rec.states.shape == (33, f.to_real_vector().size)
    assert rec.accepted_steps >= 32