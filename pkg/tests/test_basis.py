"""Divergence-free basis: enumeration, transforms, projections, serialization."""

import math

import numpy as np
import pytest

from periflow.basis import (
    DivFreeMode,
    SpectralField,
    TorusDomain,
    analyze,
    enumerate_modes,
    field_from_dict,
    field_to_dict,
    get_basis,
    grid_quadrature,
    grid_size,
    gradient,
    random_field,
    sym_gradient,
    synthesize,
)

TWO_PI = 2.0 * math.pi


def test_mode_count_d2_nmax1():
    dom = TorusDomain(2, TWO_PI, 1)
    modes = enumerate_modes(dom)
    assert len(modes) == 4
    assert {m.wavevector for m in modes} == {(1, 0), (0, 1), (1, 1), (1, -1)}
    assert all(m.polarization == 0 for m in modes)


def test_mode_count_d3_two_polarizations():
    dom = TorusDomain(3, TWO_PI, 1)
    modes = enumerate_modes(dom)
    per_k = {}
    for m in modes:
        per_k.setdefault(m.wavevector, []).append(m.polarization)
    assert all(sorted(p) == [0, 1] for p in per_k.values())
    # half of the 3^3 - 1 nonzero lattice points, two polarizations each
    assert len(modes) == 2 * 13


def test_total_mode_count_formula():
    for d, n in [(2, 3), (3, 2)]:
        dom = TorusDomain(d, TWO_PI, n)
        box = (2 * n + 1) ** d - 1
        assert len(enumerate_modes(dom)) == (d - 1) * box // 2


def test_nmax_zero_rejected():
    with pytest.raises(ValueError):
        TorusDomain(2, TWO_PI, 0)


def test_zero_wavevector_rejected():
    with pytest.raises(ValueError):
        DivFreeMode(wavevector=(0, 0), polarization=0)


def test_mode_ordering_frozen():
    dom = TorusDomain(2, TWO_PI, 1)
    expected = [(0, 1), (1, -1), (1, 0), (1, 1)]  # lexicographic half-space
    assert [m.wavevector for m in enumerate_modes(dom)] == expected
    assert enumerate_modes(dom) == enumerate_modes(dom)


@pytest.mark.parametrize("d", [2, 3])
def test_polarization_orthogonality(d):
    dom = TorusDomain(d, TWO_PI, 2)
    basis = get_basis(dom)
    kdot = np.einsum("md,md->m", basis.k_int.astype(float), basis.evec)
    # integer cross construction: orthogonal up to the normalization rounding
    assert np.max(np.abs(kdot)) < 1e-15 * (1 + dom.mode_cutoff)
    norms = np.linalg.norm(basis.evec, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-14


def test_d3_polarizations_mutually_orthogonal():
    dom = TorusDomain(3, TWO_PI, 2)
    basis = get_basis(dom)
    e = basis.evec.reshape(-1, 2, 3)
    dots = np.einsum("ma,ma->m", e[:, 0], e[:, 1])
    assert np.max(np.abs(dots)) < 1e-15


def test_synthesize_single_mode_closed_form():
    dom = TorusDomain(2, TWO_PI, 1)
    basis = get_basis(dom)
    idx = [i for i, m in enumerate(basis.modes) if m.wavevector == (1, 0)][0]
    c = np.zeros(basis.n_modes, dtype=complex)
    c[idx] = 1.0
    v = synthesize(SpectralField(dom, c))
    npts = v.shape[-1]
    x = TWO_PI * np.arange(npts) / npts
    # v = c e e^{ix} + c.c. = 2 cos(x) * (0, 1)
    expected_vy = 2.0 * np.cos(x)[:, None] * np.ones(npts)[None, :]
    assert np.max(np.abs(v[0])) < 1e-13
    assert np.max(np.abs(v[1] - expected_vy)) < 1e-13


@pytest.mark.parametrize("d", [2, 3])
def test_round_trip_analyze_synthesize(d, rng):
    dom = TorusDomain(d, 1.7, 3)
    f = random_field(dom, rng, l2_norm=2.5)
    f2 = analyze(synthesize(f), dom)
    err = np.max(np.abs(f2.coefficients - f.coefficients))
    assert err < 1e-12 * max(1.0, np.max(np.abs(f.coefficients)))


def test_zero_coefficients_zero_grid():
    dom = TorusDomain(2, TWO_PI, 2)
    v = synthesize(SpectralField.zero(dom))
    assert np.all(v == 0.0)


def test_analyze_constant_field_dropped():
    dom = TorusDomain(2, TWO_PI, 2)
    npts = grid_size(dom)
    v = np.ones((2, npts, npts))
    f = analyze(v, dom)
    assert np.max(np.abs(f.coefficients)) < 1e-14  # FFT roundoff only


def test_analyze_annihilates_gradients():
    dom = TorusDomain(2, TWO_PI, 3)
    npts = grid_size(dom)
    x = TWO_PI * np.arange(npts) / npts
    X, Y = np.meshgrid(x, x, indexing="ij")
    # grad of phi = sin(x)cos(2y): a pure gradient field
    v = np.stack([np.cos(X) * np.cos(2 * Y), -2.0 * np.sin(X) * np.sin(2 * Y)])
    f = analyze(v, dom)
    assert np.max(np.abs(f.coefficients)) < 1e-14


def test_leray_projection_idempotent(rng):
    dom = TorusDomain(2, TWO_PI, 3)
    npts = grid_size(dom)
    v = rng.standard_normal((2, npts, npts))
    once = analyze(v, dom)
    twice = analyze(synthesize(once), dom)
    assert np.max(np.abs(once.coefficients - twice.coefficients)) < 1e-13


def test_analyze_rejects_bad_input():
    dom = TorusDomain(2, TWO_PI, 2)
    npts = grid_size(dom)
    bad = np.ones((2, npts, npts))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        analyze(bad, dom)
    with pytest.raises(ValueError):
        analyze(np.ones((2, 3, 3)), dom)  # too few points for the cutoff
    with pytest.raises(ValueError):
        synthesize(SpectralField.zero(dom), grid_factor=0.5)


def test_parseval(rng):
    dom = TorusDomain(2, 2.9, 4)
    f = random_field(dom, rng, l2_norm=3.1)
    v = synthesize(f)
    quad = grid_quadrature(np.sum(v ** 2, axis=0), dom)
    spectral = f.l2_norm() ** 2
    assert abs(quad - spectral) < 1e-10 * spectral


def test_real_vector_round_trip_and_norm(rng):
    dom = TorusDomain(3, TWO_PI, 2)
    f = random_field(dom, rng, l2_norm=1.3)
    u = f.to_real_vector()
    assert abs(np.linalg.norm(u) - f.l2_norm()) < 1e-13
    back = SpectralField.from_real_vector(dom, u)
    # one multiply and one divide by the same scale: 1-ulp round trip
    assert np.allclose(back.coefficients, f.coefficients, rtol=1e-15, atol=0.0)


def test_inner_product_matches_quadrature(rng):
    dom = TorusDomain(2, TWO_PI, 3)
    f = random_field(dom, rng, l2_norm=1.0)
    g = random_field(dom, rng, l2_norm=2.0)
    vf, vg = synthesize(f), synthesize(g)
    quad = grid_quadrature(np.sum(vf * vg, axis=0), dom)
    assert abs(f.inner(g) - quad) < 1e-10 * max(1.0, abs(quad))


def test_sym_gradient_single_mode_closed_form():
    dom = TorusDomain(2, TWO_PI, 1)
    basis = get_basis(dom)
    idx = [i for i, m in enumerate(basis.modes) if m.wavevector == (1, 0)][0]
    c = np.zeros(basis.n_modes, dtype=complex)
    c[idx] = 1.0
    D = sym_gradient(SpectralField(dom, c))
    npts = D.shape[-1]
    x = TWO_PI * np.arange(npts) / npts
    # v = (0, 2cos x): Dv = -sin(x) * offdiag
    expected = -np.sin(x)[:, None] * np.ones(npts)[None, :]
    assert np.max(np.abs(D[0, 1] - expected)) < 1e-13
    assert np.max(np.abs(D[1, 0] - expected)) < 1e-13
    assert np.max(np.abs(D[0, 0])) < 1e-14
    assert np.max(np.abs(D[1, 1])) < 1e-14


@pytest.mark.parametrize("d", [2, 3])
def test_sym_gradient_trace_free(d, rng):
    dom = TorusDomain(d, TWO_PI, 2)
    f = random_field(dom, rng, l2_norm=2.0)
    D = sym_gradient(f)
    trace = np.trace(D, axis1=0, axis2=1)
    assert np.max(np.abs(trace)) < 1e-12


def test_sym_gradient_zero_field():
    dom = TorusDomain(2, TWO_PI, 2)
    assert np.all(sym_gradient(SpectralField.zero(dom)) == 0.0)


def test_gradient_consistency_with_sym(rng):
    dom = TorusDomain(2, TWO_PI, 2)
    f = random_field(dom, rng, l2_norm=1.0)
    g = gradient(f)
    D = sym_gradient(f)
    assert np.max(np.abs(0.5 * (g + np.swapaxes(g, 0, 1)) - D)) < 1e-13


def test_grid_size_dealiasing():
    dom = TorusDomain(2, TWO_PI, 8)
    n = grid_size(dom, 1.5)
    assert n >= 3 * dom.mode_cutoff + 1  # exact for quadratic products
    assert n % 2 == 1


def test_serialization_round_trip(rng):
    for d in (2, 3):
        dom = TorusDomain(d, 1.234567, 2)
        f = random_field(dom, rng, l2_norm=0.7)
        data = field_to_dict(f)
        g = field_from_dict(data)
        assert g.domain == f.domain
        assert np.array_equal(g.coefficients, f.coefficients)


def test_serialization_rejects_reordered_modes(rng):
    dom = TorusDomain(2, TWO_PI, 1)
    data = field_to_dict(random_field(dom, rng))
    data["modes"][0], data["modes"][1] = data["modes"][1], data["modes"][0]
    with pytest.raises(ValueError):
        field_from_dict(data)
