"""Right-hand side of the Galerkin coefficient ODE system and energy terms.

For the coefficient vector c of a divergence-free spectral field the system
reads, mode by mode,

    c' = P[ -div(v x v) + div S(Dv) - eps*Lap-symbol*c + eps div S_p(Dv) ] + b

where P is the combined Leray/cutoff projector (automatic in this basis),
S is the power-law stress, S_p the p = 11/5 regularizer stress, and b the
projected body force.  The convective and stress terms are evaluated
pseudo-spectrally on a padded grid; 3/2 padding dealiases the quadratic
convection exactly, while the non-polynomial stress carries a small
residual aliasing that is absorbed into test tolerances.  The eps-Laplacian
is diagonal: its contribution is exactly -eps (2 pi |k| / L)^2 c_k.

Public entry points work on GalerkinState / real coefficient vectors; the
integrator uses `make_rhs`, which returns the nonstiff part and the diagonal
stiff symbol separately.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .basis import (
    ModeBasis,
    SpectralField,
    TorusDomain,
    get_basis,
    grid_size,
)
from .rheology import (
    P_REGULARIZER,
    RegularizationParams,
    StressParams,
    _viscosity,
    frobenius_sq,
)

__all__ = [
    "ForcingMode",
    "ForcingSignal",
    "GalerkinState",
    "EnergyTerms",
    "DegenerateRheologyWarning",
    "convection_rhs",
    "viscous_rhs",
    "forcing_rhs",
    "full_rhs",
    "energy_terms",
    "make_rhs",
]


class DegenerateRheologyWarning(UserWarning):
    """q < 11/5 with kappa = 0: the ODE right-hand side is not Lipschitz."""


# ---------------------------------------------------------------------------
# forcing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForcingMode:
    """One forced spectral mode with a T-periodic scalar time profile."""

    wavevector: tuple
    polarization: int
    amplitude: complex
    profile: str = "constant"  # "constant" or "harmonic"
    harmonic: int = 1
    phase: float = 0.0

    def __post_init__(self):
        if self.profile not in ("constant", "harmonic"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.profile == "harmonic" and self.harmonic < 1:
            raise ValueError("harmonic index must be a positive integer")


class ForcingSignal:
    """Time-periodic body force, given by its divergence-free projection.

    The signal is a finite sum of spectral modes, each modulated by a
    T-periodic profile.  An optional shutoff instant t_bar multiplies the
    whole signal by the window sin^2(pi t / t_bar) on [0, t_bar] and by zero
    on (t_bar, T), so the force is continuous, vanishes after t_bar and
    matches periodically at t = 0 and t = T.
    """

    def __init__(self, domain: TorusDomain, period: float, modes,
                 shutoff: float | None = None, _sup_samples: int = 4096):
        if not (np.isfinite(period) and period > 0):
            raise ValueError(f"period must be positive, got {period}")
        if shutoff is not None and not (0.0 < shutoff < period):
            raise ValueError(f"shutoff must lie in (0, T), got {shutoff}")
        self.domain = domain
        self.period = float(period)
        self.shutoff = None if shutoff is None else float(shutoff)
        self.modes = tuple(modes)
        basis = get_basis(domain)
        lookup = {(m.wavevector, m.polarization): i for i, m in enumerate(basis.modes)}
        idx = []
        for fm in self.modes:
            key = (tuple(fm.wavevector), fm.polarization)
            if key not in lookup:
                raise ValueError(
                    f"forcing mode {key} is not a retained half-space mode of the domain"
                )
            idx.append(lookup[key])
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate forcing modes")
        self._basis = basis
        self._idx = np.array(idx, dtype=np.int64)
        self._amp = np.array([complex(fm.amplitude) for fm in self.modes],
                             dtype=np.complex128)
        # sampled sup of ||b(t)|| over one period (profiles are smooth)
        ts = np.linspace(0.0, self.period, _sup_samples, endpoint=False)
        self.max_l2 = float(max((self.l2_norm(t) for t in ts), default=0.0))

    # -- time profiles ----------------------------------------------------

    # ramp fraction of the shutoff window; sin^2 ramps keep b continuous,
    # vanishing at t = 0, t_bar and (periodically) at t = T
    _RAMP = 0.125

    def _window(self, tau: float) -> float:
        if self.shutoff is None:
            return 1.0
        if tau >= self.shutoff:
            return 0.0
        ramp = self._RAMP * self.shutoff
        if tau < ramp:
            return math.sin(0.5 * math.pi * tau / ramp) ** 2
        if tau > self.shutoff - ramp:
            return math.sin(0.5 * math.pi * (self.shutoff - tau) / ramp) ** 2
        return 1.0

    def _profiles(self, tau: float) -> np.ndarray:
        g = np.empty(len(self.modes))
        for i, fm in enumerate(self.modes):
            if fm.profile == "constant":
                g[i] = 1.0
            else:
                g[i] = math.cos(2.0 * math.pi * fm.harmonic * tau / self.period
                                + fm.phase)
        return g * self._window(tau)

    # -- evaluation ---------------------------------------------------------

    def coefficients(self, t: float) -> np.ndarray:
        """Complex projected coefficients b_k at time t (t taken mod T)."""
        tau = float(t) % self.period
        c = np.zeros(self._basis.n_modes, dtype=np.complex128)
        if len(self.modes):
            c[self._idx] = self._amp * self._profiles(tau)
        return c

    def field(self, t: float) -> SpectralField:
        return SpectralField(self.domain, self.coefficients(t))

    def real_vector(self, t: float) -> np.ndarray:
        return self._basis.scale * self.coefficients(t).view(np.float64)

    def l2_norm(self, t: float) -> float:
        tau = float(t) % self.period
        if not len(self.modes):
            return 0.0
        amp = self._amp * self._profiles(tau)
        return self._basis.scale * float(np.linalg.norm(amp))


@dataclass
class GalerkinState:
    """Galerkin coefficient vector at one instant."""

    time: float
    field: SpectralField


@dataclass
class EnergyTerms:
    """Per-instant energy functionals entering the a priori estimate."""

    kinetic: float            # ||v||_L2^2
    dissipation_q: float      # ||Dv||_Lq^q
    dissipation_lap: float    # eps ||grad v||_L2^2
    dissipation_p: float      # eps ||Dv||_L(11/5)^(11/5)
    power_in: float           # (b, v)


# ---------------------------------------------------------------------------
# pseudo-spectral assembly on raw complex coefficients (hot path)
# ---------------------------------------------------------------------------

def _velocity_grid(basis: ModeBasis, c: np.ndarray, npts: int) -> np.ndarray:
    d = basis.domain.dimension
    gm = basis.grid(npts)
    amp = basis.combine_polarizations(c)
    hat = np.zeros((d,) + (npts,) * d, dtype=np.complex128)
    for a in range(d):
        hat[(a,) + gm.pos_bins] = amp[:, a]
        hat[(a,) + gm.neg_bins] = np.conj(amp[:, a])
    return np.real(np.fft.ifftn(hat, axes=gm.spatial_axes)) * npts ** d


def _sym_gradient_grid(basis: ModeBasis, c: np.ndarray, npts: int) -> np.ndarray:
    d = basis.domain.dimension
    gm = basis.grid(npts)
    amp = basis.combine_polarizations(c)
    ik = 1j * basis.k_phys_unique
    hat = np.zeros((d, d) + (npts,) * d, dtype=np.complex128)
    for a in range(d):
        for b in range(d):
            g = 0.5 * (ik[:, a] * amp[:, b] + ik[:, b] * amp[:, a])
            hat[(a, b) + gm.pos_bins] = g
            hat[(a, b) + gm.neg_bins] = np.conj(g)
    return np.real(np.fft.ifftn(hat, axes=gm.spatial_axes)) * npts ** d


def _gather_tensor(basis: ModeBasis, tensor_grid: np.ndarray, npts: int) -> np.ndarray:
    """Fourier coefficients of a (d, d, grid) tensor at the retained modes."""
    d = basis.domain.dimension
    gm = basis.grid(npts)
    hat = np.fft.fftn(tensor_grid, axes=gm.spatial_axes) / npts ** d
    return hat[(slice(None), slice(None)) + gm.pos_bins_mode]  # (d, d, M)


def _project_div(basis: ModeBasis, tensor_hat_modes: np.ndarray) -> np.ndarray:
    """Mode coefficients of P div(T) from gathered tensor coefficients.

    (div T)_b = d_a T_ab, so the k-th Fourier coefficient is i k_a That_ab,
    and dotting with the polarization vector applies the projector.
    """
    return 1j * np.einsum(
        "ma,abm,mb->m", basis.k_phys, tensor_hat_modes, basis.evec
    )


def _convection_coeffs(basis: ModeBasis, c: np.ndarray, npts: int) -> np.ndarray:
    v = _velocity_grid(basis, c, npts)
    vv = np.einsum("a...,b...->ab...", v, v)
    return -_project_div(basis, _gather_tensor(basis, vv, npts))


def _stress_coeffs(basis: ModeBasis, c: np.ndarray, npts: int,
                   params: StressParams, reg: RegularizationParams) -> np.ndarray:
    """Coefficients of P div(S + S_p), excluding the diagonal eps-Laplacian."""
    D = _sym_gradient_grid(basis, c, npts)
    with np.errstate(all="ignore"):
        m2 = frobenius_sq(D)
        nu = _viscosity(params.kappa + m2, params.q)
        if reg.epsilon > 0.0:
            nu = nu + reg.epsilon * m2 ** 0.1
        S = nu * D
    return _project_div(basis, _gather_tensor(basis, S, npts))


def _encode(basis: ModeBasis, c: np.ndarray) -> np.ndarray:
    return basis.scale * np.ascontiguousarray(c).view(np.float64)


def _decode(basis: ModeBasis, u: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(u, dtype=np.float64).view(np.complex128) / basis.scale


# ---------------------------------------------------------------------------
# public operations on GalerkinState
# ---------------------------------------------------------------------------

def convection_rhs(state: GalerkinState, grid_factor: float = 1.5) -> np.ndarray:
    """Projected convection term as a real coefficient vector."""
    basis = get_basis(state.field.domain)
    npts = grid_size(state.field.domain, grid_factor)
    return _encode(basis, _convection_coeffs(basis, state.field.coefficients, npts))


def viscous_rhs(state: GalerkinState, params: StressParams,
                reg: RegularizationParams, grid_factor: float = 1.5) -> np.ndarray:
    """Power-law stress, eps-Laplacian and p-regularizer terms, combined."""
    if params.degenerate:
        warnings.warn(
            "q < 11/5 with kappa = 0: stress is degenerate at Dv = 0 and the "
            "coefficient ODE loses uniqueness",
            DegenerateRheologyWarning,
            stacklevel=2,
        )
    basis = get_basis(state.field.domain)
    npts = grid_size(state.field.domain, grid_factor)
    c = state.field.coefficients
    out = _stress_coeffs(basis, c, npts, params, reg)
    if reg.epsilon > 0.0:
        out = out - reg.epsilon * basis.lam * c
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("viscous term evaluated to non-finite values")
    return _encode(basis, out)


def forcing_rhs(t: float, forcing: ForcingSignal) -> np.ndarray:
    """Projected forcing coefficients at time t (taken mod T)."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    return forcing.real_vector(t)


def full_rhs(state: GalerkinState, params: StressParams, reg: RegularizationParams,
             forcing: ForcingSignal, grid_factor: float = 1.5) -> np.ndarray:
    """Complete coefficient tendency; exactly the sum of the three parts."""
    return (
        convection_rhs(state, grid_factor)
        + viscous_rhs(state, params, reg, grid_factor)
        + forcing_rhs(state.time, forcing)
    )


def energy_terms(state: GalerkinState, params: StressParams,
                 reg: RegularizationParams, forcing: ForcingSignal | None,
                 t: float | None = None, grid_factor: float = 1.5) -> EnergyTerms:
    """Energy functionals at one instant, by spectral sums and grid quadrature."""
    basis = get_basis(state.field.domain)
    npts = grid_size(state.field.domain, grid_factor)
    tt = state.time if t is None else t
    return _energy_terms_raw(basis, npts, state.field.coefficients, tt,
                             params, reg, forcing)


def _energy_terms_raw(basis: ModeBasis, npts: int, c: np.ndarray, t: float,
                      params: StressParams, reg: RegularizationParams,
                      forcing: ForcingSignal | None) -> EnergyTerms:
    vol = basis.domain.volume
    two_vol = basis.scale ** 2  # 2 L^d
    kinetic = two_vol * float(np.vdot(c, c).real)
    lap = reg.epsilon * two_vol * float(np.sum(basis.lam * np.abs(c) ** 2))
    D = _sym_gradient_grid(basis, c, npts)
    m2 = frobenius_sq(D)
    d = basis.domain.dimension
    mean_axes = tuple(range(-d, 0))
    diss_q = vol * float((m2 ** (0.5 * params.q)).mean(axis=mean_axes))
    diss_p = reg.epsilon * vol * float((m2 ** (0.5 * P_REGULARIZER)).mean(axis=mean_axes))
    if forcing is None:
        power = 0.0
    else:
        power = two_vol * float(np.real(np.vdot(forcing.coefficients(t), c)))
    return EnergyTerms(kinetic=kinetic, dissipation_q=diss_q, dissipation_lap=lap,
                       dissipation_p=diss_p, power_in=power)


# ---------------------------------------------------------------------------
# integrator hookup
# ---------------------------------------------------------------------------

class _RhsEngine:
    """Fused tendency assembly: one batched inverse and one batched forward
    FFT per evaluation.

    Velocity components and the symmetric-gradient components share a single
    stacked spectral array; the combined tensor M = S(Dv) + eps S_p(Dv)
    - v (x) v is transformed back in one call and contracted against
    i k (x) e per mode.  Owns scratch buffers, so instances must not be
    shared across threads; each integration builds its own.
    """

    def __init__(self, basis: ModeBasis, npts: int, params: StressParams,
                 reg: RegularizationParams):
        self.basis = basis
        self.npts = npts
        self.params = params
        self.reg = reg
        d = basis.domain.dimension
        self.dim = d
        self.pairs = [(a, b) for a in range(d) for b in range(a, d)]
        self.weights = np.array([1.0 if a == b else 2.0 for a, b in self.pairs])
        gm = basis.grid(npts)
        self.pos_k = gm.pos_bins
        self.neg_k = gm.neg_bins
        self.pos_m = gm.pos_bins_mode
        self.axes = gm.spatial_axes
        nsym = len(self.pairs)
        self.n_sym = nsym
        shape = (npts,) * d
        self.H = np.zeros((d + nsym,) + shape, dtype=np.complex128)
        self.ik_half = 0.5j * basis.k_phys_unique  # (n_k, d)
        # contraction weights: cdot_m = sum_s W[m, s] * Mhat_s(m)
        kp, ev = basis.k_phys, basis.evec
        W = np.empty((basis.n_modes, nsym), dtype=np.complex128)
        for s, (a, b) in enumerate(self.pairs):
            w = kp[:, a] * ev[:, b]
            if a != b:
                w = w + kp[:, b] * ev[:, a]
            W[:, s] = 1j * w
        self.W = W

    def tendency(self, c: np.ndarray) -> np.ndarray:
        """Complex coefficients of P[div(S + S_p) - div(v x v)]."""
        basis, d, npts = self.basis, self.dim, self.npts
        amp = basis.combine_polarizations(c)  # (n_k, d)
        H = self.H
        H[...] = 0.0
        for a in range(d):
            H[(a,) + self.pos_k] = amp[:, a]
            H[(a,) + self.neg_k] = np.conj(amp[:, a])
        for s, (a, b) in enumerate(self.pairs):
            g = self.ik_half[:, a] * amp[:, b] + self.ik_half[:, b] * amp[:, a]
            H[(d + s,) + self.pos_k] = g
            H[(d + s,) + self.neg_k] = np.conj(g)
        G = np.real(np.fft.ifftn(H, axes=self.axes)) * npts ** d
        v, D = G[:d], G[d:]
        with np.errstate(all="ignore"):
            m2 = np.einsum("s...,s...->...", self.weights[(...,) + (None,) * d] * D, D)
            nu = _viscosity(self.params.kappa + m2, self.params.q)
            if self.reg.epsilon > 0.0:
                nu = nu + self.reg.epsilon * m2 ** 0.1
            P = np.empty_like(D)
            for s, (a, b) in enumerate(self.pairs):
                P[s] = nu * D[s] - v[a] * v[b]
        M_hat = np.fft.fftn(P, axes=self.axes)[(slice(None),) + self.pos_m]  # (nsym, M)
        return np.einsum("ms,sm->m", self.W, M_hat) / npts ** d

    def sym_gradient(self, c: np.ndarray) -> np.ndarray:
        return _sym_gradient_grid(self.basis, c, self.npts)


def make_rhs(domain: TorusDomain, params: StressParams, reg: RegularizationParams,
             forcing: ForcingSignal, grid_factor: float = 1.5):
    """Build the ODE right-hand side split for the IMEX integrator.

    Returns (nonstiff, stiff_symbol, energy_fn): `nonstiff(t, u)` assembles
    convection + stress + p-regularizer + forcing on real vectors,
    `stiff_symbol` is the nonnegative diagonal eps*(2 pi |k|/L)^2 handled by
    the integrating factor, and `energy_fn(t, u)` evaluates EnergyTerms.
    """
    basis = get_basis(domain)
    npts = grid_size(domain, grid_factor)
    if params.degenerate:
        warnings.warn(
            "q < 11/5 with kappa = 0: stress is degenerate at Dv = 0 and the "
            "coefficient ODE loses uniqueness",
            DegenerateRheologyWarning,
            stacklevel=2,
        )
    engine = _RhsEngine(basis, npts, params, reg)
    scale = basis.scale

    def nonstiff(t: float, u: np.ndarray) -> np.ndarray:
        c = np.ascontiguousarray(u, dtype=np.float64).view(np.complex128) / scale
        out = engine.tendency(c)
        return scale * out.view(np.float64) + forcing.real_vector(t)

    stiff_symbol = reg.epsilon * np.repeat(basis.lam, 2)

    def energy_fn(t: float, u: np.ndarray) -> EnergyTerms:
        return _energy_terms_raw(basis, npts, _decode(basis, u), t,
                                 params, reg, forcing)

    return nonstiff, stiff_symbol, energy_fn
