"""Divergence-free trigonometric Galerkin basis on the periodic box.

Velocity fields on the d-torus [0, L)^d (d = 2 or 3) are represented by
complex amplitudes attached to divergence-free Fourier modes.  For every
integer wavevector k with 0 < max_i |k_i| <= n_max we keep one
representative of the Hermitian pair {k, -k} and d-1 real polarization
vectors orthogonal to k, so divergence-freeness and zero mean hold by
construction.  The physical field is

    v(x) = sum_(k,s) [ c_(k,s) e_s(k) exp(i 2 pi k.x / L) + c.c. ]

and the L2 norm satisfies ||v||^2 = 2 L^d sum |c|^2 (Parseval over the
full +/-k lattice).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product
import math

import numpy as np

__all__ = [
    "TorusDomain",
    "DivFreeMode",
    "SpectralField",
    "enumerate_modes",
    "synthesize",
    "analyze",
    "gradient",
    "sym_gradient",
    "grid_size",
    "random_field",
    "field_to_dict",
    "field_from_dict",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TorusDomain:
    """Periodic box [0, L)^d with spectral cutoff max_i |k_i| <= mode_cutoff."""

    dimension: int
    side_length: float
    mode_cutoff: int

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        if not (np.isfinite(self.side_length) and self.side_length > 0):
            raise ValueError(f"side_length must be positive, got {self.side_length}")
        if self.mode_cutoff < 1:
            raise ValueError(
                f"mode_cutoff must be >= 1, got {self.mode_cutoff} "
                "(an empty basis gives a degenerate solver state)"
            )

    @property
    def volume(self) -> float:
        return self.side_length ** self.dimension


@dataclass(frozen=True)
class DivFreeMode:
    """One divergence-free Fourier mode: wavevector plus polarization index."""

    wavevector: tuple
    polarization: int

    def __post_init__(self):
        if not any(self.wavevector):
            raise ValueError("zero wavevector is excluded (zero-mean fields)")


def _in_half_space(k) -> bool:
    """Canonical representative of the Hermitian pair: first nonzero entry > 0."""
    for ki in k:
        if ki != 0:
            return ki > 0
    return False


def _polarizations(k) -> np.ndarray:
    """Real orthonormal vectors spanning the plane orthogonal to k.

    Integer cross products are used so that k . e vanishes exactly in
    floating point.
    """
    k = np.asarray(k, dtype=float)
    d = k.size
    if d == 2:
        e = np.array([-k[1], k[0]])
        return (e / np.linalg.norm(e))[None, :]
    # d == 3: reference axis = axis of smallest |k_i| (smallest index on ties)
    axis = int(np.argmin(np.abs(k)))
    a = np.zeros(3)
    a[axis] = 1.0
    e1 = np.cross(k, a)
    e2 = np.cross(k, e1)
    return np.array([e1 / np.linalg.norm(e1), e2 / np.linalg.norm(e2)])


def enumerate_modes(domain: TorusDomain) -> list:
    """Ordered divergence-free modes: lexicographic in k, then polarization."""
    n = domain.mode_cutoff
    modes = []
    for k in product(range(-n, n + 1), repeat=domain.dimension):
        if not any(k) or not _in_half_space(k):
            continue
        for pol in range(domain.dimension - 1):
            modes.append(DivFreeMode(wavevector=k, polarization=pol))
    return modes


def grid_size(domain: TorusDomain, grid_factor: float = 1.5) -> int:
    """Points per axis for pseudo-spectral work at the given padding factor.

    The default 3/2 padding gives N = 3*n_max + 1 (rounded up to odd), which
    dealiases quadratic products exactly.  Odd sizes avoid the ambiguous
    Nyquist mode.
    """
    if grid_factor < 1.0:
        raise ValueError(f"grid_factor must be >= 1, got {grid_factor}")
    n = math.ceil(2.0 * grid_factor * domain.mode_cutoff + 1.0)
    n = max(n, 2 * domain.mode_cutoff + 1)
    if n % 2 == 0:
        n += 1
    return n


class _GridMap:
    """Scatter/gather index tables between mode storage and an FFT grid."""

    def __init__(self, basis: "ModeBasis", npts: int):
        if npts < 2 * basis.domain.mode_cutoff + 1:
            raise ValueError(
                f"grid with {npts} points per axis cannot hold modes up to "
                f"|k| = {basis.domain.mode_cutoff}"
            )
        self.npts = npts
        d = basis.domain.dimension
        k_uniq = basis.k_unique
        self.pos_bins = tuple(k_uniq[:, a] % npts for a in range(d))
        self.neg_bins = tuple((-k_uniq[:, a]) % npts for a in range(d))
        # per-mode gather bins (modes with the same k share a bin)
        k_modes = basis.k_int
        self.pos_bins_mode = tuple(k_modes[:, a] % npts for a in range(d))
        self.spatial_axes = tuple(range(-d, 0))


class ModeBasis:
    """Precomputed arrays for one domain: wavevectors, polarizations, symbols."""

    def __init__(self, domain: TorusDomain):
        self.domain = domain
        self.modes = enumerate_modes(domain)
        d = domain.dimension
        self.n_pol = d - 1
        self.k_int = np.array([m.wavevector for m in self.modes], dtype=np.int64)
        self.pol = np.array([m.polarization for m in self.modes], dtype=np.int64)
        self.evec = np.vstack([_polarizations(m.wavevector)[m.polarization]
                               for m in self.modes])
        self.k_phys = TWO_PI * self.k_int / domain.side_length
        self.lam = np.sum(self.k_phys ** 2, axis=1)  # Stokes symbol |k|^2
        self.k_unique = self.k_int[:: self.n_pol]
        self.k_phys_unique = self.k_phys[:: self.n_pol]
        self.n_modes = len(self.modes)
        self.n_wavevectors = self.k_unique.shape[0]
        # ||v||_{L2} equals the Euclidean norm of scale * [Re c; Im c]
        self.scale = math.sqrt(2.0 * domain.volume)
        self._grids = {}

    def grid(self, npts: int) -> _GridMap:
        if npts not in self._grids:
            self._grids[npts] = _GridMap(self, npts)
        return self._grids[npts]

    # -- coefficient layout helpers -------------------------------------

    def combine_polarizations(self, coeffs: np.ndarray) -> np.ndarray:
        """Full Fourier vector amplitude per unique wavevector, shape (n_k, d)."""
        d = self.domain.dimension
        per_mode = coeffs[:, None] * self.evec  # (M, d)
        return per_mode.reshape(self.n_wavevectors, self.n_pol, d).sum(axis=1)

    def project_polarizations(self, vec_hat: np.ndarray) -> np.ndarray:
        """Mode coefficients from per-mode full Fourier vectors, shape (M,)."""
        return np.einsum("md,md->m", self.evec, vec_hat)


@lru_cache(maxsize=None)
def get_basis(domain: TorusDomain) -> ModeBasis:
    return ModeBasis(domain)


@dataclass
class SpectralField:
    """Divergence-free velocity field as complex amplitudes per mode."""

    domain: TorusDomain
    coefficients: np.ndarray

    def __post_init__(self):
        basis = get_basis(self.domain)
        c = np.asarray(self.coefficients, dtype=np.complex128)
        if c.shape != (basis.n_modes,):
            raise ValueError(
                f"expected {basis.n_modes} coefficients, got shape {c.shape}"
            )
        self.coefficients = c

    # -- norms and inner products ----------------------------------------

    def l2_norm(self) -> float:
        """||v||_{L2}, computed spectrally (exact Parseval)."""
        basis = get_basis(self.domain)
        return basis.scale * float(np.linalg.norm(self.coefficients))

    def inner(self, other: "SpectralField") -> float:
        """L2 inner product (v, w) of two fields on the same domain."""
        if other.domain != self.domain:
            raise ValueError("fields live on different domains")
        basis = get_basis(self.domain)
        return basis.scale ** 2 * float(
            np.real(np.vdot(self.coefficients, other.coefficients))
        )

    # -- real ODE state vector --------------------------------------------

    def to_real_vector(self) -> np.ndarray:
        """Real coefficient vector u with |u| = ||v||_{L2} (orthonormal basis)."""
        basis = get_basis(self.domain)
        return basis.scale * self.coefficients.view(np.float64).copy()

    @staticmethod
    def from_real_vector(domain: TorusDomain, u: np.ndarray) -> "SpectralField":
        basis = get_basis(domain)
        u = np.ascontiguousarray(u, dtype=np.float64)
        if u.shape != (2 * basis.n_modes,):
            raise ValueError(f"expected length {2 * basis.n_modes}, got {u.shape}")
        return SpectralField(domain, u.view(np.complex128) / basis.scale)

    # -- convenience arithmetic (same domain) ------------------------------

    def __add__(self, other):
        return SpectralField(self.domain, self.coefficients + other.coefficients)

    def __sub__(self, other):
        return SpectralField(self.domain, self.coefficients - other.coefficients)

    def __mul__(self, a):
        return SpectralField(self.domain, a * self.coefficients)

    __rmul__ = __mul__

    def copy(self) -> "SpectralField":
        return SpectralField(self.domain, self.coefficients.copy())

    @staticmethod
    def zero(domain: TorusDomain) -> "SpectralField":
        basis = get_basis(domain)
        return SpectralField(domain, np.zeros(basis.n_modes, dtype=np.complex128))


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def _scatter_vector(basis: ModeBasis, amp_k: np.ndarray, npts: int) -> np.ndarray:
    """Spectral array (d, N, ..., N) from per-wavevector amplitudes (n_k, d)."""
    d = basis.domain.dimension
    gm = basis.grid(npts)
    out = np.zeros((d,) + (npts,) * d, dtype=np.complex128)
    for a in range(d):
        out[(a,) + gm.pos_bins] = amp_k[:, a]
        out[(a,) + gm.neg_bins] = np.conj(amp_k[:, a])
    return out


def _grid_from_hat(hat: np.ndarray, d: int) -> np.ndarray:
    npts = hat.shape[-1]
    axes = tuple(range(-d, 0))
    return np.real(np.fft.ifftn(hat, axes=axes)) * npts ** d


def synthesize(field: SpectralField, grid_factor: float = 1.5) -> np.ndarray:
    """Sample the velocity on the padded grid; shape (d, N, ..., N)."""
    basis = get_basis(field.domain)
    npts = grid_size(field.domain, grid_factor)
    amp = basis.combine_polarizations(field.coefficients)
    return _grid_from_hat(_scatter_vector(basis, amp, npts), field.domain.dimension)


def analyze(grid_velocity: np.ndarray, domain: TorusDomain) -> SpectralField:
    """Leray-project and truncate grid samples back to a SpectralField.

    This is the Galerkin projector onto the retained divergence-free modes:
    the mean is dropped, gradient parts are annihilated (the polarization
    vectors are orthogonal to k) and everything beyond the cutoff is cut.
    """
    grid_velocity = np.asarray(grid_velocity, dtype=np.float64)
    d = domain.dimension
    if grid_velocity.ndim != d + 1 or grid_velocity.shape[0] != d:
        raise ValueError(
            f"expected shape (d, N, ..., N) with d={d}, got {grid_velocity.shape}"
        )
    npts = grid_velocity.shape[-1]
    if any(s != npts for s in grid_velocity.shape[1:]):
        raise ValueError("grid must have equal extent along every axis")
    if not np.all(np.isfinite(grid_velocity)):
        raise ValueError("grid samples contain non-finite values")
    basis = get_basis(domain)
    gm = basis.grid(npts)
    hat = np.fft.fftn(grid_velocity, axes=gm.spatial_axes) / npts ** d
    gathered = np.stack(
        [hat[(a,) + gm.pos_bins_mode] for a in range(d)], axis=1
    )  # (M, d)
    return SpectralField(domain, basis.project_polarizations(gathered))


def _gradient_hat(basis: ModeBasis, coeffs: np.ndarray, npts: int) -> np.ndarray:
    """Spectral array of grad v, shape (d, d, N, ...); entry [a, b] = d_a v_b."""
    d = basis.domain.dimension
    gm = basis.grid(npts)
    amp = basis.combine_polarizations(coeffs)  # (n_k, d)
    ik = 1j * basis.k_phys_unique  # (n_k, d)
    out = np.zeros((d, d) + (npts,) * d, dtype=np.complex128)
    for a in range(d):
        for b in range(d):
            g = ik[:, a] * amp[:, b]
            out[(a, b) + gm.pos_bins] = g
            out[(a, b) + gm.neg_bins] = np.conj(g)
    return out


def gradient(field: SpectralField, grid_factor: float = 1.5) -> np.ndarray:
    """Velocity gradient on the padded grid; [a, b] = d_a v_b."""
    basis = get_basis(field.domain)
    npts = grid_size(field.domain, grid_factor)
    hat = _gradient_hat(basis, field.coefficients, npts)
    return _grid_from_hat(hat, field.domain.dimension)


def sym_gradient(field: SpectralField, grid_factor: float = 1.5) -> np.ndarray:
    """Rate-of-strain tensor (grad v + grad v^T) / 2 on the padded grid."""
    g = gradient(field, grid_factor)
    return 0.5 * (g + np.swapaxes(g, 0, 1))


def grid_quadrature(values: np.ndarray, domain: TorusDomain) -> float:
    """Integral over the box of grid samples (trapezoid = spectral on torus)."""
    d = domain.dimension
    return float(values.mean(axis=tuple(range(-d, 0)))) * domain.volume


# ---------------------------------------------------------------------------
# sampling and serialization
# ---------------------------------------------------------------------------

def random_field(
    domain: TorusDomain,
    rng: np.random.Generator,
    l2_norm: float = 1.0,
    decay: float = 1.0,
) -> SpectralField:
    """Random divergence-free field with |k|^-decay spectral envelope."""
    basis = get_basis(domain)
    raw = rng.standard_normal(basis.n_modes) + 1j * rng.standard_normal(basis.n_modes)
    kk = np.sqrt(np.sum(basis.k_int.astype(float) ** 2, axis=1))
    coeffs = raw * kk ** (-decay)
    field = SpectralField(domain, coeffs)
    current = field.l2_norm()
    if current > 0 and l2_norm > 0:
        field = field * (l2_norm / current)
    return field


def field_to_dict(field: SpectralField) -> dict:
    """JSON-ready dict {d, L, n_max, modes: [[k..., pol, re, im], ...]}."""
    basis = get_basis(field.domain)
    modes = []
    for m, c in zip(basis.modes, field.coefficients):
        modes.append(list(m.wavevector) + [m.polarization, float(c.real), float(c.imag)])
    return {
        "d": field.domain.dimension,
        "L": field.domain.side_length,
        "n_max": field.domain.mode_cutoff,
        "modes": modes,
    }


def field_from_dict(data: dict) -> SpectralField:
    domain = TorusDomain(
        dimension=int(data["d"]),
        side_length=float(data["L"]),
        mode_cutoff=int(data["n_max"]),
    )
    basis = get_basis(domain)
    d = domain.dimension
    coeffs = np.zeros(basis.n_modes, dtype=np.complex128)
    if len(data["modes"]) != basis.n_modes:
        raise ValueError("mode list does not match the domain cutoff")
    for i, row in enumerate(data["modes"]):
        k = tuple(int(x) for x in row[:d])
        pol = int(row[d])
        if k != basis.modes[i].wavevector or pol != basis.modes[i].polarization:
            raise ValueError("modes are not in canonical order")
        coeffs[i] = complex(row[d + 1], row[d + 2])
    return SpectralField(domain, coeffs)
