"""Power-law extra stress and its regularized variants.

The stress law is S(D) = (kappa + |D|^2)^((q-2)/2) D with the convention
2*mu_0 = 1 baked in, |.| the Frobenius norm, and S(0) := 0 also in the
degenerate case kappa = 0, q < 2 (the unique continuous extension).  The
auxiliary regularizer stress is eps |D|^(1/5) D, whose exponent pairs with
the fixed p = 11/5.

All functions accept tensors of shape (d, d) or grid stacks (d, d, N, ...);
the tensor indices are always the two leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MU0",
    "P_REGULARIZER",
    "Q_MIN",
    "StressParams",
    "RegularizationParams",
    "frobenius_sq",
    "evaluate_stress",
    "evaluate_p_stress",
    "dissipation_density",
    "monotonicity_gap",
]

# 2*mu_0 = 1; exposing mu_0 would silently rescale every estimate constant.
MU0 = 0.5
# Fixed regularizer exponent tied to the L^inf L^2 / L^(11/5) W^(1,11/5)
# embedding arithmetic; not configurable.
P_REGULARIZER = 11.0 / 5.0
# Existence threshold for the power-law index.
Q_MIN = 6.0 / 5.0


@dataclass(frozen=True)
class StressParams:
    """Power-law index q > 6/5 and viscosity smoothing kappa >= 0."""

    q: float
    kappa: float = 0.0
    mu0: float = field(default=MU0)

    def __post_init__(self):
        if not (np.isfinite(self.q) and self.q > Q_MIN):
            raise ValueError(f"power-law index must satisfy q > 6/5, got q = {self.q}")
        if not (np.isfinite(self.kappa) and self.kappa >= 0):
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.mu0 != MU0:
            raise ValueError("mu0 is fixed to 1/2 (2*mu0 = 1)")

    @property
    def q_dual(self) -> float:
        """Hoelder conjugate q' = q/(q-1)."""
        return self.q / (self.q - 1.0)

    @property
    def degenerate(self) -> bool:
        """True when the Galerkin ODE right-hand side is not Lipschitz at 0."""
        return self.q < P_REGULARIZER and self.kappa == 0.0


@dataclass(frozen=True)
class RegularizationParams:
    """Strength of the Laplacian and p-Laplacian regularizers."""

    epsilon: float = 0.0
    p: float = field(default=P_REGULARIZER)

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.p != P_REGULARIZER:
            raise ValueError("p is fixed to 11/5")


def _check_finite(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if not np.all(np.isfinite(D)):
        raise ValueError("tensor samples contain non-finite entries")
    return D


def frobenius_sq(D: np.ndarray) -> np.ndarray:
    """|D|^2 = sum_ij D_ij^2, reducing the two leading tensor axes."""
    return np.einsum("ij...,ij...->...", D, D)


def _viscosity(m2: np.ndarray, q: float) -> np.ndarray:
    """(kappa + |D|^2)^((q-2)/2) with the 0^negative case mapped to 0.

    The masked value only multiplies D = 0, where S = 0 is the continuous
    extension for q > 1.
    """
    m2 = np.asarray(m2)
    with np.errstate(divide="ignore"):
        out = np.where(m2 > 0.0, m2, 1.0) ** (0.5 * (q - 2.0))
    return np.where(m2 > 0.0, out, 0.0)


def evaluate_stress(D: np.ndarray, params: StressParams) -> np.ndarray:
    """Extra stress (kappa + |D|^2)^((q-2)/2) D."""
    D = _check_finite(D)
    nu = _viscosity(params.kappa + frobenius_sq(D), params.q)
    return nu * D


def evaluate_p_stress(D: np.ndarray, reg: RegularizationParams) -> np.ndarray:
    """Regularizer stress eps |D|^(1/5) D (exponent p - 2 with p = 11/5)."""
    D = _check_finite(D)
    if reg.epsilon == 0.0:
        return np.zeros_like(D)
    return reg.epsilon * frobenius_sq(D) ** 0.1 * D


def dissipation_density(
    D: np.ndarray, params: StressParams, reg: RegularizationParams
) -> np.ndarray:
    """Pointwise dissipation S:D + eps |D|^(11/5); always >= 0.

    The eps |grad v|^2 contribution is diagonal in the spectral basis and is
    assembled there, not here.
    """
    D = _check_finite(D)
    m2 = frobenius_sq(D)
    out = _viscosity(params.kappa + m2, params.q) * m2
    if reg.epsilon > 0.0:
        out = out + reg.epsilon * m2 ** 1.1
    return out


def monotonicity_gap(D1: np.ndarray, D2: np.ndarray, params: StressParams) -> np.ndarray:
    """(S(D1) - S(D2)) : (D1 - D2); nonnegative for q > 1."""
    D1 = np.asarray(D1, dtype=np.float64)
    D2 = np.asarray(D2, dtype=np.float64)
    if D1.shape != D2.shape:
        raise ValueError("tensor shapes differ")
    diff_S = evaluate_stress(D1, params) - evaluate_stress(D2, params)
    return np.einsum("ij...,ij...->...", diff_S, D1 - D2)
