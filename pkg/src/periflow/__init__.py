"""Time-periodic flows of incompressible power-law fluids on a periodic box.

A pseudo-spectral divergence-free Galerkin solver that finds time-periodic
orbits of the generalized Navier-Stokes system with stress
(kappa + |Dv|^2)^((q-2)/2) Dv via a Poincare-map fixed point inside the
energy-estimate invariant ball, and numerically audits the a priori
estimates the construction rests on: the energy inequality, ball
invariance, interpolation and uniform regularization bounds, and the
finite-time extinction bound for q in (6/5, 2).
"""

__version__ = "0.1.0"

from .basis import (
    DivFreeMode,
    SpectralField,
    TorusDomain,
    analyze,
    enumerate_modes,
    sym_gradient,
    synthesize,
)
from .constants import EmbeddingConstants
from .galerkin import (
    EnergyTerms,
    ForcingMode,
    ForcingSignal,
    GalerkinState,
    convection_rhs,
    energy_terms,
    forcing_rhs,
    full_rhs,
    viscous_rhs,
)
from .integrate import (
    IntegratorConfig,
    TrajectoryRecord,
    check_energy_step,
    integrate,
)
from .orbit import (
    FixedPointConfig,
    OrbitResult,
    Problem,
    ball_invariance_check,
    ball_radius,
    contraction_ratio,
    find_periodic_orbit,
    poincare_map,
)
from .rheology import (
    RegularizationParams,
    StressParams,
    dissipation_density,
    evaluate_p_stress,
    evaluate_stress,
    monotonicity_gap,
)

__all__ = [
    "__version__",
    "TorusDomain", "DivFreeMode", "SpectralField",
    "enumerate_modes", "synthesize", "analyze", "sym_gradient",
    "StressParams", "RegularizationParams",
    "evaluate_stress", "evaluate_p_stress", "dissipation_density",
    "monotonicity_gap",
    "ForcingMode", "ForcingSignal", "GalerkinState", "EnergyTerms",
    "convection_rhs", "viscous_rhs", "forcing_rhs", "full_rhs", "energy_terms",
    "IntegratorConfig", "TrajectoryRecord", "integrate", "check_energy_step",
    "EmbeddingConstants", "Problem", "FixedPointConfig", "OrbitResult",
    "poincare_map", "ball_radius", "ball_invariance_check",
    "contraction_ratio", "find_periodic_orbit",
]
