"""Embedding and estimate constants used by the invariant-ball machinery.

The analysis leaves these constants abstract; here they are concrete,
estimated on the implemented basis and recorded with every report so each
checked inequality is fully explicit:

* ``sobolev_ratio`` -- sampled maximum of ||v||_L2 / ||Dv||_Lq over
  divergence-free fields (the embedding W^(1,q) -> L^2 combined with Korn,
  written as a ratio so that larger sampling budgets can only increase it).
* ``C_S = sobolev_ratio**(-q)`` -- the same bound in coercive form
  ||Dv||_q^q >= C_S ||v||_2^q, which is how it enters the ball radius.
* ``C1 = 1/2`` -- kept fraction of the raw stress dissipation; valid for
  every q > 1 since (kappa + |D|^2)^((q-2)/2) |D|^2 >= 2^((q-2)/2)
  (|D|^q - kappa^(q/2)) pointwise and 2^((q-2)/2) > 1/2.
* ``C2`` -- Young-conjugate constant absorbing the forcing power,
  (2 sobolev_ratio)^(q') / q', enlarged to at least 2 L^d so the same
  constant also dominates the kappa^(q/2) penalty term.
* ``alpha = C_S / 2`` -- decay constant of the extinction differential
  inequality d/dt ||v||^2 + 2 alpha ||v||^q <= 2 C ||b||^q'.
* ``C_P = L / (2 pi)`` -- Poincare constant (exact for zero-mean fields).
* ``C_K = sqrt(2)`` -- Korn: ||grad v||_2 = sqrt(2) ||Dv||_2 exactly for
  divergence-free periodic fields.
* ``C3 = (2 pi / L)^2`` -- lowest Laplacian symbol, entering the
  Poincare-map continuity bound exp((C4 - eps C3) T).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

__all__ = ["EmbeddingConstants"]


@dataclass(frozen=True)
class EmbeddingConstants:
    C_S: float
    C_P: float
    C_K: float
    alpha: float
    C3: float
    C1: float
    C2: float
    sobolev_ratio: float
    q: float
    sample_budget: int = 0
    seed: int = 0
    extinction_forcing_const: float = field(default=0.0)

    def __post_init__(self):
        for name in ("C_S", "C_P", "C_K", "alpha", "C3", "C1", "C2", "sobolev_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "EmbeddingConstants":
        return EmbeddingConstants(**data)
