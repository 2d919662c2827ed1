"""Poincare map of the forced Galerkin flow and its fixed points.

The map F sends an initial coefficient vector to the solution after one
forcing period T.  Inside the invariant ball B_K (radius from the energy
estimate) F is a continuous self-map, so a fixed point -- a time-periodic
Galerkin solution -- exists; this module finds one numerically with a
solver ladder: damped Picard, then Anderson acceleration, then matrix-free
Newton-Krylov on G(u) = F(u) - u.  Existence does not imply contractivity,
which is why the ladder is needed.

All fixed-point iterations evaluate F with exactly the same step sequence
as the final audited integration (identical sample-time landings), so the
reported residual is the one the stored trajectory satisfies, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace, field as dc_field

import numpy as np
from scipy.sparse.linalg import LinearOperator, lgmres

from .basis import SpectralField, TorusDomain, get_basis, random_field
from .constants import EmbeddingConstants
from .galerkin import ForcingSignal, GalerkinState, make_rhs
from .integrate import (
    DegenerateRheologyError,
    IntegratorConfig,
    TrajectoryRecord,
    _solve_adaptive,
    integrate,
)
from .rheology import RegularizationParams, StressParams

__all__ = [
    "Problem",
    "FixedPointConfig",
    "OrbitResult",
    "BallInvariance",
    "ContractionEstimate",
    "poincare_map",
    "ball_radius",
    "ball_invariance_check",
    "contraction_ratio",
    "find_periodic_orbit",
]


@dataclass
class Problem:
    """Everything defining one periodic-orbit problem."""

    domain: TorusDomain
    stress: StressParams
    reg: RegularizationParams
    forcing: ForcingSignal
    consts: EmbeddingConstants | None = None
    integrator: IntegratorConfig = dc_field(default_factory=IntegratorConfig)
    grid_factor: float = 1.5

    def with_constants(self, sample_budget: int = 400, seed: int = 0) -> "Problem":
        """Fill in estimated embedding constants if absent."""
        if self.consts is not None:
            return self
        from .diagnostics import estimate_embedding_constants

        consts = estimate_embedding_constants(
            self.domain, self.stress.q, sample_budget, seed=seed,
            grid_factor=self.grid_factor,
        )
        return replace(self, consts=consts)


@dataclass(frozen=True)
class FixedPointConfig:
    tol: float | None = None  # default: 1e-8 * max(1, K)
    max_picard: int = 40
    anderson_window: int = 5
    max_anderson: int = 60
    max_newton: int = 12
    newton_inner: int = 30
    multi_start: int = 3
    seed: int = 0
    damping: float = 1.0


@dataclass
class BallInvariance:
    ok: bool
    sup_norm: float
    radius: float
    excursion: float  # sup_norm - radius (negative when safely inside)


@dataclass
class ContractionEstimate:
    ratio: float
    bound: float
    log_bound: float
    C4: float
    C3: float
    epsilon: float
    max_f_bound: float
    max_coeff_norm: float


@dataclass
class OrbitResult:
    initial_state: SpectralField
    residual: float
    iterations: int  # total Poincare-map evaluations
    method: str  # stage of the ladder that converged
    ball_radius_used: float
    trajectory: TrajectoryRecord
    converged: bool
    start_used: SpectralField
    constants: EmbeddingConstants


def ball_radius(forcing: ForcingSignal, params: StressParams,
                consts: EmbeddingConstants, variant: str = "K") -> float:
    """Invariant-ball radius from the energy estimate.

    variant "K" uses max_t ||b||^q' (+ kappa^(q/2) when kappa > 0); variant
    "K_bar" replaces the kappa term by 1, dominating every kappa < 1.
    """
    mb = forcing.max_l2 ** params.q_dual
    if variant == "K":
        extra = params.kappa ** (0.5 * params.q) if params.kappa > 0 else 0.0
    elif variant == "K_bar":
        extra = 1.0
    else:
        raise ValueError(f"unknown ball-radius variant {variant!r}")
    return (consts.C2 * (mb + extra) / (consts.C1 * consts.C_S)) ** (1.0 / params.q)


def ball_invariance_check(trajectory: TrajectoryRecord, radius: float,
                          tol: float = 1e-8) -> BallInvariance:
    """Whether sup_t ||v(t)|| stays within radius * (1 + tol)."""
    sup = trajectory.sup_norm()
    return BallInvariance(ok=bool(sup <= radius * (1.0 + tol)), sup_norm=sup,
                          radius=radius, excursion=sup - radius)


# ---------------------------------------------------------------------------
# Poincare map plumbing
# ---------------------------------------------------------------------------

class _Flow:
    """Reusable one-period propagator with an evaluation counter."""

    def __init__(self, problem: Problem):
        if problem.stress.degenerate and not problem.integrator.override_degenerate:
            raise DegenerateRheologyError(
                "q < 11/5 requires kappa > 0 for a well-posed coefficient ODE; "
                "set override_degenerate to proceed anyway"
            )
        self.problem = problem
        self.basis = get_basis(problem.domain)
        self.nonstiff, stiff, _ = make_rhs(
            problem.domain, problem.stress, problem.reg, problem.forcing,
            problem.grid_factor,
        )
        cfg = problem.integrator
        self.diag = stiff if cfg.scheme == "imex_stiff" else None
        if cfg.scheme == "explicit_adaptive" and np.any(stiff != 0.0):
            base = self.nonstiff
            self.nonstiff = lambda t, u: base(t, u) - stiff * u
        self.cfg = cfg
        self.period = problem.forcing.period
        self.sample_times = np.linspace(0.0, self.period, cfg.sample_count + 1)
        self.evaluations = 0

    def map(self, u: np.ndarray) -> np.ndarray:
        """F(u): same step landings as the audited run, no recording."""
        self.evaluations += 1
        clamp = self.cfg.clamp_norm

        def on_step(t_a, u_a, t_b, u_b):
            if clamp > 0.0 and 0.0 < float(np.linalg.norm(u_b)) < clamp:
                return np.zeros_like(u_b)
            return None

        u_final, _, _, _ = _solve_adaptive(
            self.nonstiff, self.diag, u, 0.0, self.period, self.cfg,
            self.sample_times, lambda i, t, uu: None, on_step,
        )
        return u_final


def poincare_map(v0: SpectralField, problem: Problem) -> SpectralField:
    """v(T) from v(0) = v0 under the problem's forcing and rheology."""
    flow = _Flow(problem)
    u = flow.map(v0.to_real_vector())
    return SpectralField.from_real_vector(problem.domain, u)


def contraction_ratio(v0: SpectralField, z0: SpectralField,
                      problem: Problem) -> ContractionEstimate:
    """||F(v0) - F(z0)|| / ||v0 - z0|| against the analytic continuity bound.

    The bound exp((C4 - eps*C3) T) uses C4 = n^2 * max|f_ijk| * max_t |c(t)|
    with max|f_ijk| replaced by its closed-form upper bound on this basis;
    it is typically enormous and serves as a sanity ceiling only.
    """
    du = v0.to_real_vector() - z0.to_real_vector()
    dist0 = float(np.linalg.norm(du))
    if dist0 == 0.0:
        raise ValueError("contraction ratio needs two distinct initial states")
    problem = problem.with_constants()
    state0 = GalerkinState(0.0, v0)
    final_v, record = integrate(
        state0, 0.0, problem.forcing.period, problem.stress, problem.reg,
        problem.forcing, problem.integrator, consts=problem.consts,
        grid_factor=problem.grid_factor,
    )
    final_z, _ = integrate(
        GalerkinState(0.0, z0), 0.0, problem.forcing.period, problem.stress,
        problem.reg, problem.forcing, problem.integrator,
        consts=problem.consts, grid_factor=problem.grid_factor,
    )
    ratio = (final_v.field - final_z.field).l2_norm() / dist0

    basis = get_basis(problem.domain)
    dom = problem.domain
    max_f = math.sqrt(2.0 / dom.volume) * (
        2.0 * math.pi * math.sqrt(dom.dimension) * dom.mode_cutoff / dom.side_length
    )
    n_real = 2 * basis.n_modes
    max_c = record.sup_norm()
    C4 = n_real ** 2 * max_f * max_c
    C3 = (2.0 * math.pi / dom.side_length) ** 2
    log_bound = (C4 - problem.reg.epsilon * C3) * problem.forcing.period
    bound = math.exp(log_bound) if log_bound < 700.0 else math.inf
    return ContractionEstimate(
        ratio=float(ratio), bound=bound, log_bound=float(log_bound),
        C4=float(C4), C3=float(C3), epsilon=problem.reg.epsilon,
        max_f_bound=float(max_f), max_coeff_norm=float(max_c),
    )


# ---------------------------------------------------------------------------
# fixed-point ladder
# ---------------------------------------------------------------------------

def _project_ball(u: np.ndarray, radius: float) -> np.ndarray:
    nrm = float(np.linalg.norm(u))
    if nrm > radius > 0.0:
        return u * (radius / nrm)
    return u


def _picard(flow: _Flow, u: np.ndarray, radius: float, tol: float,
            max_iter: int, damping: float):
    beta = damping
    best_u, best_r = u, math.inf
    r_prev = math.inf
    for _ in range(max_iter):
        u = _project_ball(u, radius)
        Fu = flow.map(u)
        g = Fu - u
        r = float(np.linalg.norm(g))
        if not math.isfinite(r):
            break
        if r < best_r:
            best_u, best_r = u, r
        if r <= tol:
            return u, r, True
        if r >= r_prev:
            beta = max(0.5 * beta, 1.0 / 64.0)
        u = u + beta * g
        r_prev = r
    return best_u, best_r, False


def _anderson(flow: _Flow, u: np.ndarray, radius: float, tol: float,
              max_iter: int, window: int):
    hist_u: list = []
    hist_g: list = []
    best_u, best_r = u, math.inf
    for _ in range(max_iter):
        u = _project_ball(u, radius)
        g = flow.map(u)
        f = g - u
        r = float(np.linalg.norm(f))
        if not math.isfinite(r):
            hist_u.clear()
            hist_g.clear()
            u = best_u
            continue
        if r < best_r:
            best_u, best_r = u, r
        if r <= tol:
            return u, r, True
        hist_u.append(u.copy())
        hist_g.append(g.copy())
        if len(hist_u) > window + 1:
            hist_u.pop(0)
            hist_g.pop(0)
        if len(hist_u) >= 2:
            dG = np.stack([hist_g[i + 1] - hist_g[i] for i in range(len(hist_g) - 1)], axis=1)
            dF = np.stack([
                (hist_g[i + 1] - hist_u[i + 1]) - (hist_g[i] - hist_u[i])
                for i in range(len(hist_u) - 1)
            ], axis=1)
            gamma, *_ = np.linalg.lstsq(dF, f, rcond=1e-10)
            u_new = g - dG @ gamma
            if np.all(np.isfinite(u_new)):
                u = u_new
            else:
                u = g
        else:
            u = g
    return best_u, best_r, False


def _newton_krylov(flow: _Flow, u: np.ndarray, radius: float, tol: float,
                   max_iter: int, inner_m: int):
    n = u.size
    sqrt_eps = math.sqrt(np.finfo(float).eps)
    best_u, best_r = u, math.inf

    u = _project_ball(u, radius)
    Gu = flow.map(u) - u
    r = float(np.linalg.norm(Gu))
    for _ in range(max_iter):
        if not math.isfinite(r):
            return best_u, best_r, False
        if r < best_r:
            best_u, best_r = u, r
        if r <= tol:
            return u, r, True

        def jv(d, _u=u, _G=Gu):
            dn = float(np.linalg.norm(d))
            if dn == 0.0:
                return np.zeros_like(d)
            h = sqrt_eps * (1.0 + float(np.linalg.norm(_u))) / dn
            return (flow.map(_u + h * d) - (_u + h * d) - _G) / h

        op = LinearOperator((n, n), matvec=jv)
        try:
            dx, info = lgmres(op, -Gu, rtol=1e-3, atol=0.0, maxiter=2,
                              inner_m=inner_m)
        except Exception:
            return best_u, best_r, False
        if not np.all(np.isfinite(dx)):
            return best_u, best_r, False
        improved = False
        for step in (1.0, 0.5, 0.25, 0.125):
            u_try = _project_ball(u + step * dx, radius)
            G_try = flow.map(u_try) - u_try
            r_try = float(np.linalg.norm(G_try))
            if math.isfinite(r_try) and r_try < r:
                u, Gu, r = u_try, G_try, r_try
                improved = True
                break
        if not improved:
            return best_u, best_r, False
    if r < best_r:
        best_u, best_r = u, r
    return best_u, best_r, False


def find_periodic_orbit(problem: Problem,
                        solver: FixedPointConfig | None = None) -> OrbitResult:
    """Locate a fixed point of the Poincare map inside the invariant ball.

    Runs the Picard -> Anderson -> Newton-Krylov ladder from the zero state
    (then from random states in the ball, per `multi_start`).  The ladder
    iterates the map on a light sampling grid; the result is then polished
    with Picard steps on the fully sampled, energy-monitored integration,
    so the reported residual is exactly the stored trajectory's
    ||v(T) - v(0)||.  `converged` is False when no start reached tolerance,
    in which case the best residual found is reported.
    """
    solver = solver or FixedPointConfig()
    problem = problem.with_constants(seed=solver.seed)
    consts = problem.consts
    stress = problem.stress

    K = ball_radius(problem.forcing, stress, consts, "K")
    if stress.q < 2.0 and problem.integrator.clamp_norm == 0.0:
        K_bar = ball_radius(problem.forcing, stress, consts, "K_bar")
        problem = replace(problem,
                          integrator=replace(problem.integrator,
                                             clamp_norm=1e-13 * K_bar))
    tol = solver.tol if solver.tol is not None else 1e-8 * max(1.0, K)

    light = replace(problem.integrator,
                    sample_count=min(64, problem.integrator.sample_count),
                    energy_monitor=False, store_states=False)
    flow = _Flow(replace(problem, integrator=light))
    rng = np.random.default_rng(solver.seed)
    basis = get_basis(problem.domain)

    starts = [np.zeros(2 * basis.n_modes)]
    for _ in range(max(0, solver.multi_start - 1)):
        amp = rng.uniform(0.0, 1.0) * K
        starts.append(random_field(problem.domain, rng, l2_norm=amp).to_real_vector())

    best = None  # (residual, u, method, start)
    for start in starts:
        u = start.copy()
        u, r, ok = _picard(flow, u, K, tol, solver.max_picard, solver.damping)
        method = "picard"
        if not ok:
            u, r, ok = _anderson(flow, u, K, tol, solver.max_anderson,
                                 solver.anderson_window)
            method = "anderson"
        if not ok:
            u, r, ok = _newton_krylov(flow, u, K, tol, solver.max_newton,
                                      solver.newton_inner)
            method = "newton_krylov"
            if not ok:
                # Newton breakdown: one more damped Picard sweep as a fallback
                u, r, ok = _picard(flow, u, K, tol, solver.max_picard, 0.5)
                method = "picard"
        if best is None or r < best[0]:
            best = (r, u, method, start)
        if ok:
            break

    r_light, u_best, method, start = best
    ladder_ok = r_light <= tol

    def audited(u0):
        v0 = SpectralField.from_real_vector(problem.domain, u0)
        final, record = integrate(
            GalerkinState(0.0, v0), 0.0, problem.forcing.period, stress,
            problem.reg, problem.forcing, problem.integrator,
            consts=consts, grid_factor=problem.grid_factor,
        )
        return v0, final, record, (final.field - v0).l2_norm()

    evaluations = flow.evaluations
    candidate = None
    u = u_best
    for attempt in range(5):
        v0, final, record, residual = audited(u)
        if attempt > 0:  # the first audited run is bookkeeping, not iteration
            evaluations += 1
        if candidate is None or residual < candidate[3]:
            candidate = (v0, final, record, residual)
        if residual <= tol or not ladder_ok:
            break
        u = final.field.to_real_vector()  # Picard polish on the audited grid
    v0, final, record, residual = candidate

    return OrbitResult(
        initial_state=v0,
        residual=float(residual),
        iterations=evaluations,
        method=method,
        ball_radius_used=float(K),
        trajectory=record,
        converged=bool(residual <= tol),
        start_used=SpectralField.from_real_vector(problem.domain, start),
        constants=consts,
    )
