"""Sparse + low-rank model solved by three-block ADMM.

Relaxed problem::

    min  -[alpha tr(Ybar^T Z) + (1 - alpha) tr(Ybar^T (H0 + H1))]
         + beta tr(Z Lx Z^T) + gamma0 ||H0||_* + gamma1 ||H1||_1
    s.t. Z = H0 + H1,  Phi^T Z >= 0,  0 <= Z <= 1.

Multi-block ADMM is not guaranteed to converge for arbitrary penalty
parameters; when the iteration cap is reached the iterate with the smallest
primal residuals is returned with ``converged=False``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from mlmg.errors import ConfigError, DecompositionInfeasible, NumericalError
from mlmg.labels import PenaltyMatrix, Solution
from mlmg.prox import nuclear_norm, singular_value_threshold, soft_threshold
from mlmg.solver_co import (
    StepSchedule,
    _as_operator,
    initial_z,
    lift_parents,
    minimize_box_qp,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SlProblem:
    penalty: PenaltyMatrix
    l_x: object
    phi: np.ndarray = None
    alpha: float = 0.9
    beta: float = 1.0
    gamma0: float = 0.01
    gamma1: float = 10.0

    def __post_init__(self):
        ybar = self.ybar
        m, n = ybar.shape
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if min(self.beta, self.gamma0, self.gamma1) < 0:
            raise ConfigError("beta, gamma0 and gamma1 must be nonnegative")
        if self.l_x.shape != (n, n):
            raise ConfigError(f"instance Laplacian is {self.l_x.shape}, expected {(n, n)}")
        phi = np.zeros((m, 0)) if self.phi is None else np.asarray(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != m:
            raise ConfigError(f"constraint matrix is {phi.shape}, expected ({m}, n_e)")
        object.__setattr__(self, "phi", phi)

    @property
    def ybar(self):
        if isinstance(self.penalty, PenaltyMatrix):
            return self.penalty.values
        return np.asarray(self.penalty, dtype=float)


@dataclass
class SlSolverConfig:
    rho1: float = 1.0
    rho2: float = 1.0
    outer_iters: int = 20
    inner_iters: int = 5
    tol_z: float = 1e-5
    tol_primal1: float = 1e-5
    tol_primal2: float = 1e-5
    step_recompute_period: int = 1
    step_damping: float = 0.9
    z_init: str = "zeros"
    seed: int = 0
    repair: bool = False

    def __post_init__(self):
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise ConfigError("rho1 and rho2 must be positive")
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ConfigError("iteration caps must be positive")
        if min(self.tol_z, self.tol_primal1, self.tol_primal2) <= 0:
            raise ConfigError("tolerances must be positive")
        if self.z_init not in ("zeros", "random"):
            raise ConfigError(f"z_init must be 'zeros' or 'random', got {self.z_init!r}")


@dataclass
class SlState:
    z: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    q: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray

    @classmethod
    def initial(cls, problem: SlProblem, config: SlSolverConfig):
        ybar = problem.ybar
        z = initial_z(ybar, config.z_init, config.seed)
        n_e = problem.phi.shape[1]
        return cls(
            z=z,
            h0=0.5 * z,
            h1=0.5 * z,
            q=np.maximum(0.0, problem.phi.T @ z),
            lam1=np.zeros_like(z),
            lam2=np.zeros((n_e, z.shape[1])),
        )

    def copy(self):
        return SlState(*(np.array(v) for v in
                         (self.z, self.h0, self.h1, self.q, self.lam1, self.lam2)))


def sl_objective(z, h0, h1, problem: SlProblem) -> float:
    ybar = problem.ybar
    a = problem.alpha
    val = -(a * np.sum(ybar * z) + (1 - a) * np.sum(ybar * (h0 + h1)))
    if problem.beta:
        val += problem.beta * np.sum(z * (problem.l_x @ z.T).T)
    val += problem.gamma0 * nuclear_norm(h0) + problem.gamma1 * np.abs(h1).sum()
    return float(val)


def _shift(state, problem, config):
    return (state.lam1 + (1.0 - problem.alpha) * problem.ybar) / config.rho1


def update_z_sl(state: SlState, problem: SlProblem, config: SlSolverConfig, schedule=None):
    """Box-constrained Z-step by capped projected gradient from ``state.z``."""
    phi = problem.phi
    rho1, rho2 = config.rho1, config.rho2
    a = (-problem.alpha * problem.ybar + state.lam1 - rho1 * (state.h0 + state.h1)
         + phi @ (state.lam2 - rho2 * state.q))
    m = a.shape[0]
    c = 0.5 * rho1 * np.eye(m) + 0.5 * rho2 * (phi @ phi.T)
    b = _as_operator(problem.beta * problem.l_x) if problem.beta else None
    schedule = schedule or StepSchedule(config.step_recompute_period, config.step_damping)
    res = minimize_box_qp(a, b, c, state.z, config.inner_iters, config.tol_z * 1e-2, schedule)
    return res.z


def update_h0(state: SlState, problem: SlProblem, config: SlSolverConfig):
    """Singular value thresholding of ``Z - H1 + E`` at ``gamma0 / rho1``."""
    arg = state.z - state.h1 + _shift(state, problem, config)
    return singular_value_threshold(arg, problem.gamma0 / config.rho1)


def update_h1(state: SlState, problem: SlProblem, config: SlSolverConfig):
    """Entrywise soft threshold of ``Z - H0 + E`` at ``gamma1 / rho1``."""
    arg = state.z - state.h0 + _shift(state, problem, config)
    return soft_threshold(arg, problem.gamma1 / config.rho1)


def solve_sl(problem: SlProblem, config: SlSolverConfig | None = None) -> Solution:
    config = config or SlSolverConfig()
    ybar = problem.ybar
    if not np.any(ybar > 0):
        raise DecompositionInfeasible(
            "label matrix has no positive entries; the low-rank part is undefined"
        )
    m, n = ybar.shape
    n_e = problem.phi.shape[1]
    phi = problem.phi
    rho1, rho2 = config.rho1, config.rho2
    schedule = StepSchedule(config.step_recompute_period, config.step_damping)
    state = SlState.initial(problem, config)
    d1 = np.sqrt(m * n)
    d2 = np.sqrt(max(n_e * n, 1))

    best, best_score, best_iter = None, np.inf, 0
    trace = []
    converged = False
    r1 = r2 = rel = float("nan")
    t = 0
    for t in range(1, config.outer_iters + 1):
        z_old = state.z
        state.z = update_z_sl(state, problem, config, schedule)
        try:
            state.h0 = update_h0(state, problem, config)
        except NumericalError as exc:
            raise DecompositionInfeasible(f"low-rank update failed: {exc}") from None
        state.h1 = update_h1(state, problem, config)
        pz = phi.T @ state.z
        state.q = np.maximum(0.0, pz + state.lam2 / rho2)
        eq_res = state.z - state.h0 - state.h1
        ineq_res = pz - state.q
        state.lam1 = state.lam1 + rho1 * eq_res
        state.lam2 = state.lam2 + rho2 * ineq_res
        if not (np.all(np.isfinite(state.h0)) and np.all(np.isfinite(state.lam1))):
            raise DecompositionInfeasible(f"non-finite iterate at iteration {t}")

        rel = np.linalg.norm(state.z - z_old) / max(np.linalg.norm(z_old), 1e-12)
        r1 = np.linalg.norm(eq_res) / d1
        r2 = np.linalg.norm(ineq_res) / d2
        trace.append({
            "iteration": t,
            "objective": sl_objective(state.z, state.h0, state.h1, problem),
            "primal_residual_eq": float(r1),
            "primal_residual_ineq": float(r2),
            "nuclear_norm_h0": nuclear_norm(state.h0),
            "l1_norm_h1": float(np.abs(state.h1).sum()),
            "relative_change": float(rel),
        })
        score = max(r1 / config.tol_primal1, r2 / config.tol_primal2)
        if score < best_score:
            best, best_score, best_iter = state.copy(), score, t
        if rel < config.tol_z and r1 < config.tol_primal1 and r2 < config.tol_primal2:
            converged = True
            break

    final = state if converged else best
    if not converged:
        log.warning(
            "sparse+low-rank ADMM hit %d iterations; returning iterate %d "
            "(residuals %.3e, %.3e)", t, best_iter, r1, r2,
        )
    z = final.z
    r1_final = np.linalg.norm(z - final.h0 - final.h1) / d1
    pz = phi.T @ z
    r2_final = np.linalg.norm(pz - final.q) / d2
    cmin_raw = float(pz.min()) if n_e else 0.0
    lifted = 0.0
    if config.repair:
        z, lifted = lift_parents(z, phi)
        pz = phi.T @ z
    return Solution(
        z,
        h0=final.h0,
        h1=final.h1,
        trace=trace,
        converged=converged,
        iterations=t,
        residuals={
            "primal_eq": float(r1_final),
            "primal_ineq": float(r2_final),
            "relative_change": float(rel),
            "constraint_min": float(pz.min()) if n_e else 0.0,
            "constraint_min_raw": cmin_raw,
            "repair_max": lifted,
            "returned_iteration": t if converged else best_iter,
        },
    )
