"""Box-relaxed co-occurrence model: projected gradient and ADMM solvers.

The relaxed problem is

    min_Z  -tr(Ybar^T Z) + beta tr(Z Lx Z^T) + gamma tr(Z^T Lc Z)
    s.t.   0 <= Z <= 1,  Phi^T Z >= 0.

Without hierarchy edges it is a box-constrained QP and :func:`solve_pgd`
applies directly. With edges, :func:`solve_admm` splits the inequality off
through a slack ``Q >= 0`` and multiplier ``Lam`` (both ``n_e x n``).

Every Z-subproblem has the shape

    min_Z  tr(A^T Z) + tr(Z B Z^T) + tr(Z^T C Z),   0 <= Z <= 1,

with ``B`` (``n x n``) and ``C`` (``m x m``) symmetric PSD; it is handled by
:func:`minimize_box_qp`.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from mlmg.errors import ConfigError
from mlmg.labels import PenaltyMatrix, Solution

log = logging.getLogger(__name__)

FALLBACK_STEP = 1e-3
_DEN_FLOOR = 1e-15
_DENSE_LIMIT = 400
_MAX_BACKTRACK = 60


# ------------------------------------------------------------ problem types


@dataclass(frozen=True, eq=False)
class CoProblem:
    penalty: PenaltyMatrix
    l_x: object
    l_c: object = None
    phi: np.ndarray = None
    beta: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        ybar = _penalty_values(self.penalty)
        m, n = ybar.shape
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError(f"beta and gamma must be >= 0, got {self.beta}, {self.gamma}")
        if self.l_x.shape != (n, n):
            raise ConfigError(f"instance Laplacian is {self.l_x.shape}, expected {(n, n)}")
        if self.l_c is not None and self.l_c.shape != (m, m):
            raise ConfigError(f"class Laplacian is {self.l_c.shape}, expected {(m, m)}")
        if self.l_c is None and self.gamma > 0:
            raise ConfigError("gamma > 0 needs a class Laplacian")
        phi = np.zeros((m, 0)) if self.phi is None else np.asarray(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != m:
            raise ConfigError(f"constraint matrix is {phi.shape}, expected ({m}, n_e)")
        object.__setattr__(self, "phi", phi)

    @property
    def ybar(self) -> np.ndarray:
        return _penalty_values(self.penalty)

    @property
    def shape(self):
        return self.ybar.shape


@dataclass
class CoSolverConfig:
    """Solver knobs. ``inner_iters=None`` means 50 for PGD, 5 inside ADMM."""

    rho: float = 1.0
    outer_iters: int = 20
    inner_iters: int | None = None
    tol_z: float = 1e-5
    tol_primal: float = 1e-5
    step_recompute_period: int = 1
    step_damping: float = 0.9
    z_init: str = "zeros"
    seed: int = 0
    repair: bool = False

    def __post_init__(self):
        if self.rho <= 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if self.outer_iters < 1 or (self.inner_iters is not None and self.inner_iters < 1):
            raise ConfigError("iteration caps must be positive")
        if self.tol_z <= 0 or self.tol_primal <= 0:
            raise ConfigError("tolerances must be positive")
        if self.step_recompute_period < 1:
            raise ConfigError("step_recompute_period must be >= 1")
        if not (0 < self.step_damping <= 1):
            raise ConfigError(f"step_damping must lie in (0, 1], got {self.step_damping}")
        if self.z_init not in ("zeros", "random"):
            raise ConfigError(f"z_init must be 'zeros' or 'random', got {self.z_init!r}")


def _penalty_values(penalty):
    if isinstance(penalty, PenaltyMatrix):
        return penalty.values
    return np.asarray(penalty, dtype=float)


def initial_z(ybar, z_init="zeros", seed=0):
    """Provided entries at their 0/1 value; missing entries at 0 or U[0, 1]."""
    z = (ybar > 0).astype(float)
    if z_init == "random":
        missing = ybar == 0
        rng = np.random.default_rng(seed)
        z[missing] = rng.random(np.count_nonzero(missing))
    return z


def co_objective(z, problem: CoProblem) -> float:
    z = np.asarray(z, dtype=float)
    val = -np.sum(problem.ybar * z)
    if problem.beta:
        val += problem.beta * np.sum(z * (problem.l_x @ z.T).T)
    if problem.gamma:
        val += problem.gamma * np.sum(z * (problem.l_c @ z))
    return float(val)


# ---------------------------------------------------------------- step size


def _as_operator(mat, limit=_DENSE_LIMIT):
    """Dense array for small matrices, CSR otherwise; ``None`` for zero."""
    if mat is None:
        return None
    if sp.issparse(mat):
        if mat.nnz == 0:
            return None
        if mat.shape[0] <= limit:
            return mat.toarray()
        return sp.csr_matrix(mat)
    mat = np.asarray(mat, dtype=float)
    if not mat.any():
        return None
    return mat


def _right(z, b):
    """``Z @ B`` for symmetric ``B``."""
    if b is None:
        return 0.0
    if sp.issparse(b):
        return (b @ z.T).T
    return z @ b


def _left(c, z):
    if c is None:
        return 0.0
    return c @ z


def _curvature(d, b, c) -> float:
    """``tr(D B D^T) + tr(D^T C D)``."""
    den = 0.0
    if b is not None:
        den += np.vdot(d, _right(d, b))
    if c is not None:
        den += np.vdot(d, c @ d)
    return float(den)


def _exact_step(half_slope, d, b, c) -> float:
    den = _curvature(d, b, c)
    if den <= _DEN_FLOOR:
        return FALLBACK_STEP
    return half_slope / den


def pgd_step_size(z, grad, a_bar, b_bar, c_bar) -> float:
    """Exact minimizer of the quadratic along ``Z - eta * grad``.

    ``eta = [tr(A^T G)/2 + tr(Z B G^T) + tr(G^T C Z)]
            / [tr(G B G^T) + tr(G^T C G)]``,
    falling back to ``1e-3`` when the curvature along ``grad`` vanishes.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(grad, dtype=float)
    b = _as_operator(b_bar)
    c = _as_operator(c_bar)
    num = np.vdot(0.5 * np.asarray(a_bar, dtype=float) + _right(z, b) + _left(c, z), g)
    return _exact_step(float(num), g, b, c)


class StepSchedule:
    """Exact line search every ``period`` iterations, geometric damping between.

    ``period=1`` recomputes the exact step on every iteration.
    """

    def __init__(self, period=1, damping=0.9):
        if period < 1:
            raise ConfigError("period must be >= 1")
        if not (0 < damping <= 1):
            raise ConfigError("damping must lie in (0, 1]")
        self.period = int(period)
        self.damping = float(damping)
        self.last = None

    def reset(self):
        self.last = None

    def is_exact(self, k) -> bool:
        return self.last is None or k % self.period == 0

    def step(self, k, exact):
        """Step for iteration ``k``; ``exact`` is called only when needed."""
        eta = exact() if self.is_exact(k) else self.damping * self.last
        self.last = eta
        return eta


def accelerated_step_schedule(config: CoSolverConfig) -> StepSchedule:
    return StepSchedule(config.step_recompute_period, config.step_damping)


# ------------------------------------------------------- box-QP engine


@dataclass
class BoxQPResult:
    z: np.ndarray
    objective: float
    iterations: int
    converged: bool
    objectives: list = field(default_factory=list)
    steps: list = field(default_factory=list)


def box_qp_objective(z, a, b, c) -> float:
    b = _as_operator(b)
    c = _as_operator(c)
    return float(np.vdot(z, a + _right(z, b) + _left(c, z)))


def minimize_box_qp(a, b, c, z0, max_iter, tol=1e-5, schedule=None, record=False):
    """Projected gradient with exact line search on the box ``[0, 1]``.

    The search direction is the gradient with components that would push a
    variable further past an active bound removed. After projection the
    objective is checked; an increase triggers an exact step (if the step was
    damped) and then halving, so the objective never increases.
    """
    schedule = schedule or StepSchedule()
    schedule.reset()
    b = _as_operator(b)
    c = _as_operator(c)
    z = np.array(z0, dtype=float)
    np.clip(z, 0.0, 1.0, out=z)
    zb, cz = _right(z, b), _left(c, z)
    f = float(np.vdot(z, a + zb + cz))
    objectives = [f] if record else []
    steps = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = a + 2.0 * (zb + cz)
        d = g.copy()
        d[(z <= 0.0) & (g > 0.0)] = 0.0
        d[(z >= 1.0) & (g < 0.0)] = 0.0
        slope = float(np.vdot(g, d))
        if slope <= 0.0:
            converged = True
            it -= 1
            break
        exact = lambda: _exact_step(0.5 * slope, d, b, c)  # noqa: E731
        damped = not schedule.is_exact(it - 1)
        eta = schedule.step(it - 1, exact)
        slack = 1e-12 * max(1.0, abs(f))
        for attempt in range(_MAX_BACKTRACK):
            z_new = z - eta * d
            np.clip(z_new, 0.0, 1.0, out=z_new)
            zb_new, cz_new = _right(z_new, b), _left(c, z_new)
            f_new = float(np.vdot(z_new, a + zb_new + cz_new))
            if f_new <= f + slack:
                break
            if damped:
                eta = exact()
                damped = False
            else:
                eta *= 0.5
            schedule.last = eta
        else:
            # no decrease along the projected arc at any tested step
            converged = True
            it -= 1
            break
        delta = np.linalg.norm(z_new - z)
        scale = max(np.linalg.norm(z), 1e-12)
        z, zb, cz, f = z_new, zb_new, cz_new, f_new
        if record:
            objectives.append(f)
            steps.append(eta)
        if delta / scale < tol:
            converged = True
            break
    return BoxQPResult(z, f, it, converged, objectives, steps)


# ----------------------------------------------------------------- solvers


def edge_endpoints(phi):
    """``(parents, children)`` index arrays of the columns of ``phi``."""
    phi = np.asarray(phi)
    return np.argmax(phi > 0, axis=0), np.argmax(phi < 0, axis=0)


def lift_parents(z, phi) -> tuple[np.ndarray, float]:
    """Raise each parent score to at least its child's, per instance.

    Removes the small residual infeasibility an iterative solver leaves, so
    that ``Phi^T Z >= 0`` holds exactly. Returns the repaired matrix and the
    largest amount any entry was raised.
    """
    z = np.array(z, dtype=float)
    if phi.shape[1] == 0:
        return z, 0.0
    parents, children = edge_endpoints(phi)
    start = z.copy()
    for _ in range(z.shape[0] + 1):
        changed = False
        for p, c in zip(parents, children):
            if np.any(z[c] > z[p]):
                np.maximum(z[p], z[c], out=z[p])
                changed = True
        if not changed:
            break
    return z, float(np.max(z - start))


def _schedule(config):
    return accelerated_step_schedule(config)


def solve_pgd(problem: CoProblem, config: CoSolverConfig | None = None) -> Solution:
    """Projected gradient on the box-constrained problem (no hierarchy edges)."""
    config = config or CoSolverConfig()
    if problem.phi.shape[1]:
        raise ConfigError(
            "problem has hierarchy constraints; use solve_admm instead of solve_pgd"
        )
    ybar = problem.ybar
    inner = config.inner_iters or 50
    z0 = initial_z(ybar, config.z_init, config.seed)
    b = problem.beta * problem.l_x if problem.beta else None
    c = problem.gamma * problem.l_c if problem.gamma else None
    res = minimize_box_qp(-ybar, b, c, z0, inner, config.tol_z, _schedule(config), record=True)
    trace = [
        {"iteration": k, "objective": f, "step": s}
        for k, (f, s) in enumerate(zip(res.objectives[1:], res.steps), start=1)
    ]
    return Solution(res.z, trace=trace, converged=res.converged, iterations=res.iterations,
                    residuals={"objective": res.objective})


def _class_quadratic(problem, rho):
    m = problem.shape[0]
    c = np.zeros((m, m))
    if problem.gamma:
        lc = problem.l_c
        c += problem.gamma * (lc.toarray() if sp.issparse(lc) else np.asarray(lc))
    phi = problem.phi
    c += 0.5 * rho * (phi @ phi.T)
    return c


def solve_admm(problem: CoProblem, config: CoSolverConfig | None = None) -> Solution:
    """ADMM on the hierarchy-constrained problem.

    Alternates a few projected-gradient steps on the Z-subproblem, the slack
    update ``Q = max(0, Phi^T Z + Lam / rho)`` and the dual ascent
    ``Lam += rho (Phi^T Z - Q)``. Stops when the relative change of Z and the
    RMS primal residual both fall below their tolerances; otherwise returns the
    last iterate with ``converged=False``.
    """
    config = config or CoSolverConfig()
    ybar = problem.ybar
    m, n = ybar.shape
    phi = problem.phi
    n_e = phi.shape[1]
    rho = config.rho
    inner = config.inner_iters or 5

    z = initial_z(ybar, config.z_init, config.seed)
    q = np.maximum(0.0, phi.T @ z)
    lam = np.zeros((n_e, n))
    b = _as_operator(problem.beta * problem.l_x) if problem.beta else None
    c = _class_quadratic(problem, rho)
    schedule = _schedule(config)
    denom = np.sqrt(max(n_e * n, 1))

    trace = []
    converged = False
    residual = rel = float("nan")
    t = 0
    for t in range(1, config.outer_iters + 1):
        a = -ybar + phi @ (lam - rho * q)
        res = minimize_box_qp(a, b, c, z, inner, config.tol_z * 1e-2, schedule)
        rel = np.linalg.norm(res.z - z) / max(np.linalg.norm(z), 1e-12)
        z = res.z
        pz = phi.T @ z
        q = np.maximum(0.0, pz + lam / rho)
        diff = pz - q
        lam += rho * diff
        residual = np.linalg.norm(diff) / denom
        trace.append({
            "iteration": t,
            "objective": co_objective(z, problem),
            "primal_residual": float(residual),
            "relative_change": float(rel),
            "step": float(schedule.last) if schedule.last is not None else float("nan"),
        })
        if rel < config.tol_z and residual < config.tol_primal:
            converged = True
            break
    cmin_raw = float((phi.T @ z).min()) if n_e else 0.0
    lifted = 0.0
    if config.repair:
        z, lifted = lift_parents(z, phi)
    cmin = float((phi.T @ z).min()) if n_e else 0.0
    if not converged:
        log.warning(
            "ADMM stopped at %d iterations: relative change %.3e, primal residual %.3e",
            t, rel, residual,
        )
    return Solution(
        z,
        trace=trace,
        converged=converged,
        iterations=t,
        residuals={"primal": float(residual), "relative_change": float(rel),
                   "constraint_min": cmin, "constraint_min_raw": cmin_raw,
                   "repair_max": lifted},
    )


def solve(problem: CoProblem, config: CoSolverConfig | None = None) -> Solution:
    """Dispatch to PGD or ADMM depending on whether constraints are present."""
    if problem.phi.shape[1]:
        return solve_admm(problem, config)
    return solve_pgd(problem, config)


def write_trace_csv(solution: Solution, path) -> None:
    if not solution.trace:
        fields = ["iteration"]
    else:
        fields = list(solution.trace[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in solution.trace:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
