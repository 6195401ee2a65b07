"""Small-instance audit: ADMM against the vectorized oracle."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mlmg.graphs import SparseSymmetricGraph, normalized_laplacian
from mlmg.hierarchy import Hierarchy, build_constraint_matrix
from mlmg.labels import ObservedLabelMatrix, build_penalty_matrix
from mlmg.prox import oracle_solve, vectorize_problem
from mlmg.solver_co import CoProblem, CoSolverConfig, co_objective, solve_admm

BETAS = (0.1, 1, 5, 10, 50)
GAMMAS = (0, 0.01, 0.1, 1, 10)

# tight enough that ADMM and the oracle agree far below the audit tolerance
AUDIT_SOLVER = CoSolverConfig(rho=10.0, outer_iters=5000, inner_iters=10, tol_z=1e-9, tol_primal=1e-9)


def random_graph(rng, size, density=0.4) -> SparseSymmetricGraph:
    w = rng.random((size, size)) * (rng.random((size, size)) < density)
    w = np.triu(w, 1)
    return SparseSymmetricGraph.from_weights(sp.csr_matrix(w + w.T))


def random_hierarchy(rng, m, max_edges=3) -> Hierarchy:
    """Up to ``max_edges`` edges, each from a lower to a higher class index."""
    target = int(rng.integers(0, max_edges + 1))
    pairs = [(p, c) for p in range(m) for c in range(p + 1, m)]
    if not pairs or target == 0:
        return Hierarchy(m)
    pick = rng.choice(len(pairs), size=min(target, len(pairs)), replace=False)
    return Hierarchy(m, tuple(sorted(pairs[i] for i in pick)))


def random_problem(rng, max_m=5, max_n=15, max_edges=3) -> CoProblem:
    m = int(rng.integers(2, max_m + 1))
    n = int(rng.integers(2, max_n + 1))
    states = rng.choice([0, 1, 2], size=(m, n), p=[0.5, 0.2, 0.3])
    penalty = build_penalty_matrix(ObservedLabelMatrix(states))
    l_x = normalized_laplacian(random_graph(rng, n))
    l_c = normalized_laplacian(random_graph(rng, m, 0.6))
    phi = build_constraint_matrix(random_hierarchy(rng, m, max_edges))
    beta = float(rng.choice(BETAS))
    gamma = float(rng.choice(GAMMAS))
    return CoProblem(penalty, l_x, l_c, phi, beta, gamma)


@dataclass
class AuditRow:
    shape: tuple
    n_edges: int
    beta: float
    gamma: float
    admm_objective: float
    oracle_objective: float
    relative_gap: float
    constraint_min: float
    admm_seconds: float


def relative_gap(f, f_ref) -> float:
    """``|f - f_ref|`` scaled by ``max(1, |f_ref|)``."""
    return abs(f - f_ref) / max(1.0, abs(f_ref))


def audit(count=30, seed=0, config=AUDIT_SOLVER) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(count):
        prob = random_problem(rng)
        t0 = time.perf_counter()
        sol = solve_admm(prob, config)
        elapsed = time.perf_counter() - t0
        qp = vectorize_problem(prob.penalty, prob.l_x, prob.l_c, prob.phi, prob.beta, prob.gamma)
        ref = oracle_solve(qp)
        fa, fo = co_objective(sol.z, prob), co_objective(ref.z, prob)
        rows.append(AuditRow(
            shape=prob.shape,
            n_edges=prob.phi.shape[1],
            beta=prob.beta,
            gamma=prob.gamma,
            admm_objective=fa,
            oracle_objective=fo,
            relative_gap=relative_gap(fa, fo),
            constraint_min=sol.residuals["constraint_min"],
            admm_seconds=elapsed,
        ))
    return rows


def format_rows(rows) -> str:
    lines = ["m n n_e beta gamma admm oracle rel_gap constraint_min seconds"]
    for r in rows:
        lines.append(
            f"{r.shape[0]} {r.shape[1]} {r.n_edges} {r.beta:g} {r.gamma:g} "
            f"{r.admm_objective:.9g} {r.oracle_objective:.9g} {r.relative_gap:.2e} "
            f"{r.constraint_min:.2e} {r.admm_seconds:.3f}"
        )
    return "\n".join(lines) + "\n"
