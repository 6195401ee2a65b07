"""Proximal operators, the vectorized QP form, and a small-instance oracle.

The vectorized form uses column-major stacking, ``z[i + j*m] = Z[i, j]``, so
that

    tr(Z Lx Z^T) = z^T (Lx^T kron I_m) z,    tr(Z^T Lc Z) = z^T (I_n kron Lc) z,
    vec(Phi^T Z) = (I_n kron Phi^T) z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mlmg.errors import ConfigError, NumericalError
from mlmg.labels import PenaltyMatrix, Solution

MAX_VECTORIZED = 10_000
MAX_EIG_SIZE = 200


def soft_threshold(a, lam):
    """Entrywise ``sign(a) * max(0, |a| - lam)``."""
    if lam < 0:
        raise ConfigError(f"threshold must be nonnegative, got {lam}")
    a = np.asarray(a, dtype=float)
    return np.sign(a) * np.maximum(np.abs(a) - lam, 0.0)


def singular_value_threshold(a, lam):
    """Proximal operator of ``lam * nuclear norm``.

    Computes the full thin SVD ``A = U diag(s) V^T`` and returns
    ``U diag(max(s - lam, 0)) V^T``.
    """
    if lam < 0:
        raise ConfigError(f"threshold must be nonnegative, got {lam}")
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NumericalError(
            f"SVD input of shape {a.shape} has {np.count_nonzero(~np.isfinite(a))} "
            "non-finite entries"
        )
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        fro = float(np.linalg.norm(a))
        raise NumericalError(
            f"SVD did not converge on {a.shape} matrix (Frobenius norm {fro:.3e}, "
            f"max |entry| {np.abs(a).max():.3e}): {exc}"
        ) from None
    shrunk = np.maximum(s - lam, 0.0)
    keep = shrunk > 0
    return (u[:, keep] * shrunk[keep]) @ vt[keep]


def nuclear_norm(a) -> float:
    return float(np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False).sum())


def min_eigenvalue(a) -> float:
    """Smallest eigenvalue of a small symmetric matrix."""
    a = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_EIG_SIZE:
        raise ConfigError(f"matrix of size {a.shape[0]} exceeds {MAX_EIG_SIZE}")
    if a.size and np.abs(a - a.T).max() > 1e-9:
        raise ConfigError("matrix is not symmetric")
    if a.size == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(a)[0])


@dataclass(frozen=True, eq=False)
class VectorizedQP:
    """``min q^T z + 1/2 z^T hess z`` s.t. ``0 <= z <= 1``, ``constraint @ z >= 0``."""

    q: np.ndarray
    hess: sp.csr_matrix
    constraint: sp.csr_matrix
    m: int
    n: int

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float).ravel()
        return float(self.q @ z + 0.5 * z @ (self.hess @ z))

    def vec(self, z_matrix):
        return np.asarray(z_matrix, dtype=float).ravel(order="F")

    def unvec(self, z):
        return np.asarray(z).reshape((self.m, self.n), order="F")


def vectorize_problem(penalty, l_x, l_c, phi, beta, gamma) -> VectorizedQP:
    ybar = penalty.values if isinstance(penalty, PenaltyMatrix) else np.asarray(penalty)
    m, n = ybar.shape
    if m * n > MAX_VECTORIZED:
        raise ConfigError(f"m*n = {m * n} exceeds the vectorization guard {MAX_VECTORIZED}")
    l_x = sp.csr_matrix(l_x)
    l_c = sp.csr_matrix((m, m)) if l_c is None else sp.csr_matrix(l_c)
    lap = beta * sp.kron(l_x.T, sp.identity(m)) + gamma * sp.kron(sp.identity(n), l_c)
    phi = np.zeros((m, 0)) if phi is None else np.asarray(phi, dtype=float)
    cons = sp.kron(sp.identity(n), sp.csr_matrix(phi.T))
    return VectorizedQP(
        q=-ybar.ravel(order="F"),
        hess=sp.csr_matrix(2.0 * lap),
        constraint=sp.csr_matrix(cons),
        m=m,
        n=n,
    )


def _row_sum_bound(a) -> float:
    """Gershgorin bound on the spectral radius of a symmetric matrix."""
    if a.shape[0] == 0 or a.nnz == 0:
        return 0.0
    return float(abs(a).sum(axis=1).max())


def _fista_box(grad, z, step, tol, budget):
    """Accelerated projected gradient on ``[0, 1]`` with adaptive restart.

    Stops when the gradient-mapping norm drops to ``tol``; returns
    ``(z, iterations, converged)``.
    """
    y = z.copy()
    t = 1.0
    for it in range(1, budget + 1):
        gy = grad(y)
        z_new = np.clip(y - step * gy, 0.0, 1.0)
        if np.linalg.norm(y - z_new) / step <= tol:
            return z_new, it, True
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # restart when momentum points uphill
        if np.dot(gy, z_new - z) > 0:
            y = z_new.copy()
            t_new = 1.0
        else:
            y = z_new + ((t - 1.0) / t_new) * (z_new - z)
        z, t = z_new, t_new
    return z, budget, False


def oracle_solve(qp: VectorizedQP, tol=1e-9, max_iter=200_000, mu=10.0) -> Solution:
    """Global optimum of a small vectorized problem, for testing only.

    Augmented Lagrangian on ``K z >= 0``: each outer step minimizes

        f(z) + 1/(2 mu) ||max(0, lam - mu K z)||^2

    over the box by accelerated projected gradient (step ``1/L`` from a
    Gershgorin bound), then sets ``lam = max(0, lam - mu K z)``. Stops when
    both the constraint violation and the complementarity gap fall below
    ``tol``.
    """
    if qp.m * qp.n > MAX_VECTORIZED:
        raise ConfigError("problem too large for the oracle")
    k = qp.constraint
    hess, kd = qp.hess, k
    if hess.shape[0] <= 2000:
        hess, kd = hess.toarray(), k.toarray()
    q = qp.q
    has_cons = k.shape[0] > 0
    lip = max(_row_sum_bound(qp.hess) + mu * _row_sum_bound(sp.csr_matrix(k.T @ k)), 1e-12)
    step = 1.0 / lip
    z = (q < 0).astype(float)
    lam = np.zeros(k.shape[0])
    used, trace = 0, []
    while True:
        lam_now = lam

        def grad(v):
            g = q + hess @ v
            if has_cons:
                g = g - kd.T @ np.maximum(0.0, lam_now - mu * (kd @ v))
            return g

        z, it, ok = _fista_box(grad, z, step, tol, max_iter - used)
        used += it
        if not ok:
            raise NumericalError(f"oracle inner solve stalled after {used} iterations")
        if not has_cons:
            trace.append({"outer": 1, "iterations": used, "objective": qp.objective(z)})
            break
        kz = kd @ z
        lam = np.maximum(0.0, lam - mu * kz)
        viol = float(np.maximum(0.0, -kz).max())
        gap = float(np.abs(lam * kz).max())
        trace.append({"outer": len(trace) + 1, "iterations": used,
                      "objective": qp.objective(z), "violation": viol})
        if viol <= tol and gap <= tol:
            break
        if used >= max_iter:
            raise NumericalError(
                f"oracle did not converge in {used} iterations (violation {viol:.3e})"
            )
    cmin = float(np.minimum(k @ z, 0.0).min(initial=0.0))
    return Solution(
        qp.unvec(z),
        trace=trace,
        iterations=used,
        residuals={"constraint_min": cmin},
    )
