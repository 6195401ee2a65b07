import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlmg.errors import ConfigError, NumericalError
from mlmg.harness.oracle_check import random_problem
from mlmg.prox import (
    min_eigenvalue,
    nuclear_norm,
    oracle_solve,
    singular_value_threshold,
    soft_threshold,
    vectorize_problem,
)
from mlmg.solver_co import co_objective

finite = st.floats(-1e3, 1e3, allow_nan=False)


def _qp(problem):
    return vectorize_problem(problem.penalty, problem.l_x, problem.l_c, problem.phi,
                             problem.beta, problem.gamma)


# ------------------------------------------------------------- soft threshold


@pytest.mark.parametrize("a, lam, expected", [(2.5, 1, 1.5), (-0.3, 0.5, 0.0), (-2.0, 0.5, -1.5)])
def test_soft_threshold_examples(a, lam, expected):
    assert soft_threshold(np.array([a]), lam)[0] == expected


@given(arrays(float, (3, 4), elements=finite))
def test_soft_threshold_zero_is_identity(a):
    np.testing.assert_array_equal(soft_threshold(a, 0.0), a)


@given(arrays(float, (3, 4), elements=finite), arrays(float, (3, 4), elements=finite),
       st.floats(0, 100))
def test_soft_threshold_nonexpansive(a, b, lam):
    lhs = np.linalg.norm(soft_threshold(a, lam) - soft_threshold(b, lam))
    assert lhs <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-12


def test_soft_threshold_negative_lambda():
    with pytest.raises(ConfigError):
        soft_threshold(np.ones(2), -1)


# ------------------------------------------------------------------------ SVT


def test_svt_diagonal():
    np.testing.assert_allclose(singular_value_threshold(np.diag([3.0, 1.0]), 2.0),
                               np.diag([1.0, 0.0]), atol=1e-14)


@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_svt_zero_threshold_is_identity(a):
    np.testing.assert_allclose(singular_value_threshold(a, 0.0), a, atol=1e-10)


@given(st.integers(1, 6), st.integers(1, 6), st.floats(0, 3), st.integers(0, 2**31 - 1))
def test_svt_singular_values(m, n, lam, seed):
    a = np.random.default_rng(seed).standard_normal((m, n))
    s = np.linalg.svd(a, compute_uv=False)
    got = np.linalg.svd(singular_value_threshold(a, lam), compute_uv=False)
    np.testing.assert_allclose(got, np.maximum(s - lam, 0), atol=1e-8)


def test_svt_is_prox_minimizer(rng):
    a = rng.standard_normal((4, 6))
    lam = 0.5
    h = singular_value_threshold(a, lam)

    def f(x):
        return lam * nuclear_norm(x) + 0.5 * np.sum((x - a) ** 2)

    best = f(h)
    for scale in (1e-1, 1e-3):
        for _ in range(500):
            assert f(h + scale * rng.standard_normal(h.shape)) >= best - 1e-12


def test_svt_rejects_nonfinite():
    with pytest.raises(NumericalError):
        singular_value_threshold(np.array([[np.nan, 1.0]]), 0.1)


# ------------------------------------------------------------- eigen checks


def test_min_eigenvalue_examples():
    assert min_eigenvalue(np.eye(3)) == pytest.approx(1.0)
    assert min_eigenvalue(np.array([[1.0, -1.0], [-1.0, 1.0]])) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ConfigError):
        min_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ConfigError):
        min_eigenvalue(np.eye(201))


# ---------------------------------------------------------- vectorized form


def test_vectorize_small_example():
    lx = np.array([[1.0, -1.0], [-1.0, 1.0]])
    qp = vectorize_problem(np.array([[3.0, -1.0]]), lx, None, None, 1.0, 0.0)
    np.testing.assert_array_equal(qp.hess.toarray(), 2 * lx)
    np.testing.assert_array_equal(qp.q, [-3.0, 1.0])


def test_vectorize_zero_weights_gives_linear_program(rng):
    prob = random_problem(rng)
    qp = vectorize_problem(prob.penalty, prob.l_x, prob.l_c, prob.phi, 0.0, 0.0)
    assert qp.hess.nnz == 0 or abs(qp.hess).max() == 0


@given(st.integers(0, 2**31 - 1))
def test_vectorized_objective_parity(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng)
    qp = _qp(prob)
    z = rng.random(prob.shape)
    assert qp.objective(qp.vec(z)) == pytest.approx(co_objective(z, prob), rel=1e-9, abs=1e-9)
    np.testing.assert_allclose(qp.constraint @ qp.vec(z), (prob.phi.T @ z).ravel(order="F"),
                               atol=1e-14)
    np.testing.assert_array_equal(qp.unvec(qp.vec(z)), z)


def test_vectorize_size_guard():
    with pytest.raises(ConfigError):
        vectorize_problem(np.zeros((101, 100)), sp.identity(100), None, None, 1, 0)


@given(st.integers(0, 2**31 - 1))
def test_hessian_psd(seed):
    prob = random_problem(np.random.default_rng(seed))
    assert min_eigenvalue(_qp(prob).hess) >= -1e-8


@given(st.integers(0, 2**31 - 1))
def test_convexity_witness(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng)
    for _ in range(10):
        z1, z2 = rng.random(prob.shape), rng.random(prob.shape)
        t = rng.random()
        mid = co_objective(t * z1 + (1 - t) * z2, prob)
        assert mid <= t * co_objective(z1, prob) + (1 - t) * co_objective(z2, prob) + 1e-9


# ---------------------------------------------------------------- oracle


def test_oracle_scalar_cases():
    eye = sp.identity(1)
    assert oracle_solve(vectorize_problem(np.array([[100.0]]), eye * 0, None, None, 0, 0)).z[0, 0] == 1
    assert oracle_solve(vectorize_problem(np.array([[-1.0]]), eye * 0, None, None, 0, 0)).z[0, 0] == 0


def test_oracle_parent_child_pair():
    phi = np.array([[1.0], [-1.0]])
    qp = vectorize_problem(np.array([[-1.0], [100.0]]), sp.csr_matrix((1, 1)), None, phi, 0, 0)
    np.testing.assert_allclose(oracle_solve(qp).z[:, 0], [1.0, 1.0], atol=1e-9)


def test_oracle_matches_cvxpy(rng):
    cp = pytest.importorskip("cvxpy")
    for _ in range(5):
        prob = random_problem(rng)
        qp = _qp(prob)
        ref = oracle_solve(qp)
        x = cp.Variable(qp.m * qp.n)
        h = qp.hess.toarray()
        ev, vec = np.linalg.eigh(h)
        root = (vec * np.sqrt(np.clip(ev, 0, None))).T
        cons = [x >= 0, x <= 1]
        if qp.constraint.shape[0]:
            cons.append(qp.constraint.toarray() @ x >= 0)
        problem = cp.Problem(cp.Minimize(qp.q @ x + 0.5 * cp.sum_squares(root @ x)), cons)
        value = problem.solve(solver=cp.CLARABEL)
        f = qp.objective(qp.vec(ref.z))
        assert abs(f - value) <= 1e-6 * max(1.0, abs(value))
        assert ref.residuals["constraint_min"] >= -1e-9
