import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from mlmg.errors import ConfigError
from mlmg.graphs import (
    SparseSymmetricGraph,
    class_cooccurrence,
    dump_graph,
    instance_similarity,
    normalized_laplacian,
    smoothness,
)
from mlmg.labels import FeatureMatrix, ObservedLabelMatrix


def _random_graph(rng, n, density=0.5):
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    return SparseSymmetricGraph.from_weights(w + w.T)


def test_instance_similarity_analytic():
    g = instance_similarity(FeatureMatrix(np.array([[0.0, 1.0, 3.0]])), k_x=2, h=1)
    w = g.weights.toarray()
    np.testing.assert_allclose(w[0, 1], np.exp(-1.0), rtol=1e-14)
    np.testing.assert_allclose(w[0, 2], np.exp(-9.0 / 2.0), rtol=1e-14)
    np.testing.assert_allclose(w[1, 2], np.exp(-4.0 / 2.0), rtol=1e-14)
    np.testing.assert_array_equal(w, w.T)
    assert np.all(np.diag(w) == 0)


def test_duplicate_points_get_unit_weight():
    x = FeatureMatrix(np.array([[0.0, 0.0, 0.0, 5.0]]))
    w = instance_similarity(x, k_x=2, h=1).weights.toarray()
    assert np.all(np.isfinite(w))
    assert w[0, 1] == 1.0


def test_knn_ties_go_to_lower_index():
    # point 0 is equidistant from 1 and 2; 1 and 2 each have a closer partner
    x = FeatureMatrix(np.array([[0.0, -1.0, 1.0, -1.1, 1.1]]))
    w = instance_similarity(x, k_x=1, h=1).weights.toarray()
    assert w[0, 1] > 0
    assert w[0, 2] == 0


@pytest.mark.parametrize("k_x, h", [(3, 1), (1, 3), (0, 1)])
def test_instance_similarity_bad_sizes(k_x, h):
    with pytest.raises(ConfigError):
        instance_similarity(FeatureMatrix(np.zeros((1, 3))), k_x=k_x, h=h)


def test_graph_sparsity_and_symmetry(rng):
    g = instance_similarity(FeatureMatrix(rng.standard_normal((4, 60))), k_x=5, h=3)
    w = g.weights
    assert abs(w - w.T).max() == 0
    assert w.min() >= 0
    assert np.all((w > 0).sum(axis=1) >= 5)
    np.testing.assert_allclose(g.degrees, np.asarray(w.sum(axis=1)).ravel())


def test_cooccurrence_examples():
    states = np.array([[1, 1, 0], [1, 0, 0], [1, 1, 0], [0, 0, 0]], dtype=np.int8)
    w = class_cooccurrence(ObservedLabelMatrix(states), k_c=3).weights.toarray()
    np.testing.assert_allclose(w[0, 1], 1 / np.sqrt(2), rtol=1e-14)
    assert w[0, 2] == pytest.approx(1.0)
    assert not w[3].any()
    assert np.all(np.diag(w) == 0)


def test_cooccurrence_ignores_missing_and_test_columns():
    s = np.array([[1, 2, 2], [1, 1, 2]], dtype=np.int8)
    y = ObservedLabelMatrix(s, training_mask=[True, True, False])
    w = class_cooccurrence(y, k_c=1).weights.toarray()
    # class 0 row is (1, 0) over training columns, class 1 row is (1, 1)
    np.testing.assert_allclose(w[0, 1], 1 / np.sqrt(2))


def test_cooccurrence_topk_sparsifies():
    rng = np.random.default_rng(0)
    s = (rng.random((12, 40)) < 0.4).astype(np.int8)
    w = class_cooccurrence(ObservedLabelMatrix(s), k_c=2).weights
    assert w.nnz <= 2 * 12 * 2
    assert abs(w - w.T).max() == 0


def test_laplacian_examples():
    lap = normalized_laplacian(SparseSymmetricGraph.from_weights(np.array([[0, 1.0], [1.0, 0]])))
    np.testing.assert_allclose(lap.toarray(), [[1, -1], [-1, 1]])
    lap = normalized_laplacian(SparseSymmetricGraph.from_weights(np.zeros((3, 3))))
    np.testing.assert_array_equal(lap.toarray(), np.eye(3))


def test_laplacian_spectrum_random_six_nodes(rng):
    lap = normalized_laplacian(_random_graph(rng, 6)).toarray()
    ev = np.linalg.eigvalsh(lap)
    assert ev[0] >= -1e-8 and ev[-1] <= 2 + 1e-8


def test_laplacian_isolated_node_identity_row(rng):
    w = np.zeros((4, 4))
    w[0, 1] = w[1, 0] = 0.7
    w[1, 2] = w[2, 1] = 0.2
    lap = normalized_laplacian(SparseSymmetricGraph.from_weights(w)).toarray()
    np.testing.assert_array_equal(lap[3], [0, 0, 0, 1])
    np.testing.assert_array_equal(lap[:, 3], [0, 0, 0, 1])


@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_smoothness_matches_pairwise_sum(n, m, seed):
    rng = np.random.default_rng(seed)
    g = _random_graph(rng, n)
    w, d = g.weights.toarray(), g.degrees
    z = rng.standard_normal((m, n))
    expected = 0.0
    for i in range(n):
        for j in range(n):
            if w[i, j]:
                diff = z[:, i] / np.sqrt(d[i]) - z[:, j] / np.sqrt(d[j])
                expected += 0.5 * w[i, j] * diff @ diff
    # isolated nodes contribute their own squared norm through the identity row
    iso = d == 0
    expected += float(np.sum(z[:, iso] ** 2))
    got = smoothness(z, normalized_laplacian(g))
    assert got == pytest.approx(expected, rel=1e-10, abs=1e-12)


@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_laplacian_psd_quadratic_form(n, seed):
    rng = np.random.default_rng(seed)
    lap = normalized_laplacian(_random_graph(rng, n))
    for _ in range(100 // 10):
        x = rng.standard_normal((n, 10))
        assert np.all(np.einsum("ij,ij->j", x, lap @ x) >= -1e-10)


@given(st.floats(1e-3, 1e3), st.integers(0, 2**31 - 1))
def test_laplacian_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    g = _random_graph(rng, 7)
    scaled = SparseSymmetricGraph.from_weights(g.weights * c)
    diff = normalized_laplacian(g) - normalized_laplacian(scaled)
    assert abs(diff).max() <= 1e-12


def test_from_weights_validates():
    with pytest.raises(ConfigError):
        SparseSymmetricGraph.from_weights(np.array([[0, 1.0], [0.5, 0]]))
    with pytest.raises(ConfigError):
        SparseSymmetricGraph.from_weights(np.array([[0, -1.0], [-1.0, 0]]))
    g = SparseSymmetricGraph.from_weights(sp.csr_matrix(np.array([[3.0, 1.0], [1.0, 0.0]])))
    assert g.weights[0, 0] == 0


def test_dump_graph(tmp_path):
    w = np.array([[0, 0.5, 0], [0.5, 0, 0.25], [0, 0.25, 0]])
    dump_graph(SparseSymmetricGraph.from_weights(w), tmp_path / "g.txt")
    assert (tmp_path / "g.txt").read_text() == "0 1 0.5\n1 2 0.25\n"
