import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlmg.errors import ConfigError, ParseError
from mlmg.labels import (
    FeatureMatrix,
    LabelState,
    ObservedLabelMatrix,
    Solution,
    build_penalty_matrix,
    load_features,
    load_labels,
    load_vocab,
    mask_test_columns,
    save_features,
    save_labels,
    save_vocab,
)

NEG, POS, MIS = LabelState.NEG, LabelState.POS, LabelState.MISSING

state_matrices = arrays(np.int8, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                        elements=st.sampled_from([0, 1, 2]))


def test_penalty_example():
    y = ObservedLabelMatrix(np.array([[POS, NEG, MIS]]))
    pen = build_penalty_matrix(y, 100, 1)
    np.testing.assert_array_equal(pen.values, [[100.0, -1.0, 0.0]])


def test_penalty_missing_column_is_zero():
    y = ObservedLabelMatrix(np.array([[POS, MIS], [NEG, MIS]]))
    assert not build_penalty_matrix(y).values[:, 1].any()


@pytest.mark.parametrize("r_pos, r_neg", [(1, 1), (0.5, 1), (1, 0), (1, -1)])
def test_penalty_rejects_bad_ratio(r_pos, r_neg):
    y = ObservedLabelMatrix(np.zeros((1, 1), dtype=np.int8))
    with pytest.raises(ConfigError):
        build_penalty_matrix(y, r_pos, r_neg)


@given(state_matrices)
def test_penalty_sign_consistency(states):
    pen = build_penalty_matrix(ObservedLabelMatrix(states)).values
    assert np.array_equal(pen > 0, states == POS)
    assert np.array_equal(pen < 0, states == NEG)
    assert np.array_equal(pen == 0, states == MIS)


def test_test_columns_must_be_missing():
    with pytest.raises(ConfigError):
        ObservedLabelMatrix(np.array([[POS, NEG]]), training_mask=[True, False])


def test_mask_test_columns():
    y = ObservedLabelMatrix(np.array([[POS, NEG, POS], [NEG, NEG, POS]]))
    assert mask_test_columns(y, []) == y
    once = mask_test_columns(y, [1])
    assert (once.states[:, 1] == MIS).all()
    assert not once.training_mask[1]
    np.testing.assert_array_equal(once.states[:, [0, 2]], y.states[:, [0, 2]])
    assert mask_test_columns(once, [1]) == once
    with pytest.raises(ConfigError):
        mask_test_columns(y, [7])


@given(state_matrices, st.data())
def test_mask_idempotent(states, data):
    y = ObservedLabelMatrix(states)
    ids = data.draw(st.lists(st.integers(0, states.shape[1] - 1), unique=True))
    once = mask_test_columns(y, ids)
    assert mask_test_columns(once, ids) == once


def test_solution_clips_tiny_overshoot():
    sol = Solution(np.array([[1.0 + 5e-10, -5e-10]]))
    assert sol.z.min() == 0.0 and sol.z.max() == 1.0
    with pytest.raises(ConfigError):
        Solution(np.array([[1.1]]))


# ------------------------------------------------------------------- file I/O


def test_features_roundtrip(tmp_path, rng):
    x = FeatureMatrix(rng.standard_normal((3, 5)) * 1e3)
    save_features(tmp_path / "x.txt", x)
    back = load_features(tmp_path / "x.txt")
    np.testing.assert_array_equal(back.data, x.data)


def test_features_small_file(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("2 3\n1 2 3\n4 5 6\n")
    np.testing.assert_array_equal(load_features(p).data, [[1, 2, 3], [4, 5, 6]])


@pytest.mark.parametrize("body, line", [
    ("2 3\n1 2 NaN\n4 5 6\n", 2),
    ("2 3\n1 2\n4 5 6\n", 2),
    ("2 3\n1 2 x\n4 5 6\n", 2),
    ("2\n1 2 3\n", 1),
])
def test_features_parse_errors(tmp_path, body, line):
    p = tmp_path / "x.txt"
    p.write_text(body)
    with pytest.raises(ParseError) as info:
        load_features(p)
    assert info.value.line == line


def test_dense_labels(tmp_path):
    p = tmp_path / "y.txt"
    p.write_text("2 2\ntrain T T\n1 0\n? 1\n")
    y = load_labels(p)
    np.testing.assert_array_equal(y.states, [[POS, NEG], [MIS, POS]])


def test_sparse_labels(tmp_path):
    p = tmp_path / "y.txt"
    p.write_text("5 9 default=0\ntrain" + " T" * 9 + "\n3 7 1\n")
    y = load_labels(p)
    expected = np.zeros((5, 9), dtype=np.int8)
    expected[3, 7] = POS
    np.testing.assert_array_equal(y.states, expected)


@pytest.mark.parametrize("body", [
    "1 2\ntrain T T\n1 x\n",
    "2 2\ntrain T T\n1 0\n",
    "1 2\ntrain T\n1 0\n",
    "1 2\ntrain T E\n1 0\n",
    "1 2 default=0\ntrain T T\n0 5 1\n",
])
def test_label_parse_errors(tmp_path, body):
    p = tmp_path / "y.txt"
    p.write_text(body)
    with pytest.raises(ParseError):
        load_labels(p)


@pytest.mark.parametrize("sparse", [False, True])
@given(states=state_matrices, mask_bits=st.integers(0, 63))
def test_labels_roundtrip(tmp_path_factory, sparse, states, mask_bits):
    n = states.shape[1]
    mask = np.array([(mask_bits >> j) & 1 == 0 for j in range(n)])
    y = ObservedLabelMatrix.from_binary(states == POS, training_mask=mask)
    y = y.with_states(np.where(mask, states, MIS))
    path = tmp_path_factory.mktemp("lab") / "y.txt"
    save_labels(path, y, sparse=sparse, default="?")
    assert load_labels(path) == y


def test_vocab_roundtrip(tmp_path):
    names = ["animal", "horse", "grass"]
    save_vocab(tmp_path / "v.txt", names)
    assert load_vocab(tmp_path / "v.txt") == names
    (tmp_path / "dup.txt").write_text("a\na\n")
    with pytest.raises(ParseError):
        load_vocab(tmp_path / "dup.txt")
