import numpy as np
import pytest

from mlmg.hierarchy import check_consistency
from mlmg.harness.synth import generate_synthetic
from mlmg.labels import LabelState


def test_shapes_and_split():
    ds = generate_synthetic(n=100, m=20, d=3, test_frac=0.2, seed=1)
    assert ds.features.data.shape == (3, 100)
    assert ds.labels.shape == ds.truth.shape == (20, 100)
    assert ds.test_columns.size == 20
    assert np.all(ds.labels.states[:, ds.test_columns] == LabelState.MISSING)
    assert ds.truth.training_mask.all()


def test_truth_is_ancestor_closed():
    ds = generate_synthetic(n=200, m=30, seed=2)
    assert check_consistency(ds.truth.states == LabelState.POS, ds.hierarchy) == 0
    assert all(p < c for p, c in ds.hierarchy.edges)


def test_block_structure_is_low_rank_plus_sparse():
    ds = generate_synthetic(n=400, m=20, rank=2, block_size=4, tail_edges=False, seed=3)
    y = (ds.truth.states == LabelState.POS).astype(float)
    # class 1 and 2 share block 0: they disagree only through flips
    assert np.mean(y[1] != y[2]) < 0.15
    # different blocks are independent
    assert 0.3 < np.mean(y[1] != y[5]) < 0.7


def test_unclosed_observed_labels():
    ds = generate_synthetic(n=300, m=20, closed_observed=False, test_frac=0, seed=4)
    pos = ds.labels.states == LabelState.POS
    assert check_consistency(pos, ds.hierarchy) > 0


def test_deterministic():
    a = generate_synthetic(n=50, m=10, seed=9)
    b = generate_synthetic(n=50, m=10, seed=9)
    np.testing.assert_array_equal(a.features.data, b.features.data)
    np.testing.assert_array_equal(a.labels.states, b.labels.states)


def test_block_overflow():
    with pytest.raises(ValueError):
        generate_synthetic(m=10, rank=3, block_size=4)
