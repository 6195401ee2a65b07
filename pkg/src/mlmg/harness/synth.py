"""Synthetic multi-label datasets with planted low-rank + sparse structure.

Labels are built as ``XOR(low_rank, sparse)`` and then closed over a class
hierarchy:

* ``rank`` disjoint class blocks ("patterns"); every instance switches each
  block on or off, so the block part of the label matrix has rank ``rank``.
* a ``sparse_frac`` fraction of all entries is flipped at random.
* each block is organized as a small tree (first class is the root), and the
  remaining "tail" classes form root -> children pairs or stay singletons.
  Positive labels are propagated to ancestors.

Features are Gaussian clusters, one centre per on/off combination of the
blocks, with unit noise; ``separation`` scales the distance between centres.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mlmg.errors import ConfigError
from mlmg.hierarchy import Hierarchy, fill_ancestors, save_hierarchy
from mlmg.labels import (
    FeatureMatrix,
    ObservedLabelMatrix,
    mask_test_columns,
    save_features,
    save_labels,
    save_vocab,
)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: FeatureMatrix
    labels: ObservedLabelMatrix
    truth: ObservedLabelMatrix
    hierarchy: Hierarchy
    vocab: tuple

    @property
    def test_columns(self):
        return np.flatnonzero(~self.labels.training_mask)


def _block_tree(classes, branching=3):
    """Parent -> child edges arranging ``classes`` as a breadth-first tree."""
    edges = []
    for pos, child in enumerate(classes[1:], start=1):
        parent = classes[(pos - 1) // branching]
        edges.append((parent, child))
    return edges


def generate_synthetic(
    n=2000,
    m=40,
    d=10,
    rank=2,
    block_size=None,
    sparse_frac=0.05,
    separation=1.0,
    test_frac=0.1,
    tail_edges=True,
    closed_observed=True,
    seed=0,
) -> Dataset:
    """Generate features, observed labels (test columns masked) and truth.

    ``truth`` is always ancestor-closed. With ``closed_observed=False`` the
    observed training labels keep the raw, unclosed positives, so ancestors
    of a positive may be recorded as negative.
    """
    rng = np.random.default_rng(seed)
    block_size = block_size or max(2, m // 5)
    if rank * block_size > m:
        raise ConfigError(f"{rank} blocks of {block_size} classes exceed m={m}")

    blocks = [list(range(r * block_size, (r + 1) * block_size)) for r in range(rank)]
    on = rng.random((rank, n)) < 0.5
    low_rank = np.zeros((m, n), dtype=bool)
    for r, cls in enumerate(blocks):
        low_rank[cls] = on[r]
    flips = rng.random((m, n)) < sparse_frac
    labels = low_rank ^ flips

    edges = []
    for cls in blocks:
        edges += _block_tree(cls)
    tail = list(range(rank * block_size, m))
    if tail_edges:
        # root -> two children triples; leftovers stay singletons
        for t in range(0, len(tail) - 2, 4):
            edges += [(tail[t], tail[t + 1]), (tail[t], tail[t + 2])]
    hierarchy = Hierarchy(m, tuple(edges))

    vocab = tuple(f"c{i:03d}" for i in range(m))
    raw = ObservedLabelMatrix.from_binary(labels, vocab)
    truth = fill_ancestors(raw, hierarchy)

    combo = np.zeros(n, dtype=int)
    for r in range(rank):
        combo |= on[r].astype(int) << r
    centres = separation * rng.standard_normal((2**rank, d))
    feats = centres[combo].T + rng.standard_normal((d, n))

    n_test = int(round(test_frac * n))
    test_ids = np.sort(rng.choice(n, size=n_test, replace=False)) if n_test else []
    observed = mask_test_columns(truth if closed_observed else raw, test_ids)
    return Dataset(FeatureMatrix(feats), observed, truth, hierarchy, vocab)


def save_dataset(ds: Dataset, directory) -> dict:
    """Write ``features.txt``, ``labels.txt``, ``truth.txt``, ``hierarchy.txt``
    and ``vocab.txt``; returns the paths keyed by role."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "features": out / "features.txt",
        "labels": out / "labels.txt",
        "truth": out / "truth.txt",
        "hierarchy": out / "hierarchy.txt",
        "vocab": out / "vocab.txt",
    }
    save_features(paths["features"], ds.features)
    save_labels(paths["labels"], ds.labels, sparse=True, default="0")
    save_labels(paths["truth"], ds.truth, sparse=True, default="0")
    save_hierarchy(paths["hierarchy"], ds.hierarchy, ds.vocab)
    save_vocab(paths["vocab"], ds.vocab)
    return {k: str(v) for k, v in paths.items()}
