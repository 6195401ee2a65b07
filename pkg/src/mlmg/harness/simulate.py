"""Missing-label simulation.

Randomness comes from one ``numpy.random.PCG64`` stream per seed. Sampling
without replacement is a partial Fisher-Yates shuffle over the flattened
candidate list: step ``t`` swaps position ``t`` with ``t + U{0, N-t-1}``
drawn by ``Generator.integers``. Training entries are flattened class-major
over the training columns in ascending order (``index = i * n_tr + jj``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mlmg.errors import ConfigError
from mlmg.hierarchy import Hierarchy, fill_ancestors
from mlmg.labels import LabelState, ObservedLabelMatrix

MODES = ("leaf-singleton", "all-classes", "semi-supervised")


@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    y_observed: ObservedLabelMatrix
    y_complete: ObservedLabelMatrix
    hidden_entries: tuple


def rng_for(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def partial_shuffle(rng, population, count) -> np.ndarray:
    """First ``count`` items of a Fisher-Yates shuffle of ``population``."""
    pool = np.array(population, copy=True)
    size = pool.size
    if not (0 <= count <= size):
        raise ConfigError(f"cannot sample {count} of {size} items")
    for t in range(count):
        r = t + int(rng.integers(0, size - t))
        pool[t], pool[r] = pool[r], pool[t]
    return pool[:count]


def round_half_up(x) -> int:
    return int(math.floor(x + 0.5))


def simulate_missing(
    y: ObservedLabelMatrix,
    h: Hierarchy | None,
    tau: float,
    mode: str = "leaf-singleton",
    seed: int = 0,
    truth: ObservedLabelMatrix | None = None,
) -> SimulatedDataset:
    """Hide training labels of ``y``.

    ``leaf-singleton`` samples ``round(m * n_tr * tau)`` training entries and
    hides those on leaf or singleton classes; ``all-classes`` hides every
    sampled entry; ``semi-supervised`` hides every label of as many random
    training instances as there are test instances (``tau`` is ignored).

    ``y_complete`` is the ancestor-closed ``truth`` (or ``y`` itself when no
    separate ground truth is given).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown missing mode {mode!r}; expected one of {MODES}")
    if not (0.0 <= tau < 1.0):
        raise ConfigError(f"tau must lie in [0, 1), got {tau}")
    m, n = y.shape
    h = h if h is not None else Hierarchy(m)
    if h.num_classes != m:
        raise ConfigError(f"hierarchy has {h.num_classes} classes, labels {m}")
    base = truth if truth is not None else y
    if base.shape != y.shape:
        raise ConfigError("ground truth and labels differ in shape")
    y_complete = fill_ancestors(base, h)

    rng = rng_for(seed)
    train_cols = np.flatnonzero(y.training_mask)
    n_tr = train_cols.size
    states = y.states.copy()

    if mode == "semi-supervised":
        n_test = n - n_tr
        if n_test == 0 or n_test >= n_tr:
            raise ConfigError(
                f"semi-supervised mode needs 0 < #test < #train, got {n_test} / {n_tr}"
            )
        picked = np.sort(partial_shuffle(rng, train_cols, n_test))
        rows, cols = np.meshgrid(np.arange(m), picked, indexing="ij")
        rows, cols = rows.ravel(), cols.ravel()
    else:
        count = round_half_up(m * n_tr * tau)
        flat = partial_shuffle(rng, np.arange(m * n_tr), count)
        if n_tr:
            rows, cols = flat // n_tr, train_cols[flat % n_tr]
        else:
            rows = cols = flat
        if mode == "leaf-singleton":
            keep = h.leaf_or_singleton()[rows]
            rows, cols = rows[keep], cols[keep]

    present = states[rows, cols] != LabelState.MISSING
    rows, cols = rows[present], cols[present]
    states[rows, cols] = LabelState.MISSING
    order = np.lexsort((cols, rows))
    hidden = tuple((int(rows[i]), int(cols[i])) for i in order)
    return SimulatedDataset(y.with_states(states), y_complete, hidden)


def hide_instances(y: ObservedLabelMatrix, count, seed) -> tuple[ObservedLabelMatrix, np.ndarray]:
    """Hide every label of ``count`` random training instances.

    Used to carve a validation subset out of the training columns; the
    returned column indices stay marked as training columns.
    """
    train_cols = np.flatnonzero(y.training_mask)
    picked = np.sort(partial_shuffle(rng_for(seed), train_cols, count))
    states = y.states.copy()
    states[:, picked] = LabelState.MISSING
    return y.with_states(states), picked
