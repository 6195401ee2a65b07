"""Core matrix types, three-state label semantics and text file I/O.

Label matrices are stored column-per-instance (``m`` classes by ``n``
instances). Each entry is one of :class:`LabelState`; the numeric value
``1/2`` that is sometimes used for unknown labels never appears in memory.

File formats
------------
Feature file::

    d n
    <d rows of n reals>

Dense label file::

    m n
    train T T E ...      (n tokens, T = training column, E = test column)
    <m rows of n tokens from {0, 1, ?}>

Sparse label file::

    m n default=<0|1|?>
    train T T E ...
    class_index instance_index token      (0-based, one per line)

Vocabulary file: one class name per line; line number is the class index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mlmg.errors import ConfigError, ParseError


class LabelState(enum.IntEnum):
    NEG = 0
    POS = 1
    MISSING = 2


_TOKEN_TO_STATE = {"0": LabelState.NEG, "1": LabelState.POS, "?": LabelState.MISSING}
_STATE_TO_TOKEN = {int(v): k for k, v in _TOKEN_TO_STATE.items()}


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Instance features, one column per instance (``d x n``)."""

    data: np.ndarray
    instance_ids: tuple = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ConfigError(f"feature matrix must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ConfigError("feature matrix needs at least one instance")
        if not np.all(np.isfinite(data)):
            raise ConfigError("feature matrix contains non-finite values")
        ids = self.instance_ids
        ids = tuple(range(data.shape[1])) if ids is None else tuple(ids)
        if len(ids) != data.shape[1]:
            raise ConfigError(
                f"{len(ids)} instance ids for {data.shape[1]} feature columns"
            )
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "instance_ids", ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class ObservedLabelMatrix:
    """Three-state ``m x n`` label matrix with its train/test split.

    Every column whose ``training_mask`` entry is false must be all
    ``MISSING``.
    """

    states: np.ndarray
    class_ids: tuple = None
    training_mask: np.ndarray = None

    def __post_init__(self):
        states = np.asarray(self.states)
        if states.ndim != 2:
            raise ConfigError(f"label matrix must be 2-D, got shape {states.shape}")
        if states.size and not np.isin(states, (0, 1, 2)).all():
            raise ConfigError("label states must be NEG, POS or MISSING")
        states = states.astype(np.int8)
        m, n = states.shape
        class_ids = self.class_ids
        class_ids = tuple(str(i) for i in range(m)) if class_ids is None else tuple(class_ids)
        if len(class_ids) != m:
            raise ConfigError(f"{len(class_ids)} class ids for {m} label rows")
        mask = self.training_mask
        mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise ConfigError(f"training mask has shape {mask.shape}, expected ({n},)")
        test_cols = states[:, ~mask]
        if test_cols.size and not (test_cols == LabelState.MISSING).all():
            raise ConfigError("test columns must be entirely MISSING")
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "class_ids", class_ids)
        object.__setattr__(self, "training_mask", _frozen(mask))

    @classmethod
    def from_binary(cls, matrix, class_ids=None, training_mask=None):
        """Build from a 0/1 matrix; test columns are masked automatically."""
        states = np.asarray(matrix).astype(np.int8).copy()
        if training_mask is not None:
            states[:, ~np.asarray(training_mask, dtype=bool)] = LabelState.MISSING
        return cls(states, class_ids, training_mask)

    @property
    def shape(self):
        return self.states.shape

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def positive(self) -> np.ndarray:
        return self.states == LabelState.POS

    def negative(self) -> np.ndarray:
        return self.states == LabelState.NEG

    def missing(self) -> np.ndarray:
        return self.states == LabelState.MISSING

    def provided(self) -> np.ndarray:
        return self.states != LabelState.MISSING

    def with_states(self, states, training_mask=None):
        mask = self.training_mask if training_mask is None else training_mask
        return ObservedLabelMatrix(states, self.class_ids, mask)

    def __eq__(self, other):
        if not isinstance(other, ObservedLabelMatrix):
            return NotImplemented
        return (
            self.class_ids == other.class_ids
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.training_mask, other.training_mask)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PenaltyMatrix:
    """Signed label-consistency weights: ``+r_pos`` / ``-r_neg`` / ``0``."""

    values: np.ndarray
    r_pos: float
    r_neg: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, dtype=float))

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Solution:
    """Completed score matrix plus solver diagnostics.

    ``h0``/``h1`` are only set by the sparse + low-rank solver. ``trace`` holds
    one dict per outer iteration.
    """

    z: np.ndarray
    h0: np.ndarray | None = None
    h1: np.ndarray | None = None
    trace: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        lo, hi = z.min(initial=0.0), z.max(initial=1.0)
        if lo < -1e-9 or hi > 1 + 1e-9:
            raise ConfigError(f"solution outside [0, 1]: range [{lo}, {hi}]")
        self.z = np.clip(z, 0.0, 1.0)


def build_penalty_matrix(y: ObservedLabelMatrix, r_pos=100.0, r_neg=1.0) -> PenaltyMatrix:
    """Map POS -> ``+r_pos``, NEG -> ``-r_neg`` and MISSING -> 0."""
    if not (r_neg > 0 and r_pos > r_neg):
        raise ConfigError(f"need r_pos > r_neg > 0, got r_pos={r_pos}, r_neg={r_neg}")
    values = np.zeros(y.shape)
    values[y.positive()] = r_pos
    values[y.negative()] = -r_neg
    return PenaltyMatrix(values, float(r_pos), float(r_neg))


def mask_test_columns(y: ObservedLabelMatrix, test_ids: Iterable[int]) -> ObservedLabelMatrix:
    """Hide every label of the listed instances and mark them as test columns."""
    ids = sorted(set(int(i) for i in test_ids))
    if any(i < 0 or i >= y.n for i in ids):
        raise ConfigError(f"unknown instance id in {ids} (n={y.n})")
    if not ids:
        return y
    states = y.states.copy()
    mask = y.training_mask.copy()
    states[:, ids] = LabelState.MISSING
    mask[ids] = False
    return y.with_states(states, mask)


# ---------------------------------------------------------------- file I/O


def _data_lines(path):
    """Yield (line_number, tokens) for non-blank lines."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if tokens:
                yield lineno, tokens


def _parse_dims(tokens, lineno, path, names):
    if len(tokens) < 2:
        raise ParseError(f"header must give {' '.join(names)}", path, lineno)
    try:
        dims = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise ParseError(f"non-integer dimensions {tokens[:2]}", path, lineno) from None
    if dims[0] < 0 or dims[1] < 0:
        raise ParseError(f"negative dimensions {dims}", path, lineno)
    return dims


def load_features(path) -> FeatureMatrix:
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError("empty feature file", path) from None
    if len(header) != 2:
        raise ParseError("header must be 'd n'", path, lineno)
    d, n = _parse_dims(header, lineno, path, ("d", "n"))
    rows = []
    for lineno, tokens in lines:
        if len(rows) == d:
            raise ParseError(f"more than {d} data rows", path, lineno)
        if len(tokens) != n:
            raise ParseError(f"expected {n} values, found {len(tokens)}", path, lineno)
        try:
            row = [float(t) for t in tokens]
        except ValueError as exc:
            raise ParseError(f"non-numeric token ({exc})", path, lineno) from None
        if not all(np.isfinite(row)):
            raise ParseError("non-finite value", path, lineno)
        rows.append(row)
    if len(rows) != d:
        raise ParseError(f"expected {d} data rows, found {len(rows)}", path)
    return FeatureMatrix(np.array(rows, dtype=float).reshape(d, n))


def save_features(path, x) -> None:
    data = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{data.shape[0]} {data.shape[1]}\n")
        # %.17g round-trips every double exactly
        np.savetxt(fh, data, fmt="%.17g")


def _parse_split(tokens, lineno, path, n):
    if not tokens or tokens[0] != "train":
        raise ParseError("second line must start with 'train'", path, lineno)
    flags = tokens[1:]
    if len(flags) != n:
        raise ParseError(f"expected {n} train/test flags, found {len(flags)}", path, lineno)
    bad = [f for f in flags if f not in ("T", "E")]
    if bad:
        raise ParseError(f"unknown split flag {bad[0]!r}", path, lineno)
    return np.array([f == "T" for f in flags], dtype=bool)


def _state(token, lineno, path):
    try:
        return _TOKEN_TO_STATE[token]
    except KeyError:
        raise ParseError(f"unknown label token {token!r}", path, lineno) from None


def load_labels(path, class_ids=None) -> ObservedLabelMatrix:
    """Read a dense or sparse label file (detected from the header)."""
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError("empty label file", path) from None
    m, n = _parse_dims(header, lineno, path, ("m", "n"))
    sparse = len(header) == 3
    if len(header) not in (2, 3):
        raise ParseError("header must be 'm n' or 'm n default=<tok>'", path, lineno)
    try:
        lineno, split = next(lines)
    except StopIteration:
        raise ParseError("missing train/test line", path) from None
    mask = _parse_split(split, lineno, path, n)

    if sparse:
        key, _, tok = header[2].partition("=")
        if key != "default":
            raise ParseError(f"expected default=<token>, found {header[2]!r}", path, 1)
        states = np.full((m, n), _state(tok, 1, path), dtype=np.int8)
        for lineno, tokens in lines:
            if len(tokens) != 3:
                raise ParseError("sparse entry must be 'class instance token'", path, lineno)
            try:
                i, j = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise ParseError("non-integer index", path, lineno) from None
            if not (0 <= i < m and 0 <= j < n):
                raise ParseError(f"index ({i}, {j}) outside {m}x{n}", path, lineno)
            states[i, j] = _state(tokens[2], lineno, path)
    else:
        rows = []
        for lineno, tokens in lines:
            if len(rows) == m:
                raise ParseError(f"more than {m} label rows", path, lineno)
            if len(tokens) != n:
                raise ParseError(f"expected {n} tokens, found {len(tokens)}", path, lineno)
            rows.append([_state(t, lineno, path) for t in tokens])
        if len(rows) != m:
            raise ParseError(f"expected {m} label rows, found {len(rows)}", path)
        states = np.array(rows, dtype=np.int8).reshape(m, n)

    try:
        return ObservedLabelMatrix(states, class_ids, mask)
    except ConfigError as exc:
        raise ParseError(str(exc), path) from None


def save_labels(path, y: ObservedLabelMatrix, sparse=False, default="0") -> None:
    m, n = y.shape
    split = " ".join("T" if t else "E" for t in y.training_mask)
    with open(path, "w") as fh:
        if sparse:
            base = _TOKEN_TO_STATE[default]
            fh.write(f"{m} {n} default={default}\n")
            fh.write(f"train {split}\n" if n else "train\n")
            for i, j in zip(*np.nonzero(y.states != base)):
                fh.write(f"{i} {j} {_STATE_TO_TOKEN[int(y.states[i, j])]}\n")
        else:
            fh.write(f"{m} {n}\n")
            fh.write(f"train {split}\n" if n else "train\n")
            for row in y.states:
                fh.write(" ".join(_STATE_TO_TOKEN[int(s)] for s in row) + "\n")


def load_vocab(path) -> list[str]:
    with open(path) as fh:
        names = [line.strip() for line in fh]
    while names and not names[-1]:
        names.pop()
    if any(not name for name in names):
        raise ParseError("blank class name", path)
    if len(set(names)) != len(names):
        raise ParseError("duplicate class name", path)
    return names


def save_vocab(path, names: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{name}\n" for name in names))
