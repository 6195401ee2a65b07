"""Ranking and hierarchy-violation metrics.

All rankings sort scores in decreasing order and break ties in favour of the
lower class (or instance) index.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from mlmg.errors import ConfigError, UndefinedMetric
from mlmg.hierarchy import Hierarchy
from mlmg.labels import LabelState, ObservedLabelMatrix, Solution

DEFAULT_KS = (5, 10, 20, 50, 100, 150)
SUBSETS = ("provided", "missing", "test")


def _scores(z):
    return np.asarray(z.z if isinstance(z, Solution) else z, dtype=float)


def _truth(y, where):
    """Boolean positives of ``y`` on the entries selected by ``where``."""
    if isinstance(y, ObservedLabelMatrix):
        states = y.states
        if np.any(states[where] == LabelState.MISSING):
            raise ConfigError("ground truth has MISSING entries in the evaluated subset")
        return states == LabelState.POS
    return np.asarray(y).astype(bool)


def _index(sel, size):
    if sel is None:
        return np.arange(size)
    sel = np.asarray(sel)
    if sel.dtype == bool:
        return np.flatnonzero(sel)
    return sel.astype(int)


def _ap_of_ranking(relevant_sorted) -> float:
    hits = np.cumsum(relevant_sorted)
    ranks = np.arange(1, relevant_sorted.size + 1)
    return float(np.sum((hits / ranks)[relevant_sorted]) / hits[-1])


def average_precision(z, y_complete, columns=None) -> float:
    """Mean over instances of the AP of each column's class ranking.

    Columns without positives are skipped.
    """
    scores = _scores(z)
    cols = _index(columns, scores.shape[1])
    if cols.size == 0:
        raise UndefinedMetric("no columns to evaluate")
    truth = _truth(y_complete, (slice(None), cols))
    aps = []
    for j in cols:
        rel = truth[:, j]
        if not rel.any():
            continue
        order = np.argsort(-scores[:, j], kind="stable")
        aps.append(_ap_of_ranking(rel[order]))
    if not aps:
        raise UndefinedMetric("every evaluated column is free of positives")
    return float(np.mean(aps))


def mean_average_precision(z, y_complete, rows=None, columns=None) -> float:
    """Mean over classes of the AP of each row's instance ranking.

    ``columns`` restricts the instances being ranked (e.g. to test columns).
    """
    scores = _scores(z)
    cols = _index(columns, scores.shape[1])
    rws = _index(rows, scores.shape[0])
    if cols.size == 0 or rws.size == 0:
        raise UndefinedMetric("no entries to evaluate")
    truth = _truth(y_complete, np.ix_(rws, cols))[:, cols]
    sub = scores[:, cols]
    aps = []
    for i in rws:
        rel = truth[i]
        if not rel.any():
            continue
        order = np.argsort(-sub[i], kind="stable")
        aps.append(_ap_of_ranking(rel[order]))
    if not aps:
        raise UndefinedMetric("every evaluated class is free of positives")
    return float(np.mean(aps))


def binarize_topk(z, k) -> np.ndarray:
    """Set the ``k`` highest scores of every column to True."""
    scores = _scores(z)
    m = scores.shape[0]
    if not (0 <= k <= m):
        raise ConfigError(f"k={k} must lie in [0, {m}]")
    order = np.argsort(-scores, axis=0, kind="stable")[:k]
    out = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(out, order, True, axis=0)
    return out


def hierarchical_loss(z, y_complete, h: Hierarchy, k, columns=None) -> float:
    """Fraction of (class, instance) slots where the top-``k`` prediction
    asserts a child while rejecting a truly-negative parent.

    Each violating edge counts once; the count is divided by ``n * m`` where
    ``n`` is the number of evaluated columns.
    """
    scores = _scores(z)
    m = scores.shape[0]
    if k > m:
        raise ConfigError(f"k={k} exceeds the number of classes {m}")
    cols = _index(columns, scores.shape[1])
    if cols.size == 0:
        raise UndefinedMetric("no columns to evaluate")
    zk = binarize_topk(scores[:, cols], k)
    if not h.edges:
        return 0.0
    truth = _truth(y_complete, (slice(None), cols))[:, cols]
    e = np.array(h.edges)
    parent, child = e[:, 0], e[:, 1]
    bad = ~truth[parent] & ~zk[parent] & zk[child]
    return float(np.count_nonzero(bad)) / (cols.size * m)


def average_hierarchical_loss(z, y_complete, h, ks=DEFAULT_KS, columns=None) -> float:
    ks = list(ks)
    if not ks:
        raise ConfigError("need at least one k")
    return float(np.mean([hierarchical_loss(z, y_complete, h, k, columns) for k in ks]))


def subset_mask(y_observed: ObservedLabelMatrix, subset) -> np.ndarray:
    train = np.broadcast_to(y_observed.training_mask, y_observed.shape)
    if subset == "provided":
        return train & y_observed.provided()
    if subset == "missing":
        return train & y_observed.missing()
    if subset == "test":
        return ~train
    raise ConfigError(f"unknown subset {subset!r}; expected one of {SUBSETS}")


def topk_f1(z, y_complete, y_observed: ObservedLabelMatrix, subset, k=10) -> float:
    """F1 of top-``k`` binarized predictions on one entry subset.

    ``provided``: training entries observed in ``y_observed``; ``missing``:
    training entries hidden in it; ``test``: all entries of test columns.
    F1 is 0 when precision and recall are both 0.
    """
    pred = binarize_topk(z, k)
    mask = subset_mask(y_observed, subset)
    if not mask.any():
        raise UndefinedMetric(f"the {subset!r} subset is empty")
    truth = _truth(y_complete, mask)
    p, t = pred[mask], truth[mask]
    tp = np.count_nonzero(p & t)
    npred, ntrue = np.count_nonzero(p), np.count_nonzero(t)
    precision = tp / npred if npred else 0.0
    recall = tp / ntrue if ntrue else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# ------------------------------------------------------------------ report

METRIC_NAMES = ("ap", "map", "ahl", "f1_provided", "f1_missing", "f1_test")


@dataclass
class MetricReport:
    """Per-seed metric rows plus mean / std across the successful seeds.

    ``per_seed`` rows are dicts with a ``seed`` key, a ``status`` key
    (``ok`` or an error tag) and one key per metric.
    """

    per_seed: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    @classmethod
    def aggregate(cls, rows):
        rows = list(rows)
        ok = [r for r in rows if r.get("status", "ok") == "ok"]
        mean, std = {}, {}
        for name in METRIC_NAMES:
            vals = [r[name] for r in ok if r.get(name) is not None and not math.isnan(r[name])]
            if vals:
                mean[name] = float(np.mean(vals))
                std[name] = float(np.std(vals))
            else:
                mean[name] = std[name] = float("nan")
        return cls(rows, mean, std)

    @property
    def ap(self):
        return self.mean.get("ap", float("nan"))

    @property
    def map(self):
        return self.mean.get("map", float("nan"))

    @property
    def ahl(self):
        return self.mean.get("ahl", float("nan"))

    @property
    def f1(self):
        return {s: self.mean.get(f"f1_{s}", float("nan")) for s in SUBSETS}

    def rows(self):
        """Flat ``(row_type, seed, metric, value)`` tuples in a fixed order."""
        out = []
        for r in self.per_seed:
            seed = r["seed"]
            out.append(("seed", seed, "status", r.get("status", "ok")))
            for name in METRIC_NAMES:
                if name in r:
                    out.append(("seed", seed, name, r[name]))
        for kind, table in (("mean", self.mean), ("std", self.std)):
            for name in METRIC_NAMES:
                if name in table:
                    out.append((kind, "", name, table[name]))
        return out

    def to_text(self) -> str:
        """``key = value`` lines, e.g. ``seed.3.ap = 0.81``."""
        lines = []
        for kind, seed, name, value in self.rows():
            key = f"seed.{seed}.{name}" if kind == "seed" else f"{kind}.{name}"
            lines.append(f"{key} = {_fmt(value)}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row_type", "seed", "metric", "value"])
        for kind, seed, name, value in self.rows():
            w.writerow([kind, seed, name, _fmt(value)])
        return buf.getvalue()

    def to_jsonl(self) -> str:
        out = []
        for kind, seed, name, value in self.rows():
            rec = {"row_type": kind, "seed": seed if seed != "" else None,
                   "metric": name, "value": value}
            if isinstance(value, float) and not math.isfinite(value):
                rec["value"] = repr(value)
            out.append(json.dumps(rec, sort_keys=False))
        return "\n".join(out) + ("\n" if out else "")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)
