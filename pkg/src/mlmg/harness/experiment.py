"""Experiment driver: variants, config files, seeded runs and grid search.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys::

    paths.features / paths.labels / paths.truth / paths.hierarchy / paths.vocab
    experiment.variant        co | sl, optionally +filling and/or +constraint
    experiment.tau            missing fraction in [0, 1)
    experiment.missing_mode   leaf-singleton | all-classes | semi-supervised
    experiment.seeds          comma separated integers
    experiment.eval_on        auto | test | train | all
    experiment.ks             comma separated top-k values for AHL
    experiment.f1_k           top-k used by the F1 metrics
    experiment.repair         true | false; lift parents after constrained solves
    model.<name>              beta, gamma, alpha, gamma0, gamma1, r_pos, r_neg,
                              k_x, h, k_c
    solver.co.<field>         any CoSolverConfig field
    solver.sl.<field>         any SlSolverConfig field
    grid.<name>               comma separated values for grid search

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mlmg.errors import ConfigError, DecompositionInfeasible, UndefinedMetric
from mlmg.graphs import class_cooccurrence, instance_similarity, normalized_laplacian
from mlmg.harness.simulate import MODES, hide_instances, simulate_missing
from mlmg.hierarchy import (
    Hierarchy,
    build_constraint_matrix,
    fill_ancestors,
    load_hierarchy,
)
from mlmg.labels import (
    FeatureMatrix,
    ObservedLabelMatrix,
    Solution,
    build_penalty_matrix,
    load_features,
    load_labels,
    load_vocab,
)
from mlmg.metrics import (
    DEFAULT_KS,
    MetricReport,
    average_hierarchical_loss,
    average_precision,
    mean_average_precision,
    topk_f1,
)
from mlmg.solver_co import CoProblem, CoSolverConfig
from mlmg.solver_co import solve as solve_co
from mlmg.solver_sl import SlProblem, SlSolverConfig, solve_sl

log = logging.getLogger(__name__)

EVAL_ON = ("auto", "test", "train", "all")
CO_GRID = {"beta": (0.1, 1, 5, 10, 50), "gamma": (0, 0.01, 0.1, 1, 10)}
SL_GRID = {
    "alpha": (0.1, 0.5, 0.9, 1),
    "beta": (0.1, 1, 5, 10, 50),
    "gamma0": (0.0001, 0.001, 0.01, 1, 10),
    "gamma1": (0.1, 1, 10, 100, 1000),
}


# ------------------------------------------------------------------ variants


@dataclass(frozen=True)
class Variant:
    solver: str = "co"
    filling: bool = False
    constraint: bool = False

    @classmethod
    def parse(cls, text: str) -> "Variant":
        """Parse names like ``co``, ``sl+constraint`` or ``co+filling+constraint``.

        Modifier order does not matter.
        """
        parts = [p.strip().lower() for p in str(text).split("+")]
        solver, mods = parts[0], parts[1:]
        if solver not in ("co", "sl"):
            raise ConfigError(f"unknown solver {solver!r} in variant {text!r}")
        if len(set(mods)) != len(mods) or not set(mods) <= {"filling", "constraint"}:
            raise ConfigError(f"bad variant modifiers in {text!r}")
        return cls(solver, "filling" in mods, "constraint" in mods)

    @property
    def name(self) -> str:
        return "+".join([self.solver]
                        + (["filling"] if self.filling else [])
                        + (["constraint"] if self.constraint else []))

    def __str__(self):
        return self.name


ALL_VARIANTS = tuple(
    Variant(s, f, c) for s in ("co", "sl") for f in (False, True) for c in (False, True)
)


# -------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    features: str | None = None
    labels: str | None = None
    truth: str | None = None
    hierarchy: str | None = None
    vocab: str | None = None
    variant: Variant = field(default_factory=Variant)
    tau: float = 0.5
    missing_mode: str = "leaf-singleton"
    seeds: tuple = (0,)
    eval_on: str = "auto"
    ks: tuple = DEFAULT_KS
    f1_k: int = 10
    # model hyperparameters
    beta: float = 1.0
    gamma: float = 0.1
    alpha: float = 0.9
    gamma0: float = 0.01
    gamma1: float = 10.0
    r_pos: float = 100.0
    r_neg: float = 1.0
    k_x: int = 20
    h: int = 7
    k_c: int = 10
    # lift parents to their children's scores after constrained solves
    repair: bool = True
    co: CoSolverConfig = field(default_factory=CoSolverConfig)
    sl: SlSolverConfig = field(default_factory=SlSolverConfig)
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = Variant.parse(self.variant)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.ks = tuple(int(k) for k in self.ks)
        self.validate()

    def validate(self):
        if not (0.0 <= self.tau < 1.0):
            raise ConfigError(f"tau must lie in [0, 1), got {self.tau}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.missing_mode not in MODES:
            raise ConfigError(f"missing_mode must be one of {MODES}, got {self.missing_mode!r}")
        if self.eval_on not in EVAL_ON:
            raise ConfigError(f"eval_on must be one of {EVAL_ON}, got {self.eval_on!r}")
        if not self.ks:
            raise ConfigError("need at least one k for the hierarchical loss")

    def with_params(self, **params) -> "ExperimentConfig":
        return dataclasses.replace(self, **params)


_MODEL_KEYS = {
    "beta": float, "gamma": float, "alpha": float, "gamma0": float, "gamma1": float,
    "r_pos": float, "r_neg": float, "k_x": int, "h": int, "k_c": int,
}
_PATH_KEYS = ("features", "labels", "truth", "hierarchy", "vocab")


def _int_list(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _float_list(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _coerce_field(cls, name, text):
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    if name not in kinds:
        raise ConfigError(f"unknown {cls.__name__} field {name!r}")
    kind = str(kinds[name])
    if "int" in kind and text.lower() in ("none", ""):
        return None
    if kind.startswith("bool"):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{name} expects a boolean, got {text!r}")
        return text.lower() in ("true", "1", "yes")
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    return text


def parse_config_text(text: str, base_dir=".") -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from ``key = value`` lines."""
    base = Path(base_dir)
    kw, co, sl, grid = {}, {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        try:
            section, _, name = key.partition(".")
            if section == "paths" and name in _PATH_KEYS:
                p = Path(value)
                kw[name] = str(p if p.is_absolute() else base / p)
            elif key == "experiment.variant":
                kw["variant"] = Variant.parse(value)
            elif key == "experiment.tau":
                kw["tau"] = float(value)
            elif key == "experiment.missing_mode":
                kw["missing_mode"] = value
            elif key == "experiment.seeds":
                kw["seeds"] = _int_list(value)
            elif key == "experiment.eval_on":
                kw["eval_on"] = value
            elif key == "experiment.ks":
                kw["ks"] = _int_list(value)
            elif key == "experiment.f1_k":
                kw["f1_k"] = int(value)
            elif key == "experiment.repair":
                kw["repair"] = _coerce_field(ExperimentConfig, "repair", value)
            elif section == "model" and name in _MODEL_KEYS:
                kw[name] = _MODEL_KEYS[name](value)
            elif key.startswith("solver.co."):
                fname = key[len("solver.co."):]
                co[fname] = _coerce_field(CoSolverConfig, fname, value)
            elif key.startswith("solver.sl."):
                fname = key[len("solver.sl."):]
                sl[fname] = _coerce_field(SlSolverConfig, fname, value)
            elif section == "grid" and name in _MODEL_KEYS:
                grid[name] = _float_list(value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise ConfigError(f"line {lineno}: {exc}") from None
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    return ExperimentConfig(co=CoSolverConfig(**co), sl=SlSolverConfig(**sl), grid=grid, **kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, path.parent)


# ------------------------------------------------------------------- dataset


@dataclass(frozen=True, eq=False)
class ExperimentData:
    features: FeatureMatrix
    labels: ObservedLabelMatrix
    truth: ObservedLabelMatrix
    hierarchy: Hierarchy


def load_dataset(cfg: ExperimentConfig) -> ExperimentData:
    if not cfg.features or not cfg.labels:
        raise ConfigError("paths.features and paths.labels are required")
    vocab = load_vocab(cfg.vocab) if cfg.vocab else None
    x = load_features(cfg.features)
    y = load_labels(cfg.labels, vocab)
    truth = load_labels(cfg.truth, vocab) if cfg.truth else y
    if truth.shape != y.shape:
        raise ConfigError(f"truth is {truth.shape}, labels are {y.shape}")
    if x.n != y.n:
        raise ConfigError(f"{x.n} feature columns but {y.n} label columns")
    if cfg.hierarchy:
        h = load_hierarchy(cfg.hierarchy, y.class_ids)
    else:
        h = Hierarchy(y.m)
    # the test split always comes from the observed label file
    truth = ObservedLabelMatrix(truth.states, y.class_ids)
    return ExperimentData(x, y, truth, h)


def as_experiment_data(ds) -> ExperimentData:
    """Adapt a synthetic :class:`~mlmg.harness.synth.Dataset`."""
    if isinstance(ds, ExperimentData):
        return ds
    return ExperimentData(ds.features, ds.labels, ds.truth, ds.hierarchy)


# ---------------------------------------------------------------- pipeline


def eval_columns(y: ObservedLabelMatrix, eval_on="auto") -> np.ndarray:
    train = y.training_mask
    if eval_on == "auto":
        eval_on = "test" if not train.all() else "all"
    if eval_on == "test":
        cols = np.flatnonzero(~train)
    elif eval_on == "train":
        cols = np.flatnonzero(train)
    else:
        cols = np.arange(y.n)
    if cols.size == 0:
        raise ConfigError(f"no columns to evaluate for eval_on={eval_on!r}")
    return cols


def usable_ks(ks, m):
    kept = tuple(k for k in ks if k <= m)
    if len(kept) < len(ks):
        log.warning("dropping AHL ks larger than m=%d: %s", m, [k for k in ks if k > m])
    if not kept:
        raise ConfigError(f"every k in {tuple(ks)} exceeds m={m}")
    return kept


def instance_laplacian(x: FeatureMatrix, cfg: ExperimentConfig):
    return normalized_laplacian(instance_similarity(x, cfg.k_x, cfg.h))


def solve_variant(y_obs: ObservedLabelMatrix, h: Hierarchy, l_x, cfg: ExperimentConfig,
                  z_init=None, init_seed=None) -> Solution:
    """Fill (optionally), build the penalty and class graph, and solve."""
    v = cfg.variant
    if v.filling:
        y_obs = fill_ancestors(y_obs, h)
    penalty = build_penalty_matrix(y_obs, cfg.r_pos, cfg.r_neg)
    phi = build_constraint_matrix(h) if v.constraint else None
    if v.solver == "co":
        l_c = None
        if cfg.gamma:
            l_c = normalized_laplacian(class_cooccurrence(y_obs, min(cfg.k_c, y_obs.m - 1)))
        problem = CoProblem(penalty, l_x, l_c, phi, cfg.beta, cfg.gamma)
        conf = dataclasses.replace(cfg.co, repair=cfg.repair)
        if z_init is not None or init_seed is not None:
            conf = dataclasses.replace(conf, z_init=z_init or conf.z_init,
                                       seed=conf.seed if init_seed is None else init_seed)
        return solve_co(problem, conf)
    problem = SlProblem(penalty, l_x, phi, cfg.alpha, cfg.beta, cfg.gamma0, cfg.gamma1)
    conf = dataclasses.replace(cfg.sl, repair=cfg.repair)
    if z_init is not None or init_seed is not None:
        conf = dataclasses.replace(conf, z_init=z_init or conf.z_init,
                                   seed=conf.seed if init_seed is None else init_seed)
    return solve_sl(problem, conf)


def _safe(fn, *args, **kw):
    try:
        return float(fn(*args, **kw))
    except UndefinedMetric:
        return float("nan")


def evaluate(z, sim_complete, y_obs, h, cfg: ExperimentConfig, columns) -> dict:
    m = y_obs.m
    f1k = min(cfg.f1_k, m)
    row = {
        "ap": _safe(average_precision, z, sim_complete, columns),
        "map": _safe(mean_average_precision, z, sim_complete, columns=columns),
        "ahl": _safe(average_hierarchical_loss, z, sim_complete, h,
                     usable_ks(cfg.ks, m), columns),
    }
    for subset in ("provided", "missing", "test"):
        row[f"f1_{subset}"] = _safe(topk_f1, z, sim_complete, y_obs, subset, f1k)
    return row


def run_seed(data: ExperimentData, cfg: ExperimentConfig, seed: int, l_x=None):
    """One simulate-solve-evaluate pass. Returns ``(row, solution)``."""
    l_x = instance_laplacian(data.features, cfg) if l_x is None else l_x
    sim = simulate_missing(data.labels, data.hierarchy, cfg.tau, cfg.missing_mode, seed,
                           truth=data.truth)
    try:
        sol = solve_variant(sim.y_observed, data.hierarchy, l_x, cfg)
    except DecompositionInfeasible as exc:
        log.warning("seed %d: solver infeasible (%s); excluded from aggregates", seed, exc)
        return {"seed": seed, "status": "infeasible"}, None
    cols = eval_columns(sim.y_observed, cfg.eval_on)
    row = {"seed": seed, "status": "ok"}
    row.update(evaluate(sol, sim.y_complete, sim.y_observed, data.hierarchy, cfg, cols))
    return row, sol


def run_experiment(cfg: ExperimentConfig, data=None) -> MetricReport:
    """Run every seed of ``cfg`` and aggregate mean / std over successful seeds."""
    data = as_experiment_data(data) if data is not None else load_dataset(cfg)
    l_x = instance_laplacian(data.features, cfg)
    rows = [run_seed(data, cfg, seed, l_x)[0] for seed in cfg.seeds]
    bad = [r["seed"] for r in rows if r["status"] != "ok"]
    if bad:
        log.warning("%d of %d seeds failed and are excluded: %s", len(bad), len(rows), bad)
    return MetricReport.aggregate(rows)


# ---------------------------------------------------------------- grid search


@dataclass
class GridResult:
    best: dict
    table: list
    config: ExperimentConfig
    report: MetricReport


def default_grid(solver: str) -> dict:
    return dict(CO_GRID if solver == "co" else SL_GRID)


def grid_points(grids: dict):
    names = list(grids)
    for combo in itertools.product(*(grids[n] for n in names)):
        yield dict(zip(names, combo))


def validation_score(data: ExperimentData, cfg: ExperimentConfig, seed: int, l_x) -> float:
    """AP on a held-out sixth of the training instances."""
    sim = simulate_missing(data.labels, data.hierarchy, cfg.tau, cfg.missing_mode, seed,
                           truth=data.truth)
    n_tr = int(sim.y_observed.training_mask.sum())
    count = max(1, int(round(n_tr / 6)))
    y_val, picked = hide_instances(sim.y_observed, count, seed)
    try:
        sol = solve_variant(y_val, data.hierarchy, l_x, cfg)
    except DecompositionInfeasible:
        return float("-inf")
    try:
        return average_precision(sol, sim.y_complete, picked)
    except UndefinedMetric:
        return float("-inf")


def grid_search(cfg: ExperimentConfig, grids=None, data=None) -> GridResult:
    """Pick hyperparameters by validation AP on the first seed, then rerun.

    Ties go to the earliest grid point.
    """
    grids = grids or cfg.grid or default_grid(cfg.variant.solver)
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ConfigError("grid must be nonempty")
    data = as_experiment_data(data) if data is not None else load_dataset(cfg)
    l_x = instance_laplacian(data.features, cfg)
    seed = cfg.seeds[0]
    table, best, best_score = [], None, -np.inf
    for params in grid_points(grids):
        score = validation_score(data, cfg.with_params(**params), seed, l_x)
        table.append({**params, "validation_ap": score})
        if score > best_score:
            best, best_score = params, score
    if best is None:
        raise ConfigError("every grid point failed on the validation split")
    tuned = cfg.with_params(**best)
    return GridResult(best, table, tuned, run_experiment(tuned, data))


# -------------------------------------------------------------------- output


def emit_results(report: MetricReport, path, format="csv") -> None:
    if format == "csv":
        text = report.to_csv()
    elif format in ("jsonl", "json-lines"):
        text = report.to_jsonl()
    else:
        raise ConfigError(f"unknown result format {format!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)
