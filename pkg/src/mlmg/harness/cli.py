"""Command-line entry point (``mlmg``).

Exit codes: 0 success, 1 audit failure, 2 configuration or input error,
3 solver infeasibility.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from mlmg.errors import DecompositionInfeasible, MLMGError, NumericalError
from mlmg.harness import experiment as ex
from mlmg.harness.oracle_check import audit, format_rows
from mlmg.harness.simulate import MODES, simulate_missing
from mlmg.harness.synth import generate_synthetic, save_dataset
from mlmg.labels import FeatureMatrix, load_features, save_features, save_labels
from mlmg.metrics import MetricReport
from mlmg.solver_co import write_trace_csv

log = logging.getLogger("mlmg")

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3


def _add_data_args(p):
    p.add_argument("--config", help="key = value experiment config file")
    p.add_argument("--features")
    p.add_argument("--labels", help="observed label file (test columns marked E)")
    p.add_argument("--truth", help="complete label file used for evaluation")
    p.add_argument("--hierarchy")
    p.add_argument("--vocab")


def _add_model_args(p):
    p.add_argument("--variant", help="co|sl with optional +filling / +constraint")
    p.add_argument("--tau", type=float)
    p.add_argument("--mode", dest="missing_mode", choices=MODES)
    p.add_argument("--seed", dest="seeds", help="seed or comma separated seeds")
    p.add_argument("--eval-on", dest="eval_on", choices=ex.EVAL_ON)
    for name in ("beta", "gamma", "alpha", "gamma0", "gamma1"):
        p.add_argument(f"--{name}", type=float)


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if getattr(args, "config", None) else ex.ExperimentConfig()
    over = {}
    for name in ("features", "labels", "truth", "hierarchy", "vocab", "tau", "missing_mode",
                 "eval_on", "beta", "gamma", "alpha", "gamma0", "gamma1"):
        value = getattr(args, name, None)
        if value is not None:
            over[name] = value
    if getattr(args, "variant", None):
        over["variant"] = ex.Variant.parse(args.variant)
    if getattr(args, "seeds", None):
        over["seeds"] = ex._int_list(args.seeds)
    cfg = dataclasses.replace(cfg, **over)
    return cfg


def _write_report(report: MetricReport, out, fmt):
    if out:
        ex.emit_results(report, out, fmt)
    else:
        sys.stdout.write(report.to_csv() if fmt == "csv" else report.to_jsonl())


# --------------------------------------------------------------- subcommands


def cmd_synth(args):
    ds = generate_synthetic(n=args.n, m=args.m, d=args.d, separation=args.separation,
                            test_frac=args.test_frac, seed=args.seed)
    paths = save_dataset(ds, args.out)
    for role, path in paths.items():
        print(f"{role} = {path}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config(args)
    data = ex.load_dataset(cfg)
    sim = simulate_missing(data.labels, data.hierarchy, cfg.tau, cfg.missing_mode,
                           cfg.seeds[0], truth=data.truth)
    save_labels(args.out, sim.y_observed, sparse=True, default="0")
    if args.hidden:
        with open(args.hidden, "w") as fh:
            for i, j in sim.hidden_entries:
                fh.write(f"{i} {j}\n")
    print(f"hidden = {len(sim.hidden_entries)}")
    return EXIT_OK


def cmd_solve(args):
    cfg = _config(args)
    data = ex.load_dataset(cfg)
    l_x = ex.instance_laplacian(data.features, cfg)
    sol = ex.solve_variant(data.labels, data.hierarchy, l_x, cfg)
    save_features(args.out, FeatureMatrix(sol.z))
    if args.trace:
        write_trace_csv(sol, args.trace)
    print(f"converged = {sol.converged}")
    print(f"iterations = {sol.iterations}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _config(args)
    data = ex.load_dataset(cfg)
    z = load_features(args.scores).data
    if z.shape != data.labels.shape:
        raise ex.ConfigError(f"scores are {z.shape}, labels {data.labels.shape}")
    cols = ex.eval_columns(data.labels, cfg.eval_on)
    row = {"seed": cfg.seeds[0], "status": "ok"}
    row.update(ex.evaluate(z, data.truth, data.labels, data.hierarchy, cfg, cols))
    _write_report(MetricReport.aggregate([row]), args.out, args.format)
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    report = ex.run_experiment(cfg)
    _write_report(report, args.out, args.format)
    if not any(r.get("status") == "ok" for r in report.per_seed):
        log.error("every seed was infeasible")
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_grid(args):
    cfg = _config(args)
    result = ex.grid_search(cfg)
    names = list(result.best)
    lines = [" ".join(names + ["validation_ap"])]
    for row in result.table:
        lines.append(" ".join(repr(float(row[k])) for k in names + ["validation_ap"]))
    table = "\n".join(lines) + "\n"
    if args.table:
        Path(args.table).write_text(table)
    else:
        sys.stderr.write(table)
    for k, v in result.best.items():
        print(f"best.{k} = {v!r}")
    _write_report(result.report, args.out, args.format)
    return EXIT_OK


def cmd_oracle_check(args):
    rows = audit(args.count, args.seed)
    text = format_rows(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    worst = max(r.relative_gap for r in rows)
    cmin = min(r.constraint_min for r in rows)
    ok = worst <= args.tol and cmin >= -1e-6
    print(f"worst_relative_gap = {worst:.3e}")
    print(f"min_constraint = {cmin:.3e}")
    print(f"status = {'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_AUDIT


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlmg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--m", type=int, default=40)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="hide training labels")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True, help="observed label file to write")
    p.add_argument("--hidden", help="also write hidden (class, instance) pairs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="complete the label matrix")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True, help="score matrix file to write")
    p.add_argument("--trace", help="per-iteration trace CSV")
    p.set_defaults(func=cmd_solve)

    for name, func, helptext in (("evaluate", cmd_evaluate, "score a completed matrix"),
                                 ("run", cmd_run, "full simulate-solve-evaluate pipeline"),
                                 ("grid", cmd_grid, "grid search then full run")):
        p = sub.add_parser(name, help=helptext)
        _add_data_args(p)
        _add_model_args(p)
        p.add_argument("--out", help="result file (stdout if omitted)")
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
        if name == "evaluate":
            p.add_argument("--scores", required=True, help="score matrix file")
        if name == "grid":
            p.add_argument("--table", help="write the full grid table here")
        p.set_defaults(func=func)

    p = sub.add_parser("oracle-check", help="ADMM vs oracle on small random problems")
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DecompositionInfeasible as exc:
        log.error("solver infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_INFEASIBLE
    except (MLMGError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
