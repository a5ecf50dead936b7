"""Command-line front end.

Subcommands: ``run`` (execute a config), ``bounds`` (print the certified
parameter tables for a config's cells), ``verify-compressor`` (empirical
bound certification), ``replicate-section5`` (the pinned built-in benchmark
scenario), and ``benchmark`` (numba kernels against the numpy fallback).

Exit codes: 0 success, 1 run or verification failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .algorithms import practical_params, run as run_algo
from .compressors import CompressorError, make_compressor, spec_from_config, verify_assumption
from .costs import CostError, generate_suite
from .graph import GraphError, generate_network
from .harness import (
    ConfigError,
    ExperimentConfig,
    reference_scenario_config,
    run_experiment,
)

_CONFIG_ERRORS = (ConfigError, CompressorError, CostError, GraphError,
                  analysis.AnalysisError, json.JSONDecodeError, OSError,
                  ValueError)


def _load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _apply_seed_override(doc: dict, seed: int | None) -> dict:
    env = os.environ.get("CGT_SEED")
    root = seed if seed is not None else (int(env) if env else None)
    if root is not None:
        doc = dict(doc)
        doc["seeds"] = {"graph": root + 1, "cost": root + 2, "algo": root + 3}
    return doc


def _emit_gnuplot(outdir: Path, scenario: str, labels: list) -> None:
    lines = [
        "set logscale y", "set xlabel 'iteration k'",
        "set ylabel 'consensus error + optimality gap'",
        "set datafile separator ','", "set key outside",
    ]
    plots = [f"'{scenario}__{lab}.csv' using 1:($2+$3) with lines "
             f"title '{lab}'" for lab in labels]
    lines.append("plot " + ", \\\n     ".join(plots))
    (outdir / f"{scenario}__plot.gnuplot").write_text("\n".join(lines) + "\n",
                                                      encoding="utf-8")


def _cmd_run(args) -> int:
    doc = _apply_seed_override(_load_config(args.config), args.seed)
    if args.out:
        doc["output_dir"] = args.out
    if args.force:
        for cell in doc.get("cells", [doc]):
            cell["force_params"] = True
    cfg = ExperimentConfig.from_dict(doc)
    result = run_experiment(cfg)
    failed = [r for r in result.rows if r.status != "ok"]
    for row in result.rows:
        reach = ("unreached" if row.bits_to_threshold is None
                 else f"k={row.iters_to_threshold} bits={row.bits_to_threshold}")
        pct = ("" if row.percent_of_dgt is None
               else f" ({row.percent_of_dgt:.2f}% of baseline)")
        print(f"{row.label:32s} {row.status:10s} {reach}{pct}")
    print(f"report: {result.report_path}")
    if args.gnuplot:
        _emit_gnuplot(Path(cfg.output_dir), cfg.scenario,
                      [r.label for r in result.rows])
    return 1 if failed else 0


def _cmd_bounds(args) -> int:
    doc = _apply_seed_override(_load_config(args.config), args.seed)
    cfg = ExperimentConfig.from_dict(doc)
    net = generate_network(int(cfg.network["n"]),
                           float(cfg.network["edge_density"]),
                           int(cfg.seeds["graph"]),
                           topology=cfg.network.get("topology", "random"))
    cost_kwargs = {k: v for k, v in cfg.cost.items() if k not in ("kind", "d")}
    suite = generate_suite(cfg.cost["kind"], net.n, int(cfg.cost["d"]),
                           int(cfg.seeds["cost"]), **cost_kwargs)
    tables = {"sigma": net.sigma, "L_f": suite.L_f, "nu_pl": suite.nu_pl,
              "cells": {}}
    for cell in cfg.cells:
        if cell.algo == "dgt":
            continue
        comp = spec_from_config(cell.compressor, suite.d)
        label = cell.resolved_label()
        if cell.algo == "alg1":
            px = cell.params.get("phi_x", 0.5 / comp.r)
            py = cell.params.get("phi_y", 0.5 / comp.r)
            b = analysis.bounds_relative(net.sigma, suite.L_f, comp, px, py)
        elif cell.algo == "alg2":
            px = cell.params.get("phi_x", 0.5 / comp.r)
            py = cell.params.get("phi_y", 0.5 / comp.r)
            b = analysis.bounds_error_feedback(net.sigma, suite.L_f, comp,
                                               px, py)
        else:
            if comp.assumption_class == "local_absolute":
                if suite.nu_pl is None:
                    tables["cells"][label] = {
                        "error": "needs a gradient-dominance constant"}
                    continue
                from .algorithms import initial_point
                from .costs import grad_all, mean_value

                x0 = initial_point(net.n, suite.d, int(cfg.seeds["algo"]))
                y0 = grad_all(suite, x0)
                xbar = x0.mean(axis=0)
                b = analysis.bounds_scaled_local(
                    net.sigma, suite.L_f, suite.nu_pl, comp.phi_c,
                    comp.p_norm, net.n, suite.d,
                    cons0=float(((x0 - xbar) ** 2).sum()),
                    track0=float(((y0 - y0.mean(axis=0)) ** 2).sum()),
                    gap0=net.n * mean_value(suite, xbar),
                    x0_norm_max=float(np.linalg.norm(x0, axis=1).max()),
                    y0_norm_max=float(np.linalg.norm(y0, axis=1).max()))
            else:
                b = analysis.bounds_absolute_global(
                    net.sigma, suite.L_f, net.n, suite.d, comp.cap_c,
                    p=comp.p_norm)
        tables["cells"][label] = {
            "regime": b.regime, "gamma_max": b.gamma_max, "gamma": b.gamma,
            "eta_max": b.eta_max, "eta": b.eta,
            "varsigma_max": b.varsigma_max, "varsigma": b.varsigma,
            "s0_min": b.s0_min, "mu_min": b.mu_min, "mu": b.mu,
            "constants": b.constants,
        }
    print(json.dumps(tables, indent=2, sort_keys=True, default=float))
    return 0


def _cmd_verify_compressor(args) -> int:
    doc = _load_config(args.spec)
    spec = spec_from_config(doc, args.d)
    rng = np.random.default_rng(args.seed)
    report = verify_assumption(spec, trials=args.trials, d=args.d, rng=rng)
    print(json.dumps({
        "kind": spec.kind, "class": spec.assumption_class,
        "trials": report.trials, "bound": report.bound,
        "max_observed_ratio": report.max_observed_ratio,
        "passed": report.passed,
        "violations": len(report.violations),
    }, indent=2, sort_keys=True))
    return 0 if report.passed else 1


def _cmd_replicate(args) -> int:
    modes = ["practical", "certified"] if args.mode == "both" else [args.mode]
    rc = 0
    for mode in modes:
        iters = args.iters if mode == "practical" else min(args.iters, 1000)
        doc = reference_scenario_config(mode=mode, iters=iters,
                                        output_dir=args.out)
        cfg = ExperimentConfig.from_dict(doc)
        result = run_experiment(cfg)
        print(f"== {cfg.scenario} (threshold {cfg.threshold}) ==")
        for row in result.rows:
            reach = ("unreached" if row.bits_to_threshold is None else
                     f"k={row.iters_to_threshold:5d} bits={row.bits_to_threshold}")
            pct = ("" if row.percent_of_dgt is None
                   else f" ({row.percent_of_dgt:.2f}% of baseline)")
            print(f"  {row.label:34s} {row.status:10s} {reach}{pct}")
        if args.gnuplot:
            _emit_gnuplot(Path(cfg.output_dir), cfg.scenario,
                          [r.label for r in result.rows])
        if any(r.status != "ok" for r in result.rows):
            rc = 1
    return rc


def _cmd_benchmark(args) -> int:
    from . import _kernels

    net = generate_network(args.n, 0.4, seed=7)
    suite = generate_suite("logistic_log", args.n, args.d, seed=11, scale=0.1)
    comp = make_compressor("norm_sign", d=args.d)
    params = practical_params("alg1")
    common = dict(seed=13, record_states=False)

    def once(backend):
        t0 = time.perf_counter()
        tr = run_algo("alg1", args.iters, net, suite, params, comp,
                      backend=backend, **common)
        return time.perf_counter() - t0, tr

    once("numba")  # compile before timing
    t_nb, tr_nb = once("numba")
    t_np, tr_np = once("numpy")
    agree = float(np.max(np.abs(tr_nb.consensus_err - tr_np.consensus_err))
                  / (1.0 + np.max(tr_nb.consensus_err)))
    print(json.dumps({
        "workload": {"algo": "alg1", "compressor": "norm_sign",
                     "n": args.n, "d": args.d, "iters": args.iters},
        "numba_seconds": round(t_nb, 4),
        "numpy_seconds": round(t_np, 4),
        "speedup": round(t_np / t_nb, 2),
        "relative_trace_difference": agree,
    }, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cgtsim",
        description="Communication-compressed gradient-tracking simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a run/experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="root seed override (beats CGT_SEED)")
    p.add_argument("--force", action="store_true",
                   help="skip certified-region parameter validation")
    p.add_argument("--gnuplot", action="store_true",
                   help="also emit a gnuplot script for the trace CSVs")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("bounds", help="print certified parameter tables")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_bounds)

    p = sub.add_parser("verify-compressor",
                       help="empirically certify a compressor's error bound")
    p.add_argument("spec", help="JSON file with the compressor config")
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_verify_compressor)

    p = sub.add_parser("replicate-section5",
                       help="run the built-in 20-agent benchmark scenario")
    p.add_argument("--out", default="out")
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--mode", choices=["practical", "certified", "both"],
                   default="practical")
    p.add_argument("--gnuplot", action="store_true")
    p.set_defaults(fn=_cmd_replicate)

    p = sub.add_parser("benchmark",
                       help="time the numba kernels against the numpy path")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--iters", type=int, default=2000)
    p.set_defaults(fn=_cmd_benchmark)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
