"""Command-line entry point.

Subcommands: gen-data, train, probe-init, probe-stability,
probe-landscape, mc-verify, report.  Every subcommand reads a JSON config
and accepts overrides; exit codes are 0 (success), 1 (hard identity
failure), 2 (config error).
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from . import prob_toolkit
from .data import dataset_to_json, generate_dataset
from .experiment import (ConfigError, INIT_PROBES, LANDSCAPE_PROBES,
                         STABILITY_PROBES, aggregate_seeds, load_config,
                         run_experiment, run_training_cell)
from .rng import SeededRng


def _add_common(parser):
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seeds", help="comma-separated seed list")
    parser.add_argument("--m-grid", help="comma-separated widths")
    parser.add_argument("--probes", help="comma-separated probe names")
    parser.add_argument("--threads", type=int, help="worker threads")
    parser.add_argument("--seed", type=int, help="single-seed override")
    parser.add_argument("--m", type=int, help="single-width override")


def _overrides(args):
    overrides = {}
    if args.out:
        overrides["out"] = args.out
    if args.seeds:
        overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.m_grid:
        overrides["m_grid"] = [int(v) for v in args.m_grid.split(",")]
    if args.m is not None:
        overrides["m_grid"] = [args.m]
    if args.probes:
        overrides["probes"] = args.probes.split(",")
    if args.threads:
        overrides["threads"] = args.threads
    return overrides


def _load(args, default_probes=None):
    overrides = _overrides(args)
    config = load_config(args.config, overrides)
    if default_probes is not None and "probes" not in overrides:
        allowed = tuple(p for p in config.probes if p in default_probes)
        config = config.__class__(**{
            **config.__dict__, "probes": allowed or tuple(default_probes),
        })
    return config


def cmd_gen_data(args):
    config = _load(args)
    os.makedirs(config.out, exist_ok=True)
    for seed in config.seeds:
        dataset = generate_dataset(
            config.n, config.L, config.d_x, config.d, config.delta,
            SeededRng(seed).split("data"), label_scale=config.label_scale,
        )
        path = os.path.join(config.out, f"dataset_s{seed}.json")
        with open(path, "w") as fh:
            fh.write(dataset_to_json(dataset))
        print(f"wrote {path}")
    return 0


def cmd_train(args):
    config = _load(args)
    os.makedirs(config.out, exist_ok=True)
    config_hash = config.config_hash()
    rows = []
    for m in config.m_grid:
        for seed in config.seeds:
            log, _, eta = run_training_cell(config, m, seed)
            path = os.path.join(
                config.out, f"{config_hash}_train_m{m}_s{seed}.csv"
            )
            with open(path, "w") as fh:
                fh.write(log.to_csv())
            rows.append({
                "m": m, "seed": seed, "eta": eta, "status": log.status,
                "final_f": log.f[-1], "steps": log.steps[-1],
            })
            print(f"m={m} seed={seed} status={log.status} "
                  f"final_f={log.f[-1]:.6g} steps={log.steps[-1]}")
    summary_path = os.path.join(config.out, f"{config_hash}_train_summary.json")
    with open(summary_path, "w") as fh:
        json.dump({"config_hash": config_hash, "cells": rows}, fh,
                  sort_keys=True, indent=2)
    return 0


def _cmd_probe_family(args, family):
    config = _load(args, default_probes=family)
    result = run_experiment(config)
    summary = result["summary"]
    for verdict in summary["verdicts"]:
        print(f"m={verdict['m']} seed={verdict['seed']} "
              f"{verdict['probe']}: pass_fraction={verdict['pass_fraction']:.3f}")
    for fit in summary["fits"]:
        print(f"fit {fit['probe']}/{fit['kind']}: slope={fit['slope']:.3f} "
              f"R2={fit['r_squared']:.3f}")
    return result["exit_code"]


def cmd_mc_verify(args):
    config = _load(args)
    os.makedirs(config.out, exist_ok=True)
    rng = SeededRng(config.seeds[0]).split("mc")
    cfg = prob_toolkit.McConfig(trials=config.mc_trials, rng=rng)
    small = prob_toolkit.McConfig(
        trials=max(1000, config.mc_trials // 100), rng=rng.split("small")
    )

    results = {
        "chi_square": prob_toolkit.chi_square_tail_mc(10, 1.0, cfg),
        "norm_concentration": prob_toolkit.norm_concentration_mc(256, 4.0, cfg),
        "truncated_square_sum": prob_toolkit.truncated_square_sum_mc(64, small),
        "relu_norm": prob_toolkit.relu_gaussian_norm_mc(400, 1.0, 0.2, cfg),
        "relu_norm_matrix": prob_toolkit.relu_gaussian_norm_mc(
            32, 1.0, 0.2, small, matrix_m=256
        ),
        "percentile": prob_toolkit.gaussian_percentile_check(0.5, cfg),
        "good_vector": prob_toolkit.alpha_sigma_good_mc(1024, 0.1, 1.0, small),
        "mcdiarmid": prob_toolkit.mcdiarmid_mc(
            lambda gen: float(gen.choice([-1.0, 1.0], size=100).mean()),
            [0.02] * 100, 0.2, cfg,
        ),
        "decomposition": prob_toolkit.decomposition_statistics(
            1024, 0.1, 100, rng.split("decomp")
        ),
    }
    path = os.path.join(config.out, f"{config.config_hash()}_mc.json")
    with open(path, "w") as fh:
        json.dump(results, fh, sort_keys=True, indent=2, default=float)
    failed = [
        name for name, res in results.items()
        if isinstance(res, dict) and res.get("verdict") is False
    ]
    for name, res in sorted(results.items()):
        verdict = res.get("verdict", "n/a") if isinstance(res, dict) else "n/a"
        print(f"{name}: verdict={verdict}")
    if failed:
        print(f"failed checks: {failed}")
        return 1
    return 0


def cmd_report(args):
    out = args.out or "results"
    paths = sorted(glob.glob(os.path.join(out, "*_cell_*.csv")))
    if not paths:
        print(f"no cell CSVs under {out}")
        return 0
    summary = aggregate_seeds(paths)
    for probe, stats in summary.items():
        print(f"{probe}: {stats['passed']}/{stats['total']} "
              f"({stats['pass_fraction']:.3f})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="elmanlab",
        description="Numerical laboratory for wide recurrent ReLU networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("gen-data", "train", "probe-init", "probe-stability",
                 "probe-landscape", "mc-verify"):
        p = sub.add_parser(name)
        _add_common(p)
    p_report = sub.add_parser("report")
    p_report.add_argument("--out", help="results directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "probe-init":
            return _cmd_probe_family(args, INIT_PROBES)
        if args.command == "probe-stability":
            return _cmd_probe_family(args, STABILITY_PROBES)
        if args.command == "probe-landscape":
            return _cmd_probe_family(args, LANDSCAPE_PROBES)
        if args.command == "mc-verify":
            return cmd_mc_verify(args)
        if args.command == "report":
            return cmd_report(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
