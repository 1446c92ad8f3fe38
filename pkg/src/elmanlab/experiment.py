"""Experiment orchestration: configs, cells, sweeps, fits, summaries.

An experiment is a grid of (hidden width m) x (seed) cells.  Each cell
initializes a network, generates or loads data, runs the selected probes
and/or training, and writes one CSV per probe plus rows into a JSON
summary.  Scaling fits are computed across the m grid after all cells
finish.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import probes_init, probes_landscape, probes_stability
from .data import InfeasibleDataError, generate_dataset
from .network import forward, init_params
from .probes_landscape import LandscapeParams
from .reporting import ScaleParams, scaling_fit
from .rng import SeededRng
from .training import TrainConfig, default_learning_rate, gd_train, sgd_train

INIT_PROBES = (
    "forward_norm", "fresh_randomness", "separability",
    "intermediate_spectral", "sparse_spectral", "backward_sparse",
)
STABILITY_PROBES = (
    "forward_stability", "intermediate_stability", "backward_stability",
    "rank_one",
)
LANDSCAPE_PROBES = (
    "pl_ratio", "semi_smoothness", "decomposition_identity",
    "indicator_coordinate", "backward_coordinate", "fake_gradient_bound",
    "gradient_upper_bound",
)
ALL_PROBES = INIT_PROBES + STABILITY_PROBES + LANDSCAPE_PROBES


class ConfigError(Exception):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    L: int
    d: int
    d_x: int
    m_grid: tuple
    delta: float
    seeds: tuple
    probes: tuple
    out: str
    label_scale: float = 1.0
    tau0: float = 1.0
    train: dict = field(default_factory=dict)
    mc_trials: int = 100000
    threads: int = 1
    thresholds: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict, overrides=None) -> "ExperimentConfig":
        doc = dict(doc)
        if overrides:
            doc.update({k: v for k, v in overrides.items() if v is not None})
        try:
            dims = doc.get("dims", {})
            m_grid = doc.get("m_grid")
            if m_grid is None:
                m_grid = [doc["m"]] if "m" in doc else [1024]
            m_grid = tuple(int(v) for v in m_grid)
            if any(b <= a for a, b in zip(m_grid, m_grid[1:])):
                raise ConfigError("m_grid must be strictly increasing")
            seeds = tuple(int(s) for s in doc.get("seeds", [0]))
            if not seeds:
                raise ConfigError("seeds must be nonempty")
            probes = tuple(doc.get("probes", []))
            unknown = [p for p in probes if p not in ALL_PROBES]
            if unknown:
                raise ConfigError(f"unknown probes: {unknown}")
            return cls(
                n=int(dims.get("n", 4)),
                L=int(dims.get("L", 5)),
                d=int(dims.get("d", 2)),
                d_x=int(dims.get("d_x", 4)),
                m_grid=m_grid,
                delta=float(doc.get("delta", 0.5)),
                seeds=seeds,
                probes=probes,
                out=str(doc.get("out", "results")),
                label_scale=float(doc.get("label_scale", 1.0)),
                tau0=float(doc.get("tau0", 1.0)),
                train=dict(doc.get("train", {})),
                mc_trials=int(doc.get("mc", {}).get("trials", 100000)),
                threads=int(doc.get("threads", 1)),
                thresholds=dict(doc.get("thresholds", {})),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def config_hash(self) -> str:
        doc = {
            "dims": {"n": self.n, "L": self.L, "d": self.d, "d_x": self.d_x},
            "m_grid": list(self.m_grid),
            "delta": self.delta,
            "seeds": list(self.seeds),
            "probes": list(self.probes),
            "label_scale": self.label_scale,
            "tau0": self.tau0,
            "train": self.train,
            "mc_trials": self.mc_trials,
            "thresholds": self.thresholds,
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def load_config(path, overrides=None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc, overrides)


def _cell_setup(config: ExperimentConfig, m, seed):
    rng = SeededRng(seed)
    dataset = generate_dataset(
        config.n, config.L, config.d_x, config.d, config.delta,
        rng.split("data"), label_scale=config.label_scale,
    )
    params = init_params(m, config.d_x, config.d, rng.split("init"))
    trace = forward(params, dataset)
    return rng, dataset, params, trace


def _run_probe(name, config: ExperimentConfig, m, seed, rng, dataset, params,
               trace) -> list:
    """Dispatch one probe by name; returns a list of ProbeReports."""
    scales = ScaleParams(config.n, config.L, config.d, m, config.delta)
    probe_rng = rng.split(("probe", name))
    tau0 = config.tau0

    if name == "forward_norm":
        return [probes_init.forward_norm_probe(trace)]
    if name == "fresh_randomness":
        floor = float(config.thresholds.get("fresh_randomness_floor", 0.0))
        return [probes_init.fresh_randomness_probe(trace, floor, probe_rng)]
    if name == "separability":
        return [probes_init.separability_probe(trace, config.delta, probe_rng)]
    if name == "intermediate_spectral":
        bound = config.thresholds.get("chain_norm_bound")
        return [
            probes_init.intermediate_spectral_probe(
                params, trace, i, bound, probe_rng.split(i)
            )
            for i in range(dataset.n)
        ]
    if name == "sparse_spectral":
        s = int(config.thresholds.get("sparsity", 1))
        trials = int(config.thresholds.get("sparse_trials", 200))
        return [
            probes_init.sparse_spectral_probe(params, trace, 0, s, trials, probe_rng)
        ]
    if name == "backward_sparse":
        s = int(config.thresholds.get("sparsity", 1))
        trials = int(config.thresholds.get("sparse_trials", 200))
        return [
            probes_init.backward_sparse_probe(params, trace, 0, s, trials, probe_rng)
        ]

    if name in STABILITY_PROBES:
        kind = "rank_one" if name == "rank_one" else "random_spectral"
        spec = probes_stability.PerturbationSpec(
            kind=kind, tau0=tau0,
            N=int(config.thresholds.get("rank_one_support", 16)),
        )
        pert_params, w_prime = probes_stability.perturb(params, spec, probe_rng)
        pert_trace = forward(pert_params, dataset)
        if name == "forward_stability":
            _, report = probes_stability.forward_stability_probe(trace, pert_trace)
            return [report]
        if name == "intermediate_stability":
            L = dataset.L
            pairs = [(1, l2) for l2 in range(1, L + 1)]
            return [
                probes_stability.intermediate_stability_probe(
                    params, pert_params, trace, pert_trace, 0,
                    probe_rng.split("chains"), pairs=pairs,
                )
            ]
        if name == "backward_stability":
            gen = probe_rng.split("a-vectors").generator()
            a_vecs = gen.normal(size=(2, config.d))
            a_vecs /= np.linalg.norm(a_vecs, axis=1, keepdims=True)
            pairs = [(1, dataset.L)]
            return [
                probes_stability.backward_stability_probe(
                    params, pert_params, trace, pert_trace, 0, a_vecs,
                    pairs=pairs,
                )
            ]
        gen = probe_rng.split("k-set").generator()
        k_set = np.unique(
            np.concatenate([gen.choice(m, size=min(64, m), replace=False),
                            np.flatnonzero(np.any(w_prime != 0, axis=1))])
        )
        return [
            probes_stability.rank_one_probes(
                params, pert_params, w_prime, trace, pert_trace, 0, k_set
            )
        ]

    if name == "pl_ratio":
        return [probes_landscape.pl_ratio_probe(params, dataset, trace)]
    if name == "semi_smoothness":
        gen = probe_rng.split("direction").generator()
        direction = gen.normal(size=(m, m))
        from .linalg import spectral_norm

        direction /= spectral_norm(direction, rng=probe_rng.split("norm")).value
        taus = np.geomspace(1e-4, 1e-1, 10) / math.sqrt(m)
        return [
            probes_landscape.semi_smoothness_probe(params, dataset, direction, taus)
        ]
    if name == "decomposition_identity":
        spec = probes_stability.PerturbationSpec(kind="random_spectral", tau0=tau0)
        _, w_prime = probes_stability.perturb(params, spec, probe_rng)
        return [
            probes_landscape.decomposition_identity_probe(params, w_prime, dataset)
        ]
    if name == "indicator_coordinate":
        landscape = LandscapeParams.from_scales(scales)
        sqrt_m = math.sqrt(m)
        abs_g = np.abs(trace.g)
        reports = [
            probes_landscape.indicator_coordinate_probe(
                trace, 0, 1, landscape
            )
        ]
        quantile_report = probes_landscape.indicator_coordinate_probe(
            trace, 0, 1, landscape,
            small_threshold=float(np.quantile(abs_g, 0.10)),
            large_threshold=float(np.quantile(abs_g, 0.50)),
        )
        quantile_report.extras["mode"] = "quantile"
        reports.append(quantile_report)
        return reports
    if name == "backward_coordinate":
        gen = probe_rng.split("fixed-loss").generator()
        fixed = gen.normal(size=trace.loss.shape)
        fixed /= np.linalg.norm(fixed, axis=2, keepdims=True)
        return [
            probes_landscape.backward_coordinate_probe(params, trace, fixed)
        ]
    if name == "fake_gradient_bound":
        gen = probe_rng.split("fixed-loss").generator()
        fixed = gen.normal(size=trace.loss.shape)
        fixed /= np.linalg.norm(fixed, axis=2, keepdims=True)
        return [probes_landscape.fake_gradient_bound_probe(params, trace, fixed)]
    if name == "gradient_upper_bound":
        return [probes_landscape.gradient_upper_bound_probe(params, dataset, trace)]

    raise ConfigError(f"unknown probe {name!r}")


@dataclass
class CellResult:
    m: int
    seed: int
    reports: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    hard_failure: bool = False
    error: str | None = None

    def summary_row(self) -> dict:
        row = {"m": self.m, "seed": self.seed, "probes": {}}
        for report in self.reports:
            row["probes"][report.probe] = report.aggregate()
        if self.error:
            row["error"] = self.error
        if self.hard_failure:
            row["hard_failure"] = True
        return row


HARD_IDENTITY_PROBES = {"decomposition_identity"}


def run_cell(config: ExperimentConfig, m, seed) -> CellResult:
    result = CellResult(m=m, seed=seed)
    try:
        rng, dataset, params, trace = _cell_setup(config, m, seed)
    except InfeasibleDataError as exc:
        result.error = str(exc)
        return result
    for name in config.probes:
        reports = _run_probe(name, config, m, seed, rng, dataset, params, trace)
        for idx, report in enumerate(reports):
            suffix = f"_{idx}" if len(reports) > 1 else ""
            fname = f"cell_m{m}_s{seed}_{name}{suffix}.csv"
            result.files[fname] = report.to_csv()
            result.reports.append(report)
            if name in HARD_IDENTITY_PROBES and not report.all_passed:
                result.hard_failure = True
    return result


def run_training_cell(config: ExperimentConfig, m, seed):
    """One training run; returns (TrainLog, final params, eta used)."""
    rng, dataset, params, trace = _cell_setup(config, m, seed)
    tcfg = config.train
    eta = tcfg.get("eta")
    if eta is None:
        eta = default_learning_rate(
            m, config.n, config.L, config.d, config.delta,
            calib=float(tcfg.get("calib", 1.0)),
        )
    algorithm = tcfg.get("algorithm", "gd")
    train_config = TrainConfig(
        eta=float(eta),
        max_steps=int(tcfg.get("max_steps", 2000)),
        target_eps=float(tcfg.get("target_eps", 1e-3)),
        batch_size=tcfg.get("batch_size"),
        seed=seed,
    )
    if algorithm == "sgd":
        log, final = sgd_train(params, dataset, train_config)
    elif algorithm == "gd":
        log, final = gd_train(params, dataset, train_config)
    else:
        raise ConfigError(f"unknown training algorithm {algorithm!r}")
    return log, final, eta


def compute_fits(results) -> list:
    """Log-log slope fits of per-cell median values across the m grid.

    Groups records by (probe, kind); needs at least 3 distinct widths.
    """
    groups = {}
    for result in results:
        for report in result.reports:
            for record in report.records:
                kind = record.indices.get("kind", "")
                key = (report.probe, kind)
                if record.measured > 0:
                    groups.setdefault(key, {}).setdefault(result.m, []).append(
                        record.measured
                    )
    fits = []
    for (probe, kind), per_m in sorted(groups.items()):
        if len(per_m) < 3:
            continue
        points = [
            (math.log(m), math.log(float(np.median(vals))))
            for m, vals in sorted(per_m.items())
        ]
        fit = scaling_fit(points)
        fits.append({
            "probe": probe,
            "kind": kind,
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
        })
    return fits


def run_experiment(config: ExperimentConfig) -> dict:
    """Run all cells, write per-cell CSVs and a JSON summary.

    Returns {"exit_code": ..., "summary": ...}; exit code 1 signals a
    hard identity failure in some cell.
    """
    os.makedirs(config.out, exist_ok=True)
    cells = [(m, seed) for m in config.m_grid for seed in config.seeds]
    if config.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(
                lambda cell: run_cell(config, cell[0], cell[1]), cells
            ))
    else:
        results = [run_cell(config, m, seed) for m, seed in cells]

    config_hash = config.config_hash()
    for result in results:
        for fname, text in result.files.items():
            with open(os.path.join(config.out, f"{config_hash}_{fname}"), "w") as fh:
                fh.write(text)

    fits = compute_fits(results)
    hard_failure = any(r.hard_failure for r in results)
    verdicts = []
    for result in results:
        for report in result.reports:
            agg = report.aggregate()
            if "pass_fraction" in agg:
                verdicts.append({
                    "m": result.m, "seed": result.seed,
                    "probe": report.probe,
                    "pass_fraction": agg["pass_fraction"],
                })
    summary = {
        "config_hash": config_hash,
        "cells": [r.summary_row() for r in results],
        "fits": fits,
        "verdicts": verdicts,
    }
    with open(os.path.join(config.out, f"{config_hash}_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    return {"exit_code": 1 if hard_failure else 0, "summary": summary}


def aggregate_seeds(report_paths) -> dict:
    """Recompute pass fractions per probe from raw cell CSV files."""
    import csv

    per_probe = {}
    expected_header_tail = ["measured", "bound", "passed"]
    for path in report_paths:
        with open(path) as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:2] != ["probe", "lemma"] \
                or rows[0][-3:] != expected_header_tail:
            raise ValueError(f"unexpected CSV schema in {path}")
        for row in rows[1:]:
            probe, passed = row[0], row[-1]
            if passed == "":
                continue
            stats = per_probe.setdefault(probe, [0, 0])
            stats[0] += int(passed)
            stats[1] += 1
    return {
        probe: {"passed": p, "total": t, "pass_fraction": p / t}
        for probe, (p, t) in sorted(per_probe.items())
    }
