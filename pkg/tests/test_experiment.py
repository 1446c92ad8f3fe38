import json
import os

import numpy as np
import pytest

from elmanlab import cli
from elmanlab.experiment import (ALL_PROBES, ConfigError, ExperimentConfig,
                                 aggregate_seeds, load_config,
                                 run_cell, run_experiment, run_training_cell)


def base_doc(out, **extra):
    doc = {
        "dims": {"n": 2, "L": 3, "d": 2, "d_x": 4},
        "m_grid": [32],
        "delta": 0.4,
        "seeds": [0],
        "probes": ["forward_norm"],
        "out": out,
    }
    doc.update(extra)
    return doc


def write_config(tmp_path, doc):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig.from_dict({"probes": []})
        assert (config.n, config.L, config.d, config.d_x) == (4, 5, 2, 4)
        assert config.m_grid == (1024,)
        assert config.seeds == (0,)

    def test_m_grid_must_increase(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"m_grid": [64, 32]})

    def test_unknown_probe_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"probes": ["nonsense"]})

    def test_empty_seeds_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seeds": []})

    def test_overrides_win(self):
        config = ExperimentConfig.from_dict(
            {"m_grid": [32], "probes": []},
            overrides={"m_grid": [64, 128], "seeds": [7]},
        )
        assert config.m_grid == (64, 128)
        assert config.seeds == (7,)

    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig.from_dict(base_doc("x"))
        b = ExperimentConfig.from_dict(base_doc("x"))
        c = ExperimentConfig.from_dict(base_doc("x", delta=0.3))
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()
        assert len(a.config_hash()) == 12

    def test_hash_ignores_out_dir(self):
        a = ExperimentConfig.from_dict(base_doc("x"))
        b = ExperimentConfig.from_dict(base_doc("y"))
        assert a.config_hash() == b.config_hash()

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nope.json"))

    def test_load_config_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestRunCell:
    def test_every_probe_runs_at_small_width(self, tmp_path):
        config = ExperimentConfig.from_dict(
            base_doc(str(tmp_path), probes=list(ALL_PROBES),
                     thresholds={"sparse_trials": 10})
        )
        result = run_cell(config, 32, 0)
        assert result.error is None
        assert not result.hard_failure
        ran = {r.probe for r in result.reports}
        assert "forward_norm" in ran and "decomposition_identity" in ran
        assert len(result.files) == len(result.reports)

    def test_infeasible_data_reported_not_raised(self, tmp_path):
        config = ExperimentConfig.from_dict(
            base_doc(str(tmp_path),
                     dims={"n": 20, "L": 2, "d": 2, "d_x": 3}, delta=1.0)
        )
        result = run_cell(config, 16, 0)
        assert result.error is not None
        assert result.reports == []

    def test_deterministic_csv_bytes(self, tmp_path):
        config = ExperimentConfig.from_dict(
            base_doc(str(tmp_path),
                     probes=["forward_norm", "separability", "pl_ratio"])
        )
        a = run_cell(config, 32, 3)
        b = run_cell(config, 32, 3)
        assert a.files == b.files


class TestRunExperiment:
    def test_writes_cells_and_summary(self, tmp_path):
        out = str(tmp_path / "res")
        config = ExperimentConfig.from_dict(
            base_doc(out, seeds=[0, 1], probes=["forward_norm"])
        )
        result = run_experiment(config)
        assert result["exit_code"] == 0
        summary = result["summary"]
        assert set(summary) == {"config_hash", "cells", "fits", "verdicts"}
        files = os.listdir(out)
        csvs = [f for f in files if f.endswith(".csv")]
        assert len(csvs) == 2
        assert any(f.endswith("_summary.json") for f in files)

    def test_threaded_matches_serial(self, tmp_path):
        doc = base_doc(str(tmp_path / "a"), seeds=[0, 1],
                       probes=["forward_norm", "pl_ratio"])
        serial = run_experiment(ExperimentConfig.from_dict(doc))
        doc2 = dict(doc, out=str(tmp_path / "b"), threads=2)
        threaded = run_experiment(ExperimentConfig.from_dict(doc2))
        assert serial["summary"]["cells"] == threaded["summary"]["cells"]

    def test_hard_failure_exit_code(self, tmp_path, monkeypatch):
        # force the identity probe to report a failure
        from elmanlab import experiment as exp
        from elmanlab.reporting import ProbeReport

        def broken(params, w_prime, dataset, rel_tol=1e-8):
            report = ProbeReport("decomposition_identity", "expansion-identities")
            report.add({"kind": "pointwise"}, 1.0, rel_tol, False)
            return report

        monkeypatch.setattr(
            exp.probes_landscape, "decomposition_identity_probe", broken
        )
        config = ExperimentConfig.from_dict(
            base_doc(str(tmp_path), probes=["decomposition_identity"])
        )
        result = run_experiment(config)
        assert result["exit_code"] == 1

    def test_fit_rows_across_m_grid(self, tmp_path):
        config = ExperimentConfig.from_dict(
            base_doc(str(tmp_path), m_grid=[16, 32, 64],
                     probes=["forward_stability"])
        )
        result = run_experiment(config)
        fits = result["summary"]["fits"]
        kinds = {f["kind"] for f in fits if f["probe"] == "forward_stability"}
        assert "h_prime" in kinds
        for fit in fits:
            assert np.isfinite(fit["slope"])


class TestTrainingCell:
    def test_gd_smoke(self, tmp_path):
        config = ExperimentConfig.from_dict(
            base_doc(str(tmp_path),
                     train={"calib": 10.0, "max_steps": 5, "target_eps": 0.0})
        )
        log, final, eta = run_training_cell(config, 32, 0)
        assert len(log.f) == 6
        assert eta > 0

    def test_sgd_dispatch(self, tmp_path):
        config = ExperimentConfig.from_dict(
            base_doc(str(tmp_path),
                     train={"calib": 10.0, "max_steps": 3, "target_eps": 0.0,
                            "algorithm": "sgd", "batch_size": 1})
        )
        log, _, _ = run_training_cell(config, 32, 0)
        assert len(log.f) == 4

    def test_unknown_algorithm(self, tmp_path):
        config = ExperimentConfig.from_dict(
            base_doc(str(tmp_path), train={"algorithm": "adam"})
        )
        with pytest.raises(ConfigError):
            run_training_cell(config, 32, 0)


class TestAggregateSeeds:
    def test_recounts_from_csv(self, tmp_path):
        out = str(tmp_path)
        config = ExperimentConfig.from_dict(
            base_doc(out, seeds=[0, 1], probes=["forward_norm"])
        )
        run_experiment(config)
        import glob

        paths = sorted(glob.glob(os.path.join(out, "*_cell_*.csv")))
        summary = aggregate_seeds(paths)
        assert "forward_norm" in summary
        stats = summary["forward_norm"]
        assert stats["total"] == 2 * 2 * 2 * 3  # seeds x kinds x n x L
        assert stats["passed"] <= stats["total"]

    def test_schema_validated(self, tmp_path):
        bad = tmp_path / "bad_cell_x.csv"
        bad.write_text("foo,bar\n1,2\n")
        with pytest.raises(ValueError):
            aggregate_seeds([str(bad)])


class TestCli:
    def test_gen_data(self, tmp_path, capsys):
        path = write_config(tmp_path, base_doc(str(tmp_path / "out")))
        code = cli.main(["gen-data", "--config", path, "--seeds", "0,1"])
        assert code == 0
        files = os.listdir(tmp_path / "out")
        assert sorted(files) == ["dataset_s0.json", "dataset_s1.json"]

    def test_train_writes_log_and_summary(self, tmp_path, capsys):
        doc = base_doc(str(tmp_path / "out"),
                       train={"calib": 10.0, "max_steps": 3, "target_eps": 0.0})
        path = write_config(tmp_path, doc)
        code = cli.main(["train", "--config", path, "--m", "32"])
        assert code == 0
        files = os.listdir(tmp_path / "out")
        assert any("train_m32_s0" in f for f in files)
        assert any(f.endswith("_train_summary.json") for f in files)
        header = next(
            open(os.path.join(tmp_path / "out", f))
            for f in files if "train_m32" in f
        ).readline().strip()
        assert header == "step,f,max_loss_norm,grad_fro,movement_fro,wall_ms"

    def test_probe_init_family_filter(self, tmp_path, capsys):
        doc = base_doc(str(tmp_path / "out"),
                       probes=["forward_norm", "pl_ratio"])
        path = write_config(tmp_path, doc)
        code = cli.main(["probe-init", "--config", path])
        assert code == 0
        files = os.listdir(tmp_path / "out")
        assert any("forward_norm" in f for f in files)
        # pl_ratio belongs to the landscape family and is filtered out
        assert not any("pl_ratio" in f for f in files)

    def test_probe_landscape_exit_zero(self, tmp_path):
        doc = base_doc(str(tmp_path / "out"),
                       probes=["decomposition_identity", "pl_ratio"])
        path = write_config(tmp_path, doc)
        assert cli.main(["probe-landscape", "--config", path]) == 0

    def test_config_error_exit_two(self, tmp_path):
        path = write_config(tmp_path, base_doc("out", probes=["bogus"]))
        assert cli.main(["probe-init", "--config", path]) == 2

    def test_missing_config_exit_two(self, tmp_path):
        missing = str(tmp_path / "none.json")
        assert cli.main(["train", "--config", missing]) == 2

    def test_report_aggregates(self, tmp_path, capsys):
        out = str(tmp_path / "out")
        doc = base_doc(out, probes=["forward_norm"])
        path = write_config(tmp_path, doc)
        cli.main(["probe-init", "--config", path])
        capsys.readouterr()
        code = cli.main(["report", "--out", out])
        assert code == 0
        assert "forward_norm" in capsys.readouterr().out

    def test_report_empty_dir(self, tmp_path, capsys):
        assert cli.main(["report", "--out", str(tmp_path)]) == 0

    def test_mc_verify_small(self, tmp_path, capsys):
        doc = base_doc(str(tmp_path / "out"), mc={"trials": 2000})
        path = write_config(tmp_path, doc)
        code = cli.main(["mc-verify", "--config", path])
        out = capsys.readouterr().out
        assert code == 0
        assert "chi_square" in out
        files = os.listdir(tmp_path / "out")
        assert any(f.endswith("_mc.json") for f in files)
