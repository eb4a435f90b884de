import json

import numpy as np
import pytest

from wellcast.cli import main as cli_main
from wellcast.pipeline import (
    ConfigError,
    StageError,
    parse_config,
    prepare_table,
    read_monthly_csv,
    regenerate_reports,
    run_pipeline,
)
from wellcast.synth import default_spec, generate
from wellcast.table import load_csv


def rf_config(**overrides):
    raw = {
        "input": {"synth": {"n_wells": 160, "noise_fraction": 0.1}},
        "response": "cum_prod_12m",
        "model": {"kind": "rf", "params": {"n_estimators": 6, "max_depth": 6}},
        "uncertainty": {"counts": [8, 12]},
        "seed": 121,
    }
    raw.update(overrides)
    return raw


def strip_timestamp(path) -> str:
    lines = path.read_text().splitlines()
    return "\n".join(line for line in lines if '"timestamp"' not in line)


class TestConfigValidation:
    def test_both_input_kinds_rejected(self):
        raw = rf_config()
        raw["input"] = {"path": "x.csv", "synth": {"n_wells": 5}}
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(raw)

    def test_neither_input_kind_rejected(self):
        raw = rf_config()
        raw["input"] = {}
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(raw)

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            parse_config(rf_config(bogus=1))

    def test_unknown_nested_key(self):
        raw = rf_config()
        raw["preprocess"] = {"knn_neighbors": 3}
        with pytest.raises(ConfigError, match="knn_neighbors"):
            parse_config(raw)

    def test_unknown_model_kind(self):
        raw = rf_config(model={"kind": "svm"})
        with pytest.raises(ConfigError, match="svm"):
            parse_config(raw)

    def test_lstm_with_tune_rejected(self):
        raw = rf_config(model={"kind": "lstm"}, tune={"n_trials": 3})
        with pytest.raises(ConfigError, match="lstm"):
            parse_config(raw)

    def test_bad_imputer(self):
        raw = rf_config()
        raw["preprocess"] = {"imputer": "magic"}
        with pytest.raises(ConfigError, match="magic"):
            parse_config(raw)

    def test_non_object_section_rejected(self):
        raw = rf_config()
        raw["preprocess"] = "knn"
        with pytest.raises(ConfigError, match="object"):
            parse_config(raw)

    def test_unknown_id_column_fails_in_preprocess(self, tmp_path):
        cfg = parse_config(rf_config(id_column="api_number"))
        with pytest.raises(StageError, match="api_number"):
            run_pipeline(cfg, tmp_path / "bad")

    def test_defaults_fill_in(self):
        cfg = parse_config(rf_config())
        assert cfg.missing_threshold == 0.25
        assert cfg.imputer == "knn"
        assert cfg.collinearity_cutoff == 0.95
        assert cfg.split_spec.fractions == (0.8, 0.2)
        assert cfg.split_spec.seed == 121
        assert cfg.id_column == "well_id"

    def test_config_hash_stable_and_sensitive(self):
        a = parse_config(rf_config())
        b = parse_config(rf_config())
        c = parse_config(rf_config(seed=7))
        assert a.config_hash == b.config_hash
        assert a.config_hash != c.config_hash


class TestPrepareTable:
    def test_high_missingness_dropped_and_collinear_pruned(self):
        cfg = parse_config(rf_config())
        data = generate(default_spec(n_wells=200, noise_std=5.0, seed=2))
        prepared = prepare_table(data.table, cfg)
        # mud_weight_ppg carries 35% missingness -> dropped by the 25% rule
        assert "mud_weight_ppg" not in prepared.names
        # lateral_length_m is an exact rescale of lateral_length_ft -> pruned
        assert "lateral_length_m" not in prepared.names
        assert "lateral_length_ft" in prepared.names
        # categoricals are one-hot encoded; response and id ride along
        assert "township=T150N" in prepared.names
        assert "cum_prod_12m" in prepared.names and "well_id" in prepared.names
        assert not prepared.mask.any()

    def test_iterative_imputer_path(self):
        raw = rf_config()
        raw["preprocess"] = {"imputer": "iterative"}
        cfg = parse_config(raw)
        data = generate(default_spec(n_wells=150, noise_std=5.0, seed=3))
        prepared = prepare_table(data.table, cfg)
        assert not prepared.mask.any()

    def test_missing_response_rows_dropped(self):
        cfg = parse_config(rf_config())
        spec = default_spec(n_wells=100, noise_std=0.0, seed=4,
                            missingness={"cum_prod_12m": 0.2})
        data = generate(spec)
        expected = int((~data.table.column_mask("cum_prod_12m")).sum())
        prepared = prepare_table(data.table, cfg)
        assert prepared.n_rows == expected

    def test_unknown_response_column(self):
        cfg = parse_config(rf_config(response="nope"))
        data = generate(default_spec(n_wells=50, seed=5))
        with pytest.raises(ValueError, match="nope"):
            prepare_table(data.table, cfg)


class TestRunPipeline:
    def test_smoke_run_emits_all_artifact_kinds(self, tmp_path):
        raw = rf_config(tune={"n_trials": 3, "k_folds": 2, "space": {
            "n_estimators": {"type": "int_uniform", "lo": 2, "hi": 5},
            "max_depth": {"type": "int_uniform", "lo": 2, "hi": 5},
        }})
        out = run_pipeline(parse_config(raw), tmp_path / "run")
        for name in (
            "metrics.json", "predictions.csv", "study.jsonl", "uncertainty.json",
            "scatter.svg", "scatter.csv", "uncertainty_8.svg", "uncertainty_12.svg",
            "manifest.json", "column_stats.json", "processed.csv", "best_params.json",
        ):
            assert (out / name).exists(), name
        assert not (out / "FAILED").exists()

        doc = json.loads((out / "metrics.json").read_text())
        assert doc["config_hash"] and doc["seed"] == 121
        assert doc["tuned"] is True
        assert doc["metrics"]["rmse"] == pytest.approx(
            np.sqrt(doc["metrics"]["mse"]), abs=1e-12
        )
        lines = (out / "study.jsonl").read_text().strip().splitlines()
        assert len(lines) == 3

    def test_rerun_byte_identical(self, tmp_path):
        cfg = parse_config(rf_config())
        out1 = run_pipeline(cfg, tmp_path / "a")
        out2 = run_pipeline(cfg, tmp_path / "b")
        assert strip_timestamp(out1 / "metrics.json") == strip_timestamp(out2 / "metrics.json")
        assert (out1 / "predictions.csv").read_bytes() == (out2 / "predictions.csv").read_bytes()
        assert (out1 / "uncertainty.json").read_bytes() == (out2 / "uncertainty.json").read_bytes()

    def test_worker_count_invariant(self, tmp_path):
        cfg = parse_config(rf_config())
        out1 = run_pipeline(cfg, tmp_path / "w1", n_workers=1)
        out3 = run_pipeline(cfg, tmp_path / "w3", n_workers=3)
        assert strip_timestamp(out1 / "metrics.json") == strip_timestamp(out3 / "metrics.json")
        assert (out1 / "predictions.csv").read_bytes() == (out3 / "predictions.csv").read_bytes()

    def test_failure_leaves_stage_tagged_marker(self, tmp_path):
        cfg = parse_config(rf_config(response="missing_column"))
        with pytest.raises(StageError, match="preprocess"):
            run_pipeline(cfg, tmp_path / "bad")
        marker = tmp_path / "bad" / "FAILED"
        assert marker.exists()
        assert "stage: preprocess" in marker.read_text()

    def test_stop_after_stage(self, tmp_path):
        cfg = parse_config(rf_config())
        out = run_pipeline(cfg, tmp_path / "partial", stop_after="preprocess")
        assert (out / "processed.csv").exists()
        assert not (out / "metrics.json").exists()

    def test_predictions_csv_well_ids(self, tmp_path):
        cfg = parse_config(rf_config())
        out = run_pipeline(cfg, tmp_path / "run", stop_after="evaluate")
        lines = (out / "predictions.csv").read_text().strip().splitlines()
        assert lines[0] == "well_id,actual,predicted"
        assert all(line.split(",")[0].startswith("W") for line in lines[1:])
        # 20% of 160 synthetic wells
        assert len(lines) - 1 == 32

    def test_csv_input_path(self, tmp_path):
        data = generate(default_spec(n_wells=80, noise_std=5.0, seed=6))
        from wellcast.table import write_csv

        csv_path = tmp_path / "wells.csv"
        write_csv(data.table, csv_path)
        raw = rf_config(input={"path": str(csv_path)}, id_column="well_id")
        raw["uncertainty"] = {"counts": []}
        out = run_pipeline(parse_config(raw), tmp_path / "run")
        assert (out / "metrics.json").exists()
        assert not (out / "uncertainty.json").exists()


class TestLstmPipeline:
    def lstm_config(self, **overrides):
        raw = {
            "input": {"synth": {"n_wells": 40, "noise_fraction": 0.05, "months": 20}},
            "model": {"kind": "lstm", "params": {
                "window": 5, "epochs": 3, "hidden1": 6, "hidden2": 8, "batch_size": 16,
            }},
            "uncertainty": {"counts": [4]},
            "seed": 11,
        }
        raw.update(overrides)
        return raw

    def test_lstm_run_emits_curves_and_metrics(self, tmp_path):
        out = run_pipeline(parse_config(self.lstm_config()), tmp_path / "lstm")
        assert (out / "validation_curve.svg").exists()
        assert (out / "validation_curve.csv").exists()
        doc = json.loads((out / "metrics.json").read_text())
        assert doc["model"] == "lstm"
        assert "persistence_rmse" in doc["baselines"]
        curve_lines = (out / "validation_curve.csv").read_text().strip().splitlines()
        assert len(curve_lines) == 1 + 3  # header + one row per epoch

    def test_lstm_determinism(self, tmp_path):
        cfg = parse_config(self.lstm_config())
        out1 = run_pipeline(cfg, tmp_path / "a", stop_after="evaluate")
        out2 = run_pipeline(cfg, tmp_path / "b", stop_after="evaluate")
        assert (out1 / "predictions.csv").read_bytes() == (out2 / "predictions.csv").read_bytes()

    def test_lstm_grid_evaluation(self, tmp_path):
        raw = self.lstm_config()
        raw["model"]["grid"] = [{"hidden1": 4, "hidden2": 4}, {"hidden1": 8, "hidden2": 8}]
        out = run_pipeline(parse_config(raw), tmp_path / "grid", stop_after="evaluate")
        doc = json.loads((out / "grid_results.json").read_text())
        assert len(doc["results"]) == 2
        best = min(doc["results"], key=lambda r: r["val_loss"])
        assert doc["chosen"]["hidden1"] == best["params"]["hidden1"]
        metrics_doc = json.loads((out / "metrics.json").read_text())
        assert metrics_doc["tuned"] is True
        assert metrics_doc["params"]["hidden1"] == best["params"]["hidden1"]

    def test_grid_rejected_for_tree_models(self):
        raw = rf_config()
        raw["model"]["grid"] = [{"n_estimators": 3}]
        with pytest.raises(ConfigError, match="grid"):
            parse_config(raw)

    def test_monthly_csv_round_trip(self, tmp_path):
        data = generate(default_spec(n_wells=12, noise_std=0.0, seed=9, months=18))
        monthly_path = tmp_path / "monthly.csv"
        with open(monthly_path, "w", encoding="utf-8") as fh:
            fh.write("well_id,month,production\n")
            for wid, series in data.monthly.items():
                for month, value in enumerate(series):
                    fh.write(f"{wid},{month},{float(value)!r}\n")
        series = read_monthly_csv(monthly_path)
        assert set(series) == set(data.monthly)
        for wid in series:
            assert np.array_equal(series[wid], data.monthly[wid])


class TestReportRegeneration:
    def test_figures_rebuild_byte_identical(self, tmp_path):
        cfg = parse_config(rf_config())
        out = run_pipeline(cfg, tmp_path / "run")
        before = {p.name: p.read_bytes() for p in out.glob("*.svg")}
        assert before
        rebuilt = regenerate_reports(out)
        assert sorted(rebuilt) == sorted(before)
        for name, blob in before.items():
            assert (out / name).read_bytes() == blob, name


class TestCli:
    def test_generate_writes_dataset(self, tmp_path, capsys):
        rc = cli_main(["generate", "--out", str(tmp_path), "--wells", "25", "--seed", "3"])
        assert rc == 0
        t = load_csv(tmp_path / "wells.csv")
        assert t.n_rows == 25
        monthly = read_monthly_csv(tmp_path / "monthly.csv")
        assert len(monthly) == 25

    def test_run_and_report(self, tmp_path):
        config_path = tmp_path / "config.json"
        raw = rf_config()
        raw["uncertainty"] = {"counts": [4]}
        config_path.write_text(json.dumps(raw))
        rc = cli_main(["run", "--config", str(config_path), "--out", str(tmp_path / "out")])
        assert rc == 0
        assert (tmp_path / "out" / "metrics.json").exists()
        rc = cli_main(["report", "--out", str(tmp_path / "out")])
        assert rc == 0

    def test_seed_override(self, tmp_path):
        config_path = tmp_path / "config.json"
        raw = rf_config()
        raw["uncertainty"] = {"counts": []}
        config_path.write_text(json.dumps(raw))
        cli_main(["evaluate", "--config", str(config_path), "--out", str(tmp_path / "a")])
        cli_main(["evaluate", "--config", str(config_path), "--seed", "999",
                  "--out", str(tmp_path / "b")])
        a = json.loads((tmp_path / "a" / "metrics.json").read_text())
        b = json.loads((tmp_path / "b" / "metrics.json").read_text())
        assert a["seed"] == 121 and b["seed"] == 999
        assert a["config_hash"] != b["config_hash"]

    def test_config_error_exit_code(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(rf_config(bogus=True)))
        rc = cli_main(["run", "--config", str(config_path), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "config error" in capsys.readouterr().err

    def test_stage_error_exit_code(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(rf_config(response="nope")))
        rc = cli_main(["run", "--config", str(config_path), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "preprocess" in capsys.readouterr().err
