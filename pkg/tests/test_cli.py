import json

import pytest

from nsdkit.cli import (
    AllSeedsFailed,
    ExperimentConfig,
    aggregate,
    main,
    run_experiment,
)


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestStats:
    def test_prints_corpus_stats(self, synthetic_corpus, capsys):
        rc = run_cli(
            "stats",
            "--train", synthetic_corpus["train"],
            "--val", synthetic_corpus["val"],
            "--test", synthetic_corpus["test"],
        )
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["split_sizes"] == {"train": 150, "val": 50, "test": 50}
        assert payload["num_slots"] == 4
        assert payload["policy"]["fold_digits"] is True


class TestVersion:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            run_cli("--version")
        assert e.value.code == 0
        out = capsys.readouterr().out
        assert "nsdkit" in out and "NSDE" in out and "NSDM" in out


@pytest.fixture(scope="session")
def bench_dir(synthetic_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline") / "bench"
    rc = run_cli(
        "build",
        "--train", synthetic_corpus["train"],
        "--val", synthetic_corpus["val"],
        "--test", synthetic_corpus["test"],
        "--unknown-types", "place",
        "--strategy", "remove",
        "--out", out,
    )
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def model_path(bench_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "multiple.nsdm"
    rc = run_cli(
        "train",
        "--benchmark", bench_dir,
        "--objective", "multiple",
        "--features", "hashed:d=256",
        "--max-epochs", 8,
        "--patience", 3,
        "--out", path,
    )
    assert rc == 0
    return path


class TestPipelineCommands:
    def test_build_outputs(self, bench_dir):
        assert (bench_dir / "train.conll").exists()
        payload = json.loads((bench_dir / "benchmark.json").read_text())
        assert payload["unknown_types"] == ["place"]
        assert payload["stats"]["removed_train_fraction"] > 0

    def test_build_refuses_overwrite(self, synthetic_corpus, bench_dir, capsys):
        rc = run_cli(
            "build",
            "--train", synthetic_corpus["train"],
            "--val", synthetic_corpus["val"],
            "--test", synthetic_corpus["test"],
            "--unknown-types", "place",
            "--strategy", "remove",
            "--out", bench_dir,
        )
        assert rc == 1
        assert "exists" in capsys.readouterr().err

    def test_train_writes_model(self, model_path):
        from nsdkit.crf import load_model

        model = load_model(model_path)
        assert model.objective == "multiple"
        assert "hashed:d=256" in model.feature_desc

    def test_detect_eval_analyze(self, bench_dir, model_path, tmp_path, capsys):
        out_dir = tmp_path / "detect"
        rc = run_cli(
            "detect",
            "--benchmark", bench_dir,
            "--method", "gda",
            "--objective", "multiple",
            "--distance", "minimum",
            "--features", "hashed:d=256",
            "--multiple-model", model_path,
            "--calibrate",
            "--out-dir", out_dir,
        )
        assert rc == 0
        capsys.readouterr()
        detector = json.loads((out_dir / "detector.json").read_text())
        assert detector["calibrated"] and "threshold" in detector
        assert detector["curves"], "calibration curves recorded"

        rc = run_cli("eval", "--pred", out_dir / "predictions.conll")
        assert rc == 0
        out = capsys.readouterr().out
        json_part = out[: out.index("\n\n")]
        report = json.loads(json_part)
        assert "nsd_token_f1" in report
        assert report["nsd_token_f1"]["f1"] > 50  # separable vocabulary

        rc = run_cli(
            "analyze", "--pred", out_dir / "predictions.conll", "--open-vocab", "color"
        )
        assert rc == 0
        table = json.loads(capsys.readouterr().out)
        assert set(table["percentages"]) == {"prediction_is_ns", "target_is_ns"}

    def test_detect_msp_with_explicit_threshold(self, bench_dir, model_path, tmp_path):
        out_dir = tmp_path / "msp"
        rc = run_cli(
            "detect",
            "--benchmark", bench_dir,
            "--method", "msp",
            "--objective", "multiple",
            "--features", "hashed:d=256",
            "--multiple-model", model_path,
            "--threshold", 0.6,
            "--out-dir", out_dir,
        )
        assert rc == 0
        assert (out_dir / "predictions.conll").exists()


class TestAggregate:
    def test_mean_and_population_std(self):
        mean, std = aggregate([{"x": 50.0}, {"x": 60.0}])
        assert mean["x"] == 55.0 and std["x"] == 5.0

    def test_single_value_std_zero(self):
        mean, std = aggregate([{"x": 42.0}])
        assert mean["x"] == 42.0 and std["x"] == 0.0

    def test_empty_raises(self):
        with pytest.raises(AllSeedsFailed):
            aggregate([])


def experiment_config(synthetic_corpus, **overrides):
    base = dict(
        corpus={k: str(v) for k, v in synthetic_corpus.items()},
        proportions=[0.3],
        strategies=["remove", "replace"],
        detectors=[
            {"method": "gda", "objective": "multiple", "distance": "minimum"},
            {"method": "msp", "objective": "multiple"},
        ],
        seeds=[0, 1],
        features="hashed:d=256",
        training={"max_epochs": 6, "patience": 2},
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestRunExperiment:
    def test_grid_produces_aggregates(self, synthetic_corpus):
        cfg = experiment_config(synthetic_corpus)
        report = run_experiment(cfg)
        ok = [c for c in report["cells"] if c["status"] == "ok"]
        assert len(ok) == 2 * 2 * 2  # points x detectors x seeds
        for agg in report["aggregates"]:
            assert agg["n_seeds"] == 2
            assert set(agg["mean"]) == set(agg["std"])
            assert "nsd_token_f1" in agg["mean"]

    def test_failing_cells_recorded_not_fatal(self, synthetic_corpus):
        cfg = experiment_config(
            synthetic_corpus,
            proportions=[],
            unknown_sets=[["color", "animal", "number", "place"]],
            strategies=["remove"],
        )
        report = run_experiment(cfg)
        errors = [c for c in report["cells"] if c["status"] == "error"]
        assert errors and all("AllTrainRemoved" in c["error"] for c in errors)
        for agg in report["aggregates"]:
            assert agg["n_seeds"] == 0
            assert "mean" not in agg
            assert agg["failures"]

    def test_seed_list_validation(self, synthetic_corpus):
        with pytest.raises(ValueError):
            experiment_config(synthetic_corpus, seeds=[])

    def test_missing_corpus_file(self, synthetic_corpus):
        bad = {k: str(v) for k, v in synthetic_corpus.items()}
        bad["train"] = "/nonexistent/file.conll"
        with pytest.raises(FileNotFoundError):
            experiment_config(synthetic_corpus, corpus=bad)


class TestRunCommand:
    def test_run_writes_report_and_is_deterministic(self, synthetic_corpus, tmp_path, capsys):
        config = {
            "corpus": {k: str(v) for k, v in synthetic_corpus.items()},
            "proportions": [0.3],
            "strategies": ["remove"],
            "detectors": [{"method": "gda", "objective": "multiple", "distance": "minimum"}],
            "seeds": [0, 1],
            "features": "hashed:d=256",
            "training": {"max_epochs": 5, "patience": 2},
        }
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps(config))

        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert run_cli("run", "--config", cfg_path, "--out", out1) == 0
        assert run_cli("run", "--config", cfg_path, "--out", out2) == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        assert (out1 / "report.csv").exists()

        # refuses to overwrite without --force
        assert run_cli("run", "--config", cfg_path, "--out", out1) == 1
        assert run_cli("run", "--config", cfg_path, "--out", out1, "--force") == 0
        capsys.readouterr()


class TestFeatureSourceRestriction:
    def test_run_rejects_file_features(self, synthetic_corpus):
        with pytest.raises(ValueError, match="hashed features"):
            experiment_config(synthetic_corpus, features="file:/tmp/embs")


class TestSingleSeedAggregation:
    def test_mean_equals_single_run_std_zero(self, synthetic_corpus):
        cfg = experiment_config(
            synthetic_corpus,
            seeds=[7],
            strategies=["remove"],
            detectors=[{"method": "gda", "objective": "multiple", "distance": "minimum"}],
        )
        report = run_experiment(cfg)
        cells = [c for c in report["cells"] if c["status"] == "ok"]
        assert len(cells) == 1
        [agg] = report["aggregates"]
        assert agg["n_seeds"] == 1
        assert agg["mean"] == cells[0]["metrics"]
        assert all(v == 0.0 for v in agg["std"].values())


class TestRunOverrides:
    def test_cli_flags_override_config(self, synthetic_corpus, tmp_path, capsys):
        config = {
            "corpus": {k: str(v) for k, v in synthetic_corpus.items()},
            "proportions": [0.3],
            "strategies": ["remove", "replace"],
            "detectors": [{"method": "gda", "objective": "multiple", "distance": "minimum"}],
            "seeds": [0, 1, 2],
            "features": "hashed:d=256",
            "training": {"max_epochs": 5, "patience": 2},
        }
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "out"
        rc = run_cli(
            "run", "--config", cfg_path, "--out", out,
            "--seeds", "5", "--strategies", "remove", "--max-epochs", 3,
        )
        assert rc == 0
        capsys.readouterr()
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["seeds"] == [5]
        assert report["config"]["strategies"] == ["remove"]
        assert report["config"]["training"]["max_epochs"] == 3
        assert len([c for c in report["cells"] if c["status"] == "ok"]) == 1
