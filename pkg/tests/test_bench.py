import json
from pathlib import Path

import numpy as np
import pytest

from treeuq import bench, cli, forest, mcmc
from treeuq.bench import ConfigError, ExperimentConfig, pruning_factor
from treeuq.data import Dataset, DataError, write_csv


def tiny_config(out_dir, **overrides) -> ExperimentConfig:
    base = dict(
        mcmc=mcmc.McmcConfig(burn_in=60, post_burn_in=60, restarts=2, min_leaf_rows=3, seed=0),
        forest=forest.ForestConfig(tree_count=10, min_leaf_rows=3, seed=0),
        fold_count=3,
        seed=7,
        out_dir=out_dir,
        train_size=80,
        test_size=60,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def non_manifest_files(out_dir):
    return sorted(
        p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json"
    )


class TestConfigValidation:
    def test_bad_technique(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny_config(tmp_path, technique="nope")

    def test_bad_confidence(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny_config(tmp_path, confidence=1.5)

    def test_bad_fold_count(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny_config(tmp_path, fold_count=1)

    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown dataset"):
            tiny_config(tmp_path, datasets=("nonexistent",))

    def test_pruning_factor_rule(self):
        assert pruning_factor(138) == 5  # sonar-sized
        assert pruning_factor(455) == 30  # wisconsin-sized
        assert pruning_factor(400) == 5
        assert pruning_factor(401) == 30


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth_run")
    manifest = bench.run_synthetic_protocol(tiny_config(out, sweep=True))
    report = json.loads((out / "report.json").read_text())
    return out, manifest, report


@pytest.fixture(scope="module")
def uci_data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("uci_data")
    rng = np.random.default_rng(1)
    n = 208  # sonar-sized: split 138/70
    X = rng.normal(size=(n, 60))
    y = (X[:, 0] + 0.4 * rng.normal(size=n) > 0).astype(int)
    write_csv(Dataset(X, y, 2, tuple(f"a{i}" for i in range(60))), root / "sonar.csv")
    return root


@pytest.fixture(scope="module")
def uci_run(uci_data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("uci_run")
    cfg = tiny_config(out, data_dir=uci_data_dir, datasets=("sonar", "pima"))
    manifest = bench.run_uci_protocol(cfg)
    report = json.loads((out / "report.json").read_text())
    return out, manifest, report


class TestSyntheticProtocol:
    @pytest.fixture
    def run(self, synthetic_run):
        return synthetic_run

    def test_report_structure(self, run):
        _, _, report = run
        assert set(report["techniques"]) == {"bayes", "forest"}
        for part in report["techniques"].values():
            assert len(part["per_fold"]) == 3
            for fold in part["per_fold"]:
                total = fold["cc_rate"] + fold["u_rate"] + fold["ci_rate"]
                assert total == pytest.approx(1.0, abs=1e-12)
            for value in part["summary"]["width2"].values():
                if value is not None:
                    assert value >= 0.0

    def test_size_comparison_present(self, run):
        _, _, report = run
        comp = report["size_comparison"]
        assert comp["ratio"] == pytest.approx(
            comp["bayes_mean_splits"] / comp["forest_mean_splits"]
        )

    def test_sweep_csvs_have_101_rows(self, run):
        out, _, _ = run
        for tag in ("bayes", "forest"):
            lines = (out / f"{tag}_sweep.csv").read_text().splitlines()
            assert len(lines) == 102  # header + grid

    def test_artifacts_exist(self, run):
        out, manifest, _ = run
        for name in (
            "synthetic_train.csv",
            "synthetic_test.csv",
            "bayes_full_trace.csv",
            "bayes_full_paths.csv",
            "bayes_full_samples.txt",
            "forest_full_convergence.csv",
            "forest_full_forest.txt",
        ):
            assert (out / name).exists(), name
        assert manifest.stage_seconds.keys() >= {"data", "headline", "folds", "emit"}

    def test_trace_csv_columns(self, run):
        out, _, _ = run
        header = (out / "bayes_full_trace.csv").read_text().splitlines()[0]
        assert header == "run,iteration,phase,log_lik,split_count,move,accepted"

    def test_byte_determinism(self, run, tmp_path):
        out, _, _ = run
        again = tmp_path / "again"
        bench.run_synthetic_protocol(tiny_config(again, sweep=True))
        ours = non_manifest_files(out)
        theirs = non_manifest_files(again)
        assert [p.name for p in ours] == [p.name for p in theirs]
        for a, b in zip(ours, theirs):
            assert a.read_bytes() == b.read_bytes(), a.name

    def test_manifest_rerun_identical(self, run, tmp_path):
        out, _, _ = run
        rerun = tmp_path / "rerun"
        rc = cli.main(
            ["bench", "synthetic", "--manifest", str(out / "manifest.json"), "--out", str(rerun)]
        )
        assert rc == 0
        assert (rerun / "report.json").read_bytes() == (out / "report.json").read_bytes()


class TestUciProtocol:
    @pytest.fixture
    def run(self, uci_run):
        return uci_run

    def test_missing_dataset_skipped_with_notice(self, run):
        _, _, report = run
        assert report["datasets"]["pima"]["status"] == "skipped"
        assert "pima.csv" in report["datasets"]["pima"]["reason"]

    def test_split_sizes_honored(self, run):
        _, _, report = run
        entry = report["datasets"]["sonar"]
        assert (entry["train_rows"], entry["test_rows"]) == (138, 70)
        assert entry["pruning_factor"] == 5

    def test_table_csv_written(self, run):
        out, _, _ = run
        lines = (out / "uci_table.csv").read_text().splitlines()
        assert lines[0].startswith("dataset,technique,size_mean")
        assert len(lines) == 3  # header + sonar x two techniques

    def test_data_dir_required(self, tmp_path):
        with pytest.raises(ConfigError):
            bench.run_uci_protocol(tiny_config(tmp_path, data_dir=None))

    def test_class_count_mismatch_rejected(self, tmp_path):
        root = tmp_path / "data"
        root.mkdir()
        rng = np.random.default_rng(0)
        X = rng.normal(size=(208, 60))
        y = rng.integers(0, 3, size=208)
        write_csv(Dataset(X, y, 3, tuple(f"a{i}" for i in range(60))), root / "sonar.csv")
        cfg = tiny_config(tmp_path / "out", data_dir=root, datasets=("sonar",))
        with pytest.raises(DataError, match="expected 2 classes"):
            bench.run_uci_protocol(cfg)

    def test_too_few_rows_rejected(self, tmp_path):
        root = tmp_path / "data"
        root.mkdir()
        rng = np.random.default_rng(0)
        X = rng.normal(size=(100, 60))
        y = (X[:, 0] > 0).astype(int)
        write_csv(Dataset(X, y, 2, tuple(f"a{i}" for i in range(60))), root / "sonar.csv")
        cfg = tiny_config(tmp_path / "out", data_dir=root, datasets=("sonar",))
        with pytest.raises(DataError, match="need 208 rows"):
            bench.run_uci_protocol(cfg)

    def test_pima_shaped_split_sizes(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(768, 8))
        y = (X[:, 0] > 0).astype(int)
        ds = Dataset(X, y, 2, tuple(f"a{i}" for i in range(8)))
        cfg = ExperimentConfig(seed=3, out_dir=Path("unused"))
        train_ds, test_ds = bench._uci_split(ds, "pima", cfg)
        assert (train_ds.row_count, test_ds.row_count) == (512, 256)
        assert bench.pruning_factor(512) == 30

    def test_oversized_file_subsampled(self, tmp_path):
        root = tmp_path / "data"
        root.mkdir()
        rng = np.random.default_rng(4)
        X = rng.normal(size=(300, 60))  # sonar registry wants 138 + 70 = 208
        y = (X[:, 0] > 0).astype(int)
        write_csv(Dataset(X, y, 2, tuple(f"a{i}" for i in range(60))), root / "sonar.csv")
        cfg = tiny_config(tmp_path / "out", data_dir=root, datasets=("sonar",))
        bench.run_uci_protocol(cfg)
        entry = json.loads((tmp_path / "out" / "report.json").read_text())["datasets"]["sonar"]
        assert (entry["train_rows"], entry["test_rows"]) == (138, 70)


class TestCli:
    def test_synth_roundtrip(self, tmp_path):
        rc = cli.main(
            ["synth", "--out", str(tmp_path), "--train-size", "30", "--test-size", "20", "--seed", "3"]
        )
        assert rc == 0
        from treeuq.data import load_csv

        ds = load_csv(tmp_path / "synthetic_train.csv")
        assert ds.row_count == 30

    def test_missing_train_file_is_data_error(self, tmp_path):
        rc = cli.main(["bayes", "--train", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
        assert rc == 3

    def test_bad_move_probs_is_config_error(self, tmp_path):
        cli.main(["synth", "--out", str(tmp_path), "--train-size", "30", "--test-size", "20"])
        rc = cli.main(
            [
                "bayes",
                "--train",
                str(tmp_path / "synthetic_train.csv"),
                "--out",
                str(tmp_path),
                "--move-probs",
                "0.5,0.5,0.5,0.5",
            ]
        )
        assert rc == 2

    def test_bad_sweep_grid_is_config_error(self, tmp_path):
        votes = tmp_path / "votes.csv"
        votes.write_text("target,vote_0,vote_1\n0,5,0\n")
        rc = cli.main(["sweep", "--votes", str(votes), "--start", "0.99", "--stop", "0.9", "--out", str(tmp_path)])
        assert rc == 2

    def test_missing_votes_is_data_error(self, tmp_path):
        rc = cli.main(["envelope", "--votes", str(tmp_path / "missing.csv"), "--out", str(tmp_path)])
        assert rc == 3

    def test_envelope_report_written(self, tmp_path):
        votes = tmp_path / "votes.csv"
        votes.write_text("target,vote_0,vote_1\n0,9,1\n1,0,10\n")
        rc = cli.main(["envelope", "--votes", str(votes), "--out", str(tmp_path)])
        assert rc == 0
        payload = json.loads((tmp_path / "envelope_report.json").read_text())
        assert payload["per_input"][0]["accuracy"] == 1.0

    def test_config_file_with_flag_override(self, tmp_path):
        config = tmp_path / "bench.cfg"
        config.write_text("fold_count=3\ntrain_size=60\ntest_size=40\nrestarts=2\nburn_in=50\npost_burn_in=50\ntree_count=8\nmin_leaf_rows=3\nseed=5\n")
        out = tmp_path / "out"
        rc = cli.main(
            ["bench", "synthetic", "--config", str(config), "--out", str(out), "--technique", "forest"]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert list(report["techniques"]) == ["forest"]  # flag overrode nothing explicit
        assert len(report["techniques"]["forest"]["per_fold"]) == 3  # from file

    def test_config_file_unknown_key(self, tmp_path):
        config = tmp_path / "bench.cfg"
        config.write_text("not_a_key=1\n")
        rc = cli.main(["bench", "synthetic", "--config", str(config), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_env_var_default_out(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TREEUQ_OUT", str(tmp_path / "envout"))
        parser = cli.build_parser()
        args = parser.parse_args(["synth"])
        assert args.out == str(tmp_path / "envout")
