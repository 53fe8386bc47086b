"""Experiment orchestration: protocols, deterministic seeding, report emission.

Both benchmark protocols share one shape: split training data into folds,
run the two techniques on identical fold-train subsets (paired comparison),
collect per-point vote histograms on a fixed test set, and aggregate
envelope reports across folds with 2-sigma half-widths.  All randomness
derives from the experiment seed, so reports are byte-identical across
reruns and across serial/parallel execution.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, envelope, forest, mcmc, synth
from .data import Dataset, DataError, load_csv, make_folds, split_holdout_count
from .tree import format_feature_path, write_tree_file


class ConfigError(Exception):
    """Invalid experiment configuration."""


REPORT_SCHEMA_VERSION = 1

# name -> (classes, features, train rows, test rows); a local <name>.csv in
# the data directory is required, datasets without one are skipped
UCI_TABLE = {
    "ionosphere": (2, 33, 200, 151),
    "wisconsin": (2, 9, 455, 228),
    "image": (7, 19, 210, 2100),
    "votes": (2, 16, 391, 44),
    "sonar": (2, 60, 138, 70),
    "vehicle": (4, 18, 564, 282),
    "pima": (2, 8, 512, 256),
}

# pruning factor rule: large training sets get 30, small ones 5
PMIN_LARGE_TRAIN_THRESHOLD = 400


def pruning_factor(train_size: int, threshold: int = PMIN_LARGE_TRAIN_THRESHOLD) -> int:
    return 30 if train_size > threshold else 5


def desk_mcmc_config(seed: int = 0, **overrides) -> mcmc.McmcConfig:
    """Reduced protocol: 10 restarts x (500 burn-in + 500 post burn-in)."""
    base = dict(restarts=10, burn_in=500, post_burn_in=500, sample_rate=1, seed=seed)
    base.update(overrides)
    return mcmc.McmcConfig(**base)


def paper_scale_mcmc_config(seed: int = 0, **overrides) -> mcmc.McmcConfig:
    """Full protocol: 50 restarts x (2000 + 2000), sample rate 1."""
    base = dict(restarts=50, burn_in=2000, post_burn_in=2000, sample_rate=1, seed=seed)
    base.update(overrides)
    return mcmc.McmcConfig(**base)


@dataclass(frozen=True)
class ExperimentConfig:
    technique: str = "both"  # bayes | forest | both
    mcmc: mcmc.McmcConfig = field(default_factory=desk_mcmc_config)
    forest: forest.ForestConfig = field(default_factory=forest.ForestConfig)
    fold_count: int = 5
    confidence: float = 0.99
    seed: int = synth.CANONICAL_SEED
    out_dir: Path = Path("runs")
    sweep: bool = False
    train_size: int = synth.CANONICAL_TRAIN_SIZE
    test_size: int = synth.CANONICAL_TEST_SIZE
    data_dir: Path | None = None
    datasets: tuple[str, ...] = tuple(UCI_TABLE)
    workers: int = 1

    def __post_init__(self):
        if self.technique not in ("bayes", "forest", "both"):
            raise ConfigError(f"technique must be bayes/forest/both, got {self.technique!r}")
        if self.fold_count < 2:
            raise ConfigError("fold_count must be at least 2")
        if not 0.0 < self.confidence <= 1.0:
            raise ConfigError("confidence must lie in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for name in ("out_dir", "data_dir"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, Path):
                object.__setattr__(self, name, Path(value))
        unknown = [d for d in self.datasets if d not in UCI_TABLE]
        if unknown:
            raise ConfigError(f"unknown dataset names: {unknown} (known: {sorted(UCI_TABLE)})")


@dataclass
class RunManifest:
    config: dict
    artifacts: dict
    tool_version: str
    stage_seconds: dict

    def write(self, path: Path) -> None:
        payload = {
            "config": self.config,
            "artifacts": self.artifacts,
            "tool_version": self.tool_version,
            "stage_seconds": self.stage_seconds,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config_snapshot(cfg: ExperimentConfig, protocol: str) -> dict:
    snap = dataclasses.asdict(cfg)
    snap["mcmc"]["split_prior"] = type(cfg.mcmc.split_prior).__name__
    if isinstance(cfg.mcmc.split_prior, mcmc.DepthPenaltySplitPrior):
        snap["mcmc"]["split_prior"] = {
            "kind": "depth_penalty",
            "base": cfg.mcmc.split_prior.base,
            "decay": cfg.mcmc.split_prior.decay,
        }
    snap["out_dir"] = str(cfg.out_dir)
    snap["data_dir"] = None if cfg.data_dir is None else str(cfg.data_dir)
    snap["protocol"] = protocol
    return snap


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".10g")


def _write_csv(path: Path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (int, str)) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _report_dict(rep: envelope.EnvelopeReport) -> dict:
    return {
        "accuracy": rep.accuracy,
        "cc_rate": rep.cc_rate,
        "u_rate": rep.u_rate,
        "ci_rate": rep.ci_rate,
        "tree_size_mean": rep.tree_size_mean,
        "tree_size_std": rep.tree_size_std,
    }


def _summary_dict(summary: envelope.EnvelopeSummary) -> dict:
    return {
        "mean": _report_dict(summary.mean),
        "width2": _report_dict(summary.width2),
        "fold_count": summary.count,
    }


# ---------------------------------------------------------------------------
# Per-fold technique runners
# ---------------------------------------------------------------------------


@dataclass
class FoldOutcome:
    votes: envelope.VoteMatrix
    report: envelope.EnvelopeReport
    soft_accuracy: float
    sweep_curve: envelope.SweepCurve | None
    extras: dict


def _derive_seed(*parts: int) -> int:
    mixed = np.random.SeedSequence(tuple(parts)).generate_state(1, dtype=np.uint64)[0]
    return int(mixed >> 1)  # keep it a non-negative int64-safe seed


def run_bayes_fold(
    train_ds: Dataset,
    test_X: np.ndarray,
    test_y: np.ndarray,
    cfg: ExperimentConfig,
    fold: int,
    do_sweep: bool = False,
) -> FoldOutcome:
    mcfg = dataclasses.replace(cfg.mcmc, seed=_derive_seed(cfg.seed, 1, fold))
    result = mcmc.run_restarts(train_ds, mcfg, workers=cfg.workers)
    pred = mcmc.predict_average(result.samples, test_X, mcfg.dirichlet_alpha)
    vm = envelope.VoteMatrix.build(pred.votes, test_y)
    sizes = np.array([s.tree.split_count for s in result.samples])
    report = dataclasses.replace(
        envelope.evaluate(vm, cfg.confidence),
        tree_size_mean=float(sizes.mean()),
        tree_size_std=float(sizes.std(ddof=1)) if len(sizes) > 1 else 0.0,
    )
    post_ll = [r.log_lik for r in result.trace if r.phase == "post"]
    extras = {
        "acceptance_rate": result.counters.acceptance_rate,
        "post_log_lik_mean": float(np.mean(post_ll)),
        "sample_count": len(result.samples),
        "warnings": list(result.warnings),
        "mcmc_result": result,
    }
    soft = float(np.mean(np.argmax(pred.probabilities, axis=1) == test_y))
    curve = envelope.sweep(vm) if do_sweep else None
    return FoldOutcome(votes=vm, report=report, soft_accuracy=soft, sweep_curve=curve, extras=extras)


def run_forest_fold(
    full_ds: Dataset,
    train_rows: np.ndarray,
    test_X: np.ndarray,
    test_y: np.ndarray,
    cfg: ExperimentConfig,
    fold: int,
    do_sweep: bool = False,
) -> FoldOutcome:
    fcfg = dataclasses.replace(cfg.forest, seed=_derive_seed(cfg.seed, 2, fold))
    built, trace = forest.build_forest(
        full_ds, train_rows, test_X, test_y, fcfg, alpha=1.0, workers=cfg.workers
    )
    votes = forest.forest_votes(built, test_X, 1.0)
    vm = envelope.VoteMatrix.build(votes, test_y)
    sizes = np.array([t.split_count for t in built.trees])
    report = dataclasses.replace(
        envelope.evaluate(vm, cfg.confidence),
        tree_size_mean=float(sizes.mean()),
        tree_size_std=float(sizes.std(ddof=1)) if len(sizes) > 1 else 0.0,
    )
    soft = float(
        np.mean(np.argmax(forest.forest_predictive(built, test_X, 1.0), axis=1) == test_y)
    )
    extras = {
        "ensemble_acc_final": float(trace.ensemble_acc[-1]),
        "best_validation_acc": trace.best_validation_acc,
        "forest": built,
        "trace": trace,
    }
    curve = envelope.sweep(vm) if do_sweep else None
    return FoldOutcome(votes=vm, report=report, soft_accuracy=soft, sweep_curve=curve, extras=extras)


def _paired_fold_runs(
    train_ds: Dataset,
    test_X: np.ndarray,
    test_y: np.ndarray,
    cfg: ExperimentConfig,
) -> dict[str, list[FoldOutcome]]:
    """Run the requested techniques on identical fold splits of train_ds."""
    folds = make_folds(train_ds, cfg.fold_count, seed=cfg.seed)
    out: dict[str, list[FoldOutcome]] = {}
    for fold in range(cfg.fold_count):
        rows = folds.train_indices(fold)
        if cfg.technique in ("bayes", "both"):
            sub = train_ds.subset(rows)
            out.setdefault("bayes", []).append(
                run_bayes_fold(sub, test_X, test_y, cfg, fold, do_sweep=cfg.sweep)
            )
        if cfg.technique in ("forest", "both"):
            out.setdefault("forest", []).append(
                run_forest_fold(train_ds, rows, test_X, test_y, cfg, fold, do_sweep=cfg.sweep)
            )
    return out


def _emit_technique_artifacts(
    out_dir: Path, tag: str, outcomes: list[FoldOutcome], artifacts: dict
) -> dict:
    """Write per-fold votes plus aggregated envelope/sweep; return summary JSON part."""
    per_fold = []
    for i, oc in enumerate(outcomes):
        votes_path = out_dir / f"{tag}_fold{i}_votes.csv"
        envelope.write_votes_csv(oc.votes, votes_path)
        artifacts.setdefault(tag, {}).setdefault("votes", []).append(str(votes_path.name))
        per_fold.append(_report_dict(oc.report) | {"soft_accuracy": oc.soft_accuracy})
    summary = envelope.aggregate([oc.report for oc in outcomes])
    part = {"per_fold": per_fold, "summary": _summary_dict(summary)}
    if outcomes[0].sweep_curve is not None:
        agg = envelope.aggregate_sweeps([oc.sweep_curve for oc in outcomes])
        sweep_path = out_dir / f"{tag}_sweep.csv"
        _write_csv(
            sweep_path,
            ["gamma0", "u_mean", "u_2sigma", "ci_mean", "ci_2sigma"],
            zip(agg.thresholds, agg.u_mean, agg.u_width2, agg.ci_mean, agg.ci_width2),
        )
        artifacts[tag]["sweep"] = str(sweep_path.name)
    return part


def _emit_bayes_diagnostics(
    out_dir: Path, tag: str, outcome: FoldOutcome, artifacts: dict, feature_count: int
) -> None:
    """Trace CSV, path-summary CSV, and a posterior-sample dump for one run."""
    result: mcmc.ChainResult = outcome.extras["mcmc_result"]
    trace_path = out_dir / f"{tag}_trace.csv"
    _write_csv(
        trace_path,
        ["run", "iteration", "phase", "log_lik", "split_count", "move", "accepted"],
        (
            (r.run_index, r.iteration, r.phase, r.log_lik, r.split_count, r.move, int(r.accepted))
            for r in result.trace
        ),
    )
    rows, histogram = mcmc.posterior_path_summary(result.samples)
    path_path = out_dir / f"{tag}_paths.csv"
    _write_csv(
        path_path,
        ["path", "split_count", "weight", "count"],
        (
            (format_feature_path(r.feature_path, feature_count), r.split_count, r.weight, r.count)
            for r in rows
        ),
    )
    hist_path = out_dir / f"{tag}_size_histogram.csv"
    _write_csv(hist_path, ["split_count", "count"], histogram.items())
    samples_path = out_dir / f"{tag}_samples.txt"
    thin = max(1, len(result.samples) // 200)
    kept = result.samples[::thin]
    write_tree_file(
        samples_path,
        [s.tree for s in kept],
        [{"run": s.run_index, "iteration": s.iteration} for s in kept],
    )
    artifacts[f"{tag}_diagnostics"] = {
        "trace": trace_path.name,
        "paths": path_path.name,
        "size_histogram": hist_path.name,
        "samples": samples_path.name,
    }


def _emit_forest_diagnostics(out_dir: Path, tag: str, outcome: FoldOutcome, artifacts: dict) -> None:
    trace: forest.ConvergenceTrace = outcome.extras["trace"]
    built: forest.Forest = outcome.extras["forest"]
    conv_path = out_dir / f"{tag}_convergence.csv"
    _write_csv(
        conv_path,
        ["t", "ensemble_acc", "single_acc"],
        ((t + 1, pe, ps) for t, (pe, ps) in enumerate(zip(trace.ensemble_acc, trace.single_acc))),
    )
    sizes = {}
    for t in built.trees:
        sizes[t.split_count] = sizes.get(t.split_count, 0) + 1
    hist_path = out_dir / f"{tag}_size_histogram.csv"
    _write_csv(hist_path, ["split_count", "count"], sorted(sizes.items()))
    forest_path = out_dir / f"{tag}_forest.txt"
    write_tree_file(
        forest_path,
        built.trees,
        [{"index": i, "validation_acc": _fmt(a)} for i, a in enumerate(built.validation_acc)],
    )
    artifacts[f"{tag}_diagnostics"] = {
        "convergence": conv_path.name,
        "size_histogram": hist_path.name,
        "forest": forest_path.name,
    }


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------


def run_synthetic_protocol(cfg: ExperimentConfig) -> RunManifest:
    """Canonical mixture benchmark: paired fold runs plus full-train headline runs."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage_seconds: dict[str, float] = {}
    artifacts: dict = {}

    t0 = time.perf_counter()
    train_ds, test_ds = synth.canonical_datasets(
        seed=cfg.seed, train_size=cfg.train_size, test_size=cfg.test_size
    )
    from .data import write_csv as write_dataset_csv

    write_dataset_csv(train_ds, out_dir / "synthetic_train.csv")
    write_dataset_csv(test_ds, out_dir / "synthetic_test.csv")
    artifacts["data"] = {"train": "synthetic_train.csv", "test": "synthetic_test.csv"}
    stage_seconds["data"] = time.perf_counter() - t0

    report: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "protocol": "synthetic",
        "confidence": cfg.confidence,
        "seed": cfg.seed,
        "techniques": {},
    }

    test_X, test_y = test_ds.features, test_ds.labels
    headline: dict[str, FoldOutcome] = {}
    t0 = time.perf_counter()
    if cfg.technique in ("bayes", "both"):
        headline["bayes"] = run_bayes_fold(train_ds, test_X, test_y, cfg, fold=cfg.fold_count)
        _emit_bayes_diagnostics(
            out_dir, "bayes_full", headline["bayes"], artifacts, train_ds.feature_count
        )
    if cfg.technique in ("forest", "both"):
        headline["forest"] = run_forest_fold(
            train_ds, np.arange(train_ds.row_count), test_X, test_y, cfg, fold=cfg.fold_count
        )
        _emit_forest_diagnostics(out_dir, "forest_full", headline["forest"], artifacts)
    stage_seconds["headline"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    fold_outcomes = _paired_fold_runs(train_ds, test_X, test_y, cfg)
    stage_seconds["folds"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for tag, outcomes in fold_outcomes.items():
        part = _emit_technique_artifacts(out_dir, tag, outcomes, artifacts)
        hl = headline[tag]
        part["full_train"] = _report_dict(hl.report) | {"soft_accuracy": hl.soft_accuracy}
        part["full_train_extras"] = {
            k: v
            for k, v in hl.extras.items()
            if isinstance(v, (int, float, str, list))
        }
        report["techniques"][tag] = part

    if len(report["techniques"]) == 2:
        b = report["techniques"]["bayes"]["summary"]["mean"]["tree_size_mean"]
        f = report["techniques"]["forest"]["summary"]["mean"]["tree_size_mean"]
        report["size_comparison"] = {
            "bayes_mean_splits": b,
            "forest_mean_splits": f,
            "ratio": b / f,
        }
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts["report"] = "report.json"
    stage_seconds["emit"] = time.perf_counter() - t0

    manifest = RunManifest(
        config=_config_snapshot(cfg, "synthetic"),
        artifacts=artifacts,
        tool_version=__version__,
        stage_seconds=stage_seconds,
    )
    manifest.write(out_dir / "manifest.json")
    return manifest


def _uci_split(ds: Dataset, name: str, cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Honor the registry train/test sizes with a deterministic stratified split."""
    _, _, train_size, test_size = UCI_TABLE[name]
    total = train_size + test_size
    if ds.row_count < total:
        raise DataError(
            f"{name}: need {total} rows for the {train_size}/{test_size} split, found {ds.row_count}"
        )
    indices = np.arange(ds.row_count)
    if ds.row_count > total:
        keep = split_holdout_count(indices, ds.labels, total, seed=_derive_seed(cfg.seed, 3))
        indices = keep.holdout
    pair = split_holdout_count(indices, ds.labels, test_size, seed=_derive_seed(cfg.seed, 4))
    return ds.subset(pair.train), ds.subset(pair.holdout)


def run_uci_protocol(cfg: ExperimentConfig) -> RunManifest:
    """Per-dataset fold comparison on local CSV copies; missing files are skipped."""
    if cfg.data_dir is None:
        raise ConfigError("uci protocol needs a data directory")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage_seconds: dict[str, float] = {}
    artifacts: dict = {}
    report: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "protocol": "uci",
        "confidence": cfg.confidence,
        "seed": cfg.seed,
        "datasets": {},
    }

    table_rows = []
    for name in cfg.datasets:
        t0 = time.perf_counter()
        path = Path(cfg.data_dir) / f"{name}.csv"
        if not path.exists():
            report["datasets"][name] = {"status": "skipped", "reason": f"missing file {path.name}"}
            continue
        ds = load_csv(path)
        expected_c, expected_m, train_size, _ = UCI_TABLE[name]
        if ds.class_count != expected_c:
            raise DataError(
                f"{name}: expected {expected_c} classes, found {ds.class_count}"
            )
        notes = []
        if ds.feature_count != expected_m:
            notes.append(f"expected {expected_m} features, found {ds.feature_count}")

        train_ds, test_ds = _uci_split(ds, name, cfg)
        p_min = pruning_factor(train_size)
        ds_cfg = dataclasses.replace(
            cfg,
            mcmc=dataclasses.replace(cfg.mcmc, min_leaf_rows=p_min),
            forest=dataclasses.replace(cfg.forest, min_leaf_rows=p_min),
        )
        fold_outcomes = _paired_fold_runs(train_ds, test_ds.features, test_ds.labels, ds_cfg)
        ds_out = out_dir / name
        ds_out.mkdir(exist_ok=True)
        entry: dict = {
            "status": "ok",
            "notes": notes,
            "pruning_factor": p_min,
            "train_rows": train_ds.row_count,
            "test_rows": test_ds.row_count,
            "techniques": {},
        }
        ds_artifacts: dict = {}
        for tag, outcomes in fold_outcomes.items():
            entry["techniques"][tag] = _emit_technique_artifacts(ds_out, tag, outcomes, ds_artifacts)
            mean = entry["techniques"][tag]["summary"]["mean"]
            width = entry["techniques"][tag]["summary"]["width2"]
            table_rows.append(
                (
                    name,
                    tag,
                    mean["tree_size_mean"],
                    width["tree_size_mean"],
                    mean["accuracy"],
                    width["accuracy"],
                    mean["cc_rate"],
                    width["cc_rate"],
                    mean["u_rate"],
                    width["u_rate"],
                    mean["ci_rate"],
                    width["ci_rate"],
                )
            )
        artifacts[name] = ds_artifacts
        report["datasets"][name] = entry
        stage_seconds[name] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _write_csv(
        out_dir / "uci_table.csv",
        [
            "dataset",
            "technique",
            "size_mean",
            "size_2sigma",
            "accuracy_mean",
            "accuracy_2sigma",
            "cc_mean",
            "cc_2sigma",
            "u_mean",
            "u_2sigma",
            "ci_mean",
            "ci_2sigma",
        ],
        table_rows,
    )
    artifacts["table"] = "uci_table.csv"
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts["report"] = "report.json"
    stage_seconds["emit"] = time.perf_counter() - t0

    manifest = RunManifest(
        config=_config_snapshot(cfg, "uci"),
        artifacts=artifacts,
        tool_version=__version__,
        stage_seconds=stage_seconds,
    )
    manifest.write(out_dir / "manifest.json")
    return manifest
