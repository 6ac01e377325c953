"""Experiment grid runner: direct-target, fine-tune, and adversarial
regimes across backbones, depths, and seeds, with per-cell metrics files
and median summary tables."""

import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median

import numpy as np

from .data import SimulatorConfig, fit_normalizer, make_domain_datasets, normalize_windows
from .layers import param_count
from .model import DANNModel, ModelConfig, RegressionModel
from .metrics import evaluate_model
from .training import (TrainingConfig, detect_convergence, pretrain_finetune,
                       train_dann, train_direct)

REGIMES = ("direct", "finetune", "dann")
BACKBONES = ("mlp", "lstm", "tcn")


@dataclass(frozen=True)
class CellSpec:
    regime: str
    backbone: str
    depth: int
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.regime}-{self.backbone}-{self.depth}-s{self.seed}"


@dataclass
class ExperimentSpec:
    regimes: tuple = REGIMES
    backbones: tuple = BACKBONES
    depths: tuple = (1, 2, 4)
    seeds: tuple = (0, 1, 2)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    data_seed: int = 0
    n_source_seasons: int = 400
    n_target_windows: int = 46
    sigma_link: str = "softplus"
    dropout: float = 0.0

    def cells(self):
        """DANN applies to lstm/tcn only; the MLP has a fixed depth."""
        out = []
        for regime in self.regimes:
            for backbone in self.backbones:
                if regime == "dann" and backbone == "mlp":
                    continue
                depths = (1,) if backbone == "mlp" else self.depths
                for depth in depths:
                    for seed in self.seeds:
                        out.append(CellSpec(regime, backbone, depth, seed))
        return out


def build_datasets(spec: ExperimentSpec):
    source, target_train, target_test = make_domain_datasets(
        spec.simulator, seed=spec.data_seed,
        n_source_seasons=spec.n_source_seasons,
        n_target_windows=spec.n_target_windows)
    stats = fit_normalizer(source)
    return (normalize_windows(stats, source),
            normalize_windows(stats, target_train),
            normalize_windows(stats, target_test), stats)


def run_cell(cell: CellSpec, datasets, spec: ExperimentSpec):
    source, target_train, target_test, stats = datasets
    cfg = ModelConfig(backbone=cell.backbone, depth=cell.depth,
                      sigma_link=spec.sigma_link, dropout=spec.dropout,
                      seed=cell.seed)
    tcfg = TrainingConfig(**{**spec.training.to_dict(), "seed": cell.seed})
    if cell.regime == "dann":
        model = DANNModel(cfg)
        model, log = train_dann(model, source, target_train, target_test, tcfg,
                                stats=stats)
    elif cell.regime == "finetune":
        model = RegressionModel(cfg)
        model, log = pretrain_finetune(model, source, target_train, target_test,
                                       tcfg, stats=stats)
    else:
        model = RegressionModel(cfg)
        model, log = train_direct(model, target_train, target_test, tcfg, stats=stats)

    xt = [w.features for w in target_test]
    yt = [w.labels for w in target_test]
    report = evaluate_model(model, np.stack(xt), np.stack(yt), stats=stats)
    return {
        "cell_id": cell.cell_id, "regime": cell.regime, "backbone": cell.backbone,
        "depth": cell.depth, "seed": cell.seed,
        "mae": report["mae"], "rmse": report["rmse"], "nll": report["nll"],
        "param_count": param_count(model),
        "convergence_epoch": detect_convergence(log, window=tcfg.convergence_window,
                                                tol=tcfg.convergence_tol),
        "log": [r.to_dict() for r in log],
    }


def _worker(args):
    cell, datasets, spec = args
    return run_cell(cell, datasets, spec)


def _write_cell_files(out_dir: Path, result: dict):
    cell_dir = out_dir / "cells" / result["cell_id"]
    cell_dir.mkdir(parents=True, exist_ok=True)
    with open(cell_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for row in result["log"]:
            fh.write(json.dumps(row) + "\n")
    summary = {k: v for k, v in result.items() if k != "log"}
    with open(cell_dir / "result.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)


def _median_or_none(values):
    values = [v for v in values if v is not None]
    return median(values) if values else None


def summarize(results, epochs: int):
    """Per-(regime, backbone, depth) medians across seeds; convergence
    epochs of None count as the full epoch budget."""
    groups = {}
    for r in results:
        groups.setdefault((r["regime"], r["backbone"], r["depth"]), []).append(r)
    rows = []
    for (regime, backbone, depth), cell_results in sorted(groups.items()):
        conv = [r["convergence_epoch"] if r["convergence_epoch"] is not None else epochs
                for r in cell_results]
        rows.append({
            "regime": regime, "backbone": backbone, "depth": depth,
            "seeds": len(cell_results),
            "median_mae": median(r["mae"] for r in cell_results),
            "median_rmse": median(r["rmse"] for r in cell_results),
            "median_convergence_epoch": _median_or_none(conv),
            "param_count": cell_results[0]["param_count"],
        })
    return rows


def render_summary_text(rows) -> str:
    header = (f"{'regime':10s} {'backbone':9s} {'depth':>5s} {'seeds':>5s} "
              f"{'med MAE':>12s} {'med RMSE':>12s} {'conv epoch':>10s} {'params':>9s}")
    lines = [header, "-" * len(header)]
    for r in rows:
        conv = "-" if r["median_convergence_epoch"] is None else f"{r['median_convergence_epoch']:.0f}"
        lines.append(f"{r['regime']:10s} {r['backbone']:9s} {r['depth']:5d} {r['seeds']:5d} "
                     f"{r['median_mae']:12.6f} {r['median_rmse']:12.6f} {conv:>10s} "
                     f"{r['param_count']:9d}")
    return "\n".join(lines)


def write_summary_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("regime,backbone,depth,seeds,median_mae,median_rmse,"
                 "median_convergence_epoch,param_count\n")
        for r in rows:
            conv = "" if r["median_convergence_epoch"] is None else r["median_convergence_epoch"]
            fh.write(f"{r['regime']},{r['backbone']},{r['depth']},{r['seeds']},"
                     f"{r['median_mae']!r},{r['median_rmse']!r},{conv},{r['param_count']}\n")


def write_rmse_curves_csv(path, results):
    """Per-epoch test-RMSE curves for the adversarial cells (the
    convergence-rate comparison plot data)."""
    dann = [r for r in results if r["regime"] == "dann"]
    if not dann:
        return
    dann.sort(key=lambda r: r["cell_id"])
    n_epochs = max(len(r["log"]) for r in dann)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch," + ",".join(r["cell_id"] for r in dann) + "\n")
        for e in range(n_epochs):
            cells = [repr(r["log"][e]["test_rmse"]) if e < len(r["log"]) else ""
                     for r in dann]
            fh.write(f"{e}," + ",".join(cells) + "\n")


def run_experiment(spec: ExperimentSpec, out_dir, jobs: int = 1):
    """Run the grid; returns (results, failures, summary_rows)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = build_datasets(spec)
    cells = spec.cells()
    results, failures = [], []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_worker, (c, datasets, spec)): c for c in cells}
            for future, cell in futures.items():
                try:
                    results.append(future.result())
                except Exception as exc:  # record and continue with the rest
                    failures.append({"cell_id": cell.cell_id, "error": repr(exc),
                                     "traceback": traceback.format_exc()})
        results.sort(key=lambda r: r["cell_id"])
    else:
        for cell in cells:
            try:
                results.append(run_cell(cell, datasets, spec))
            except Exception as exc:  # record and continue with the rest
                failures.append({"cell_id": cell.cell_id, "error": repr(exc),
                                 "traceback": traceback.format_exc()})
    for r in results:
        _write_cell_files(out_dir, r)
    rows = summarize(results, spec.training.epochs)
    write_summary_csv(out_dir / "summary.csv", rows)
    write_rmse_curves_csv(out_dir / "rmse_curves.csv", results)
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(render_summary_text(rows) + "\n")
    if failures:
        with open(out_dir / "failures.json", "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=1)
    return results, failures, rows
