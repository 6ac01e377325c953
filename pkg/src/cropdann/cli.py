"""Command-line interface.

Subcommands: generate, train, evaluate, count-params, gradcheck,
experiment. Exit codes: 0 success, 1 numeric failure, 2 usage or I/O
error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as dat
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (CheckpointError, ContractError, CsvFormatError,
                     NumericDomainError, NumericError, ShapeError)
from .experiment import ExperimentSpec, render_summary_text, run_experiment
from .gradcheck import TOLERANCE, run_gradient_checks
from .layers import param_count
from .metrics import evaluate_model
from .model import DANNModel, ModelConfig, RegressionModel, component_counts
from .training import (TrainingConfig, detect_convergence, pretrain_finetune,
                       train_dann, train_direct)

USAGE_ERRORS = (ContractError, CsvFormatError, CheckpointError, ShapeError,
                OSError, json.JSONDecodeError)
NUMERIC_ERRORS = (NumericError, NumericDomainError)


def _load_config_file(path):
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _simulator_config(args, section):
    fields = dict(section)
    if args.seed is not None:
        fields["seed"] = args.seed
    return dat.SimulatorConfig(**fields)


def _training_config(args, section):
    fields = dict(section)
    for key in ("epochs", "batch_size", "learning_rate", "lambda_mode",
                "lambda_value", "loss_mode", "finetune_epochs"):
        value = getattr(args, key, None)
        if value is not None:
            fields[key] = value
    if getattr(args, "no_target_supervision", False):
        fields["target_supervision"] = False
    if args.seed is not None:
        fields["seed"] = args.seed
    return TrainingConfig(**fields)


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> int:
    config = _load_config_file(args.config)
    cfg = _simulator_config(args, config.get("simulator", {}))
    target_cfg = cfg.shifted()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    seed = cfg.seed
    source_seasons = dat.generate_seasons(cfg, args.source_seasons, seed=seed)
    per_season = len(dat.window_season(source_seasons[0], stride=args.stride))
    import math
    n_target_seasons = math.ceil(args.target_windows / max(1, per_season))
    target_seasons = dat.generate_seasons(target_cfg, n_target_seasons, seed=seed,
                                          id_offset=10_000)
    dat.write_seasons_csv(out / "source_seasons.csv", source_seasons)
    dat.write_seasons_csv(out / "target_seasons.csv", target_seasons)

    source_windows = dat.window_seasons(source_seasons, stride=args.stride, domain=0)
    target_windows = dat.window_seasons(target_seasons, stride=args.stride,
                                        domain=1)[:args.target_windows]
    if args.export_windows:
        dat.export_windows_jsonl(out / "source_windows.jsonl", source_windows)
        dat.export_windows_jsonl(out / "target_windows.jsonl", target_windows)

    manifest = {
        "seed": seed,
        "stride": args.stride,
        "window_length": dat.WINDOW_LENGTH,
        "n_source_seasons": args.source_seasons,
        "n_source_windows": len(source_windows),
        "n_target_seasons": n_target_seasons,
        "n_target_windows": len(target_windows),
        "windows_per_season": per_season,
        "source_config": cfg.to_dict(),
        "target_config": target_cfg.to_dict(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    print(f"wrote {len(source_seasons)} source seasons "
          f"({len(source_windows)} windows) and {n_target_seasons} target seasons "
          f"({len(target_windows)} windows) to {out}")
    return 0


def _load_training_data(args):
    data_dir = Path(args.data_dir)
    manifest = {}
    manifest_path = data_dir / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    stride = manifest.get("stride", dat.WINDOW_STRIDE)
    n_target = manifest.get("n_target_windows", 46)
    source = dat.window_seasons(dat.load_seasons_csv(data_dir / "source_seasons.csv"),
                                stride=stride, domain=0)
    target = dat.window_seasons(dat.load_seasons_csv(data_dir / "target_seasons.csv"),
                                stride=stride, domain=1)[:n_target]
    return source, target


def _split_target(target, seed, fraction=0.5):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD07]))
    perm = rng.permutation(len(target))
    n_train = int(round(fraction * len(target)))
    return [target[i] for i in perm[:n_train]], [target[i] for i in perm[n_train:]]


def cmd_train(args) -> int:
    if args.regime == "dann" and args.backbone == "mlp":
        print("error: the dann regime supports lstm and tcn backbones only",
              file=sys.stderr)
        return 2
    config = _load_config_file(args.config)
    tcfg = _training_config(args, config.get("training", {}))
    seed = tcfg.seed

    source, target = _load_training_data(args)
    target_train, target_test = _split_target(target, seed)
    stats = dat.fit_normalizer(source)
    source_n = dat.normalize_windows(stats, source)
    train_n = dat.normalize_windows(stats, target_train)
    test_n = dat.normalize_windows(stats, target_test)

    mcfg = ModelConfig(backbone=args.backbone, depth=args.layers,
                       sigma_link=args.sigma_link, dropout=args.dropout, seed=seed)
    if args.regime == "dann":
        model = DANNModel(mcfg)
        model, log = train_dann(model, source_n, train_n, test_n, tcfg, stats=stats)
    elif args.regime == "finetune":
        model = RegressionModel(mcfg)
        model, log = pretrain_finetune(model, source_n, train_n, test_n, tcfg,
                                       stats=stats)
    else:
        model = RegressionModel(mcfg)
        model, log = train_direct(model, train_n, test_n, tcfg, stats=stats)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", model, stats=stats,
                    training_config=tcfg.to_dict(), seed=seed)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record.to_dict()) + "\n")
    with open(out / "curve.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,source_reg_loss,target_reg_loss,domain_loss,test_rmse\n")
        for r in log:
            fh.write(f"{r.epoch},"
                     f"{'' if r.source_reg_loss is None else repr(r.source_reg_loss)},"
                     f"{'' if r.target_reg_loss is None else repr(r.target_reg_loss)},"
                     f"{'' if r.domain_loss is None else repr(r.domain_loss)},"
                     f"{r.test_rmse!r}\n")
    dat.export_windows_jsonl(out / "target_test_windows.jsonl", target_test)
    convergence = detect_convergence(log, window=tcfg.convergence_window,
                                     tol=tcfg.convergence_tol)
    run_info = {"regime": args.regime, "backbone": args.backbone,
                "layers": args.layers, "seed": seed,
                "model_config": mcfg.to_dict(), "training_config": tcfg.to_dict(),
                "final_test_mae": log[-1].test_mae, "final_test_rmse": log[-1].test_rmse,
                "convergence_epoch": convergence, "param_count": param_count(model)}
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(run_info, fh, indent=1)
    print(f"{args.regime}-{args.backbone}-{args.layers}: "
          f"final test MAE {log[-1].test_mae:.6f} RMSE {log[-1].test_rmse:.6f} "
          f"({param_count(model)} params)")
    return 0


def cmd_evaluate(args) -> int:
    model, stats, meta = load_checkpoint(args.checkpoint)
    if args.windows:
        windows = dat.load_windows_jsonl(args.windows)
    else:
        seasons = dat.load_seasons_csv(args.seasons)
        windows = dat.window_seasons(seasons, stride=args.stride)
    if not windows:
        print("error: no windows to evaluate", file=sys.stderr)
        return 2
    if stats is not None:
        windows = dat.normalize_windows(stats, windows)
    x = np.stack([w.features for w in windows])
    y = np.stack([w.labels for w in windows])
    report = evaluate_model(model, x, y, stats=stats)
    report["n_windows"] = len(windows)
    report["checkpoint_kind"] = meta["kind"]
    print(f"MAE  {report['mae']!r}")
    print(f"RMSE {report['rmse']!r}")
    print(f"NLL  {report['nll']!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1)
    return 0


def cmd_count_params(args) -> int:
    rng = np.random.default_rng(0)
    from .layers import LSTMLayer  # local: counts only need fresh layers
    from .model import LSTMFeatureExtractor, TCNFeatureExtractor

    def tcn_count(depth):
        return param_count(TCNFeatureExtractor(ModelConfig(depth=depth), rng))

    def lstm_count(depth):
        return param_count(LSTMFeatureExtractor(
            ModelConfig(backbone="lstm", depth=depth), rng))

    lstm = [lstm_count(d) for d in (1, 2, 4)]
    tcn = [tcn_count(d) for d in (1, 2, 4)]
    counts = component_counts()
    print("Model           Parameters (1 / 2 / 4 layers)")
    print(f"LSTM            {lstm[0]:,} / {lstm[1]:,} / {lstm[2]:,}")
    print(f"TCN             {tcn[0]:,} / {tcn[1]:,} / {tcn[2]:,}")
    print(f"Regressor       {counts['regressor']:,}")
    print(f"Discriminator   {counts['discriminator']:,}")
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_gradient_checks(seed=args.seed if args.seed is not None else 0)
    print(f"{'component':26s} {'max rel error':>14s}  result")
    for name, err, ok in rows:
        print(f"{name:26s} {err:14.3e}  {'PASS' if ok else 'FAIL'}")
    if all(ok for _, _, ok in rows):
        print(f"all {len(rows)} components within {TOLERANCE:g}")
        return 0
    return 1


def cmd_experiment(args) -> int:
    config = _load_config_file(args.config)
    tcfg = _training_config(args, config.get("training", {}))
    scfg = _simulator_config(args, config.get("simulator", {}))
    exp_section = config.get("experiment", {})
    spec = ExperimentSpec(
        regimes=tuple(args.regimes or exp_section.get("regimes", ExperimentSpec.regimes)),
        backbones=tuple(args.backbones or exp_section.get("backbones",
                                                          ExperimentSpec.backbones)),
        depths=tuple(args.depths or exp_section.get("depths", (1, 2, 4))),
        seeds=tuple(args.run_seeds or exp_section.get("seeds", (0, 1, 2))),
        training=tcfg, simulator=scfg,
        data_seed=args.seed if args.seed is not None else 0,
        n_source_seasons=exp_section.get("n_source_seasons", 400),
        n_target_windows=exp_section.get("n_target_windows", 46))
    results, failures, rows = run_experiment(spec, args.out_dir, jobs=args.jobs)
    print(render_summary_text(rows))
    if failures:
        print(f"{len(failures)} cell(s) failed; see failures.json", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--config", default=None,
                        help="JSON file with simulator/training/experiment sections")
    common.add_argument("--jobs", type=int, default=1)

    parser = argparse.ArgumentParser(
        prog="cropdann",
        description="Domain-adversarial TCN for crop-growth time series")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="write synthetic source/target season CSVs")
    p.add_argument("--source-seasons", type=int, default=400)
    p.add_argument("--target-windows", type=int, default=46)
    p.add_argument("--stride", type=int, default=dat.WINDOW_STRIDE)
    p.add_argument("--export-windows", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train one configuration")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--regime", choices=("direct", "finetune", "dann"), default="dann")
    p.add_argument("--backbone", choices=("mlp", "lstm", "tcn"), default="tcn")
    p.add_argument("--layers", type=int, choices=(1, 2, 4), default=4)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--lambda-mode", dest="lambda_mode",
                   choices=("fixed", "ganin-schedule"), default=None)
    p.add_argument("--lambda-value", dest="lambda_value", type=float, default=None)
    p.add_argument("--loss-mode", dest="loss_mode",
                   choices=("gaussian-nll", "paper-likelihood"), default=None)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int, default=None)
    p.add_argument("--no-target-supervision", action="store_true")
    p.add_argument("--sigma-link", choices=("softplus", "relu"), default="softplus")
    p.add_argument("--dropout", type=float, default=0.0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="evaluate a checkpoint on windows or seasons")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--windows", help="windows JSONL file")
    group.add_argument("--seasons", help="season CSV file")
    p.add_argument("--stride", type=int, default=dat.WINDOW_STRIDE)
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("count-params", parents=[common],
                       help="print the parameter-size table")
    p.set_defaults(fn=cmd_count_params)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference checks of every component")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("experiment", parents=[common],
                       help="run the evaluation grid and write summary tables")
    p.add_argument("--regimes", nargs="+", choices=("direct", "finetune", "dann"))
    p.add_argument("--backbones", nargs="+", choices=("mlp", "lstm", "tcn"))
    p.add_argument("--depths", nargs="+", type=int)
    p.add_argument("--run-seeds", nargs="+", type=int)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int, default=None)
    p.set_defaults(fn=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
