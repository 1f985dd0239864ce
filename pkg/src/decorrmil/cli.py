"""Command-line interface.

Subcommands:
  synth         write a synthetic dataset directory
  train         train a model and save the bundle plus a JSON-lines loss log
  eval          score a dataset's test split with a saved bundle
  ablate        the four-condition stage grid over several seeds (CSV)
  ksweep        train+eval per distillation scale k (CSV)
  decorr-bench  correlation before/after reweighting (JSON + CSV)
  roi           dump forwarded-instance records per bag (JSON)

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
Every command writes the fully resolved configuration next to its
outputs; re-running with ``--config`` on that file reproduces the outputs
bit-exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bundle import ModelBundle
from .config import RunConfig
from .dataset import load_dataset, save_dataset
from .errors import ConfigError, DataError, DecorrMILError, NumericError
from .experiment import (
    build_dataset,
    ksweep_to_csv,
    run_ablation,
    run_ksweep,
    run_train_eval,
    summary_to_csv,
    train_classifier,
)
from .metrics import correlation_report, evaluate_bags, roi_metrics


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, help="root seed for every random component")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--data", help="dataset directory (manifest.json inside)")


def _add_synth_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-bags-train", type=int, dest="synth_train")
    parser.add_argument("--n-bags-test", type=int, dest="synth_test")
    parser.add_argument("--k-min", type=int, dest="synth_k_min")
    parser.add_argument("--k-max", type=int, dest="synth_k_max")
    parser.add_argument("--n", type=int, dest="synth_n", help="feature dimension")
    parser.add_argument("--pos-fraction", type=float, dest="synth_pos_fraction")
    parser.add_argument("--cluster-sep", type=float, dest="synth_cluster_sep")
    parser.add_argument("--confound-strength", type=float, dest="synth_confound_strength")
    parser.add_argument(
        "--confound-flip",
        dest="synth_confound_flip",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="reverse the confound-label association on the test split",
    )


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, help="instances forwarded per bag")
    parser.add_argument("--mode", choices=["topk", "bipolar"], help="selection mode")
    parser.add_argument("--epochs-stage1", type=int, dest="epochs_stage1")
    parser.add_argument("--lr-stage1", type=float, dest="lr_stage1")
    parser.add_argument("--epochs-stage2", type=int, dest="epochs_stage2")
    parser.add_argument("--lr-stage2", type=float, dest="lr_stage2")
    parser.add_argument("--no-stage1", action="store_true", help="disable instance distillation")
    parser.add_argument("--no-stage2", action="store_true", help="disable Fourier-space reweighting")
    parser.add_argument("--rff-m", type=int, dest="rff_m", help="random cosine samples per feature")
    parser.add_argument("--decorr-mode", choices=["cov", "inprod", "both"], dest="decorr_mode")
    parser.add_argument("--decorr-steps", type=int, dest="decorr_steps")
    parser.add_argument("--decorr-lr", type=float, dest="decorr_lr")
    parser.add_argument(
        "--inprod-symmetric",
        action="store_true",
        default=None,
        help="weight both sides of the inner-product matrix",
    )
    parser.add_argument("--bank-t", type=int, dest="bank_t", help="memory bank capacity")
    parser.add_argument("--bank-update", choices=["all", "drawn"], dest="bank_update")
    parser.add_argument(
        "--bank-warmup", action="store_true", default=None, help="fill banks before stage-2 epochs"
    )
    parser.add_argument("--agg-variant", choices=["gated_attention", "max_pool", "mean_pool"], dest="agg_variant")
    parser.add_argument(
        "--strict-bag-size",
        action="store_true",
        default=None,
        help="error on bags smaller than k instead of selecting all their instances",
    )


def _overrides_from_args(args) -> dict:
    mapping = {
        "seed": "seed",
        "out": "out",
        "data": "data",
        "k": "k",
        "mode": "mode",
        "epochs_stage1": "distill.epochs",
        "lr_stage1": "distill.lr",
        "epochs_stage2": "agg.epochs",
        "lr_stage2": "agg.lr",
        "rff_m": "rff.m",
        "decorr_mode": "decorr.mode",
        "decorr_steps": "decorr.steps",
        "decorr_lr": "decorr.lr",
        "inprod_symmetric": "decorr.inprod_symmetric",
        "bank_t": "bank.t",
        "bank_update": "bank.update_rule",
        "bank_warmup": "bank.warmup",
        "agg_variant": "agg.variant",
        "synth_train": "synth.n_bags_train",
        "synth_test": "synth.n_bags_test",
        "synth_k_min": "synth.k_min",
        "synth_k_max": "synth.k_max",
        "synth_n": "synth.n",
        "synth_pos_fraction": "synth.pos_fraction",
        "synth_cluster_sep": "synth.cluster_sep",
        "synth_confound_strength": "synth.confound_strength",
        "synth_confound_flip": "synth.confound_flip",
    }
    overrides = {}
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[dotted] = value
    if getattr(args, "no_stage1", False):
        overrides["stage1"] = False
    if getattr(args, "no_stage2", False):
        overrides["stage2"] = False
    if getattr(args, "strict_bag_size", None):
        overrides["distill.allow_small_bags"] = False
    return overrides


def _resolve(args, default_out: str) -> RunConfig:
    overrides = _overrides_from_args(args)
    overrides.setdefault("out", default_out)
    return RunConfig.resolve(getattr(args, "config", None), overrides)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _resolve(args, default_out="synthetic_dataset")
    out = _outdir(cfg)
    dataset = build_dataset(RunConfig.from_dict({**cfg.to_dict(), "data": None}))
    save_dataset(dataset, out)
    cfg.write(out / "config.json", invocation={"command": "synth"})
    print(f"wrote {len(dataset.bags)} bags (n={dataset.n}) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args, default_out="run_out")
    out = _outdir(cfg)
    dataset = build_dataset(cfg)
    clf = train_classifier(cfg, dataset)

    bundle_path = out / "model.bundle"
    run_dict = cfg.to_dict()
    run_dict["out"] = None  # output location is not part of the model's identity
    bundle_config = {**cfg.estimator_kwargs(), "run": run_dict, "config_hash": cfg.config_hash()}
    ModelBundle.from_classifier(clf, config=bundle_config).save(bundle_path)

    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for epoch, loss in enumerate(clf.stage1_loss_history_):
            fh.write(json.dumps({"stage": 1, "epoch": epoch, "mean_loss": loss}) + "\n")
        for epoch, loss in enumerate(clf.stage2_loss_history_):
            fh.write(json.dumps({"stage": 2, "epoch": epoch, "mean_loss": loss}) + "\n")
        fh.write(
            json.dumps(
                {
                    "summary": True,
                    "constraint_checks": clf.constraint_checks_,
                    "config_hash": cfg.config_hash(),
                }
            )
            + "\n"
        )
    cfg.write(out / "config.json", invocation={"command": "train"})
    print(f"bundle: {bundle_path}")
    print(f"log:    {log_path}")
    return 0


def _load_bundle_classifier(args):
    bundle_path = getattr(args, "bundle", None)
    if bundle_path is None:
        raise ConfigError("--bundle is required")
    bundle = ModelBundle.load(bundle_path)
    return bundle, bundle.to_classifier()


def _require_data(args):
    data = getattr(args, "data", None)
    if data is None:
        raise ConfigError("--data is required")
    return load_dataset(data)


def cmd_eval(args) -> int:
    bundle, clf = _load_bundle_classifier(args)
    dataset = _require_data(args)
    bags = dataset.test_bags
    if not bags:
        raise DataError("empty_split", "dataset has no test bags")
    report = evaluate_bags(clf, bags)
    out = Path(args.out or "eval_out")
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "eval_report.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    _write_json(
        out / "config.json",
        {
            "invocation": {"command": "eval", "bundle": str(args.bundle), "data": str(args.data)},
            "bundle_config": bundle.config,
        },
    )
    print(f"acc={report.acc:.4f} auc={report.auc:.4f} recall={report.recall:.4f} precision={report.precision:.4f}")
    print(f"report: {report_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args, default_out="ablation_out")
    out = _outdir(cfg)
    summary, cells = run_ablation(cfg, n_seeds=args.seeds, jobs=args.jobs)
    (out / "ablation.csv").write_text(summary_to_csv(summary), encoding="utf-8")
    _write_json(out / "ablation_cells.json", cells)
    cfg.write(out / "config.json", invocation={"command": "ablate", "seeds": args.seeds})
    for row in summary:
        print(
            f"stage1={int(row['stage1'])} stage2={int(row['stage2'])} "
            f"acc={row['acc_mean']:.4f}+/-{row['acc_std']:.4f} "
            f"auc={row['auc_mean']:.4f}+/-{row['auc_std']:.4f}"
        )
    return 0


def cmd_ksweep(args) -> int:
    cfg = _resolve(args, default_out="ksweep_out")
    out = _outdir(cfg)
    try:
        k_list = [int(v) for v in args.k_list.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--k-list must be comma-separated integers, got {args.k_list!r}")
    rows = run_ksweep(cfg, k_list, n_seeds=args.seeds)
    (out / "ksweep.csv").write_text(ksweep_to_csv(rows), encoding="utf-8")
    cfg.write(out / "config.json", invocation={"command": "ksweep", "k_list": k_list, "seeds": args.seeds})
    for row in rows:
        detail = f"acc={row['acc']:.4f} auc={row['auc']:.4f}" if row["status"] == "ok" else row["status"]
        print(f"k={row['k']} seed={row['seed']} {detail}")
    return 0


def cmd_decorr_bench(args) -> int:
    bundle, clf = _load_bundle_classifier(args)
    dataset = _require_data(args)
    report = correlation_report(clf, dataset, batch_size=args.batch_size, steps=args.steps)
    out = Path(args.out or "decorr_bench_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "correlation_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "correlation_per_bag.csv").write_text(report.rows_to_csv(), encoding="utf-8")
    _write_json(
        out / "config.json",
        {
            "invocation": {
                "command": "decorr-bench",
                "bundle": str(args.bundle),
                "data": str(args.data),
                "batch_size": args.batch_size,
                "steps": args.steps,
            },
            "bundle_config": bundle.config,
        },
    )
    for split, stats in sorted(report.splits.items()):
        print(
            f"{split}: before={stats['before_mean']:.4f} after={stats['after_mean']:.4f} "
            f"ratio={stats['reduction_ratio']:.4f}"
        )
    return 0


def cmd_roi(args) -> int:
    bundle, clf = _load_bundle_classifier(args)
    if clf.distiller_ is None:
        raise ConfigError("roi requires a model trained with stage 1 enabled")
    dataset = _require_data(args)
    bags = dataset.test_bags if args.split == "test" else dataset.train_bags
    if not bags:
        raise DataError("empty_split", f"dataset has no {args.split} bags")
    records = []
    for bag in bags:
        dset = clf.distiller_.distill(bag)
        record = {
            "bag_id": bag.bag_id,
            "label": int(bag.label),
            "mode": dset.mode,
            "indices": [int(v) for v in dset.indices],
            "probs": [float(v) for v in dset.probs],
        }
        if bag.latent_labels is not None:
            precision, recall = roi_metrics(dset, bag)
            record["instance_precision"] = precision
            record["instance_recall"] = recall
        records.append(record)
    out = Path(args.out or "roi_out")
    out.mkdir(parents=True, exist_ok=True)
    roi_path = out / "roi.json"
    _write_json(roi_path, records)
    _write_json(
        out / "config.json",
        {
            "invocation": {"command": "roi", "bundle": str(args.bundle), "data": str(args.data), "split": args.split},
            "bundle_config": bundle.config,
        },
    )
    print(f"wrote {len(records)} records to {roi_path}")
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decorrmil", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"decorrmil {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    _add_common(p)
    _add_synth_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    _add_synth_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved bundle on a dataset's test split")
    _add_common(p)
    p.add_argument("--bundle", help="path to a saved model bundle")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="stage-1/stage-2 ablation grid")
    _add_common(p)
    _add_synth_flags(p)
    _add_model_flags(p)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds per condition")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ksweep", help="train+eval per distillation scale")
    _add_common(p)
    _add_synth_flags(p)
    _add_model_flags(p)
    p.add_argument("--k-list", default="4,16,64", help="comma-separated k values")
    p.add_argument("--seeds", type=int, default=1, help="seeds per k value")
    p.set_defaults(func=cmd_ksweep)

    p = sub.add_parser("decorr-bench", help="correlation before/after reweighting")
    _add_common(p)
    p.add_argument("--bundle", help="path to a saved model bundle")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--steps", type=int, default=None, help="inner optimization steps (default: model config)")
    p.set_defaults(func=cmd_decorr_bench)

    p = sub.add_parser("roi", help="dump forwarded-instance records per bag")
    _add_common(p)
    p.add_argument("--bundle", help="path to a saved model bundle")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(func=cmd_roi)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error ({exc.code}): {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except DecorrMILError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
