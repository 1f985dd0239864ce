"""Experiment orchestration: single runs, the ablation grid, and k sweeps.

Cells of the ablation grid and of a k sweep are fully independent (each
owns its classifier, banks, and RNG streams), so they may run in worker
processes; results do not depend on scheduling.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import RunConfig
from .dataset import BagDataset, generate_synthetic, load_dataset
from .errors import DataError, DecorrMILError
from .metrics import EvalReport, evaluate_bags
from .pipeline import DecorrMILClassifier

ABLATION_CONDITIONS = ((True, True), (True, False), (False, True), (False, False))


def build_dataset(cfg: RunConfig) -> BagDataset:
    """Load the configured dataset directory, or synthesize one."""
    if cfg.data is not None:
        return load_dataset(cfg.data)
    return generate_synthetic(cfg.synthetic_config())


def train_classifier(cfg: RunConfig, dataset: BagDataset) -> DecorrMILClassifier:
    if not dataset.train_bags:
        raise DataError("empty_split", "dataset has no training bags")
    clf = DecorrMILClassifier(**cfg.estimator_kwargs())
    clf.fit(dataset)
    return clf


def run_train_eval(cfg: RunConfig, dataset: BagDataset | None = None):
    """Train on the train split and evaluate on the test split."""
    data = build_dataset(cfg) if dataset is None else dataset
    clf = train_classifier(cfg, data)
    if not data.test_bags:
        raise DataError("empty_split", "dataset has no test bags")
    report = evaluate_bags(clf, data.test_bags)
    return clf, report


def _cell(cfg_dict: dict, stage1: bool, stage2: bool, seed: int) -> dict:
    cfg = RunConfig.from_dict(cfg_dict)
    cfg.seed = seed
    cfg.stage1 = stage1
    cfg.stage2 = stage2
    cfg.validate()
    _, report = run_train_eval(cfg)
    return {
        "stage1": stage1,
        "stage2": stage2,
        "seed": seed,
        "acc": report.acc,
        "auc": report.auc,
        "config_hash": cfg.config_hash(),
    }


def run_ablation(cfg: RunConfig, n_seeds: int = 5, jobs: int = 1):
    """The four-condition stage grid, each condition over ``n_seeds`` seeds.

    Within one seed every condition sees the same dataset (the data seed
    derives from the root seed), so conditions are compared paired.
    Returns ``(summary_rows, cell_rows)``.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    seeds = [cfg.seed + i for i in range(n_seeds)]
    cfg_dict = cfg.to_dict()
    tasks = [(stage1, stage2, seed) for stage1, stage2 in ABLATION_CONDITIONS for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_cell_star, [(cfg_dict, *task) for task in tasks]))
    else:
        cells = [_cell(cfg_dict, *task) for task in tasks]

    summary = []
    for stage1, stage2 in ABLATION_CONDITIONS:
        rows = [c for c in cells if c["stage1"] == stage1 and c["stage2"] == stage2]
        accs = np.array([r["acc"] for r in rows])
        aucs = np.array([r["auc"] for r in rows])
        summary.append(
            {
                "stage1": stage1,
                "stage2": stage2,
                "n_seeds": len(rows),
                "acc_mean": float(accs.mean()),
                "acc_std": float(accs.std()),
                "auc_mean": float(aucs.mean()),
                "auc_std": float(aucs.std()),
                "config_hash": rows[0]["config_hash"],
            }
        )
    return summary, cells


def _cell_star(args):
    return _cell(*args)


def run_ksweep(cfg: RunConfig, k_list, n_seeds: int = 1):
    """One full train+eval per (k, seed); failures become error rows."""
    if not k_list:
        raise ValueError("k_list must be non-empty")
    rows = []
    for k in k_list:
        for i in range(n_seeds):
            seed = cfg.seed + i
            cell_cfg = RunConfig.from_dict(cfg.to_dict())
            cell_cfg.k = int(k)
            cell_cfg.seed = seed
            row = {"k": int(k), "seed": seed, "status": "ok", "acc": None, "auc": None,
                   "config_hash": cell_cfg.config_hash()}
            try:
                cell_cfg.validate()
                _, report = run_train_eval(cell_cfg)
                row["acc"] = report.acc
                row["auc"] = report.auc
            except DecorrMILError as exc:
                row["status"] = f"error:{type(exc).__name__}"
                row["message"] = str(exc)
            rows.append(row)
    return rows


def summary_to_csv(summary) -> str:
    lines = ["stage1,stage2,n_seeds,acc_mean,acc_std,auc_mean,auc_std,config_hash"]
    for row in summary:
        lines.append(
            f"{int(row['stage1'])},{int(row['stage2'])},{row['n_seeds']},"
            f"{row['acc_mean']!r},{row['acc_std']!r},{row['auc_mean']!r},{row['auc_std']!r},"
            f"{row['config_hash']}"
        )
    return "\n".join(lines) + "\n"


def ksweep_to_csv(rows) -> str:
    lines = ["k,seed,status,acc,auc,config_hash"]
    for row in rows:
        acc = "" if row["acc"] is None else repr(row["acc"])
        auc = "" if row["auc"] is None else repr(row["auc"])
        lines.append(f"{row['k']},{row['seed']},{row['status']},{acc},{auc},{row['config_hash']}")
    return "\n".join(lines) + "\n"
