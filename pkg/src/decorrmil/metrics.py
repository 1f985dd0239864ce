"""Bag-level metrics, instance-overlap metrics, and the correlation report.

AUC uses the exact rank (Mann-Whitney) formulation — concordant pairs
plus half the ties over all positive/negative pairs — rather than a
sampled curve, so small test sets are scored exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import Bag, BagDataset
from .decorrelate import WeightState, build_correlation_matrices, decorrelation_loss, optimize_weights
from .distill import DistilledSet
from .errors import ConfigError, DataError
from .seeding import component_rng, stable_id_hash


def threshold_metrics(scores, labels, threshold: float = 0.5):
    """Accuracy, recall, and precision at a fixed threshold.

    Degenerate denominators (no predicted positives for precision, no
    actual positives for recall) yield 0.0 with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("empty input")
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    predicted = scores >= threshold
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    acc = float(np.mean(predicted == actual))
    if actual.sum() == 0:
        warnings.warn("no positive labels; recall defined as 0.0")
        recall = 0.0
    else:
        recall = tp / float(actual.sum())
    if predicted.sum() == 0:
        warnings.warn("no predicted positives; precision defined as 0.0")
        precision = 0.0
    else:
        precision = tp / float(predicted.sum())
    return acc, recall, precision


def roc_auc(scores, labels) -> float:
    """Exact area under the ROC curve via rank statistics.

    Equals (#concordant pairs + 0.5 * #tied pairs) / (#pos * #neg);
    invariant under any strictly monotone transform of the scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: needs at least one positive and one negative label")

    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[np.asarray(labels) == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roi_metrics(distilled: DistilledSet, bag: Bag):
    """Overlap of forwarded instances with the bag's latent positives.

    Returns ``(precision, recall)``: the fraction of forwarded instances
    that are latent-positive, and the fraction of latent positives that
    were forwarded.
    """
    if bag.latent_labels is None:
        raise DataError("missing_latent", f"bag {bag.bag_id!r} has no latent labels")
    selected = np.asarray(distilled.indices, dtype=np.int64)
    if selected.size == 0:
        raise ValueError("empty selection")
    hits = int(bag.latent_labels[selected].sum())
    total_pos = int(bag.latent_labels.sum())
    precision = hits / float(selected.size)
    recall = hits / float(total_pos) if total_pos > 0 else 0.0
    return precision, recall


@dataclass
class EvalReport:
    """Bag-level evaluation summary plus per-bag detail."""

    acc: float
    auc: float
    recall: float
    precision: float
    n_test: int
    per_bag: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "auc": self.auc,
            "recall": self.recall,
            "precision": self.precision,
            "n_test": self.n_test,
            "per_bag": self.per_bag,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate_bags(clf, bags) -> EvalReport:
    """Score ``bags`` with a fitted classifier and assemble an :class:`EvalReport`."""
    bags = list(bags)
    if not bags:
        raise DataError("empty_split", "no bags to evaluate")
    records = []
    scores = np.empty(len(bags))
    labels = np.empty(len(bags), dtype=int)
    for i, bag in enumerate(bags):
        prob, dset = clf.score_bag(bag)
        scores[i] = prob
        labels[i] = bag.label
        records.append(
            {
                "id": bag.bag_id,
                "label": int(bag.label),
                "score": float(prob),
                "distilled_indices": [int(v) for v in dset.indices] if dset is not None else [],
            }
        )
    acc, recall, precision = threshold_metrics(scores, labels)
    auc = roc_auc(scores, labels)
    return EvalReport(
        acc=acc, auc=auc, recall=recall, precision=precision, n_test=len(bags), per_bag=records
    )


@dataclass
class CorrelationReport:
    """Mean off-diagonal correlation before/after reweighting, per split."""

    splits: dict
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"splits": self.splits, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows_to_csv(self) -> str:
        lines = ["split,bag_id,batch_rows,before,after"]
        for row in self.rows:
            lines.append(
                f"{row['split']},{row['bag_id']},{row['batch_rows']},{row['before']!r},{row['after']!r}"
            )
        return "\n".join(lines) + "\n"


def correlation_report(clf, dataset: BagDataset, batch_size: int = 32, steps: int | None = None) -> CorrelationReport:
    """Measure how much learned weights shrink off-diagonal correlation.

    For every bag, a random batch of raw instance features (not the
    forwarded subset) is mapped to Fourier space; the off-diagonal sum is
    computed once with uniform weights and once with freshly optimized
    weights, then averaged per split. ``steps=None`` uses the
    classifier's configured inner-step budget.
    """
    if getattr(clf, "rff_", None) is None:
        raise ConfigError("correlation report requires a model trained with stage 2 enabled")
    steps = clf.decorr_steps if steps is None else int(steps)
    rows = []
    sums: dict = {}
    for bag in dataset.bags:
        rng = component_rng(clf.seed, "eval", (stable_id_hash(bag.bag_id), 1))
        take = min(batch_size, bag.n_instances)
        idx = rng.choice(bag.n_instances, size=take, replace=False)
        mapped = clf.rff_.transform(bag.features[idx])
        uniform = np.ones(take)
        before = decorrelation_loss(
            build_correlation_matrices(mapped, uniform, clf.decorr_mode, clf.inprod_symmetric)
        )
        result = optimize_weights(
            mapped,
            WeightState.uniform(take),
            steps=steps,
            lr=clf.decorr_lr,
            mode=clf.decorr_mode,
            symmetric_inprod=clf.inprod_symmetric,
        )
        after = decorrelation_loss(
            build_correlation_matrices(
                mapped, result.state.weights(), clf.decorr_mode, clf.inprod_symmetric
            )
        )
        rows.append(
            {
                "split": bag.split,
                "bag_id": bag.bag_id,
                "batch_rows": int(take),
                "before": float(before),
                "after": float(after),
            }
        )
        sums.setdefault(bag.split, []).append((before, after))

    splits = {}
    for split, pairs in sums.items():
        before_mean = float(np.mean([p[0] for p in pairs]))
        after_mean = float(np.mean([p[1] for p in pairs]))
        ratio = after_mean / before_mean if before_mean > 0 else 1.0
        splits[split] = {
            "before_mean": before_mean,
            "after_mean": after_mean,
            "reduction_ratio": ratio,
        }
    return CorrelationReport(splits=splits, rows=rows)
