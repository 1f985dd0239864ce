"""Feature-bag data model, synthetic generation, and portable dataset I/O.

A *bag* is one sample: a ``K x n`` matrix of instance feature vectors
with a single binary label. The bag label follows the standard
multiple-instance rule: a bag is positive iff at least one of its
instances is positive. Per-instance ("latent") labels are never visible
to training code; when present they are used only for evaluation and for
validating that stored bags are internally consistent.

On disk a dataset is a directory holding ``manifest.json`` plus one raw
feature file per bag: little-endian IEEE-754 float32, row-major ``K x n``,
no header. The manifest schema is::

    {
      "version": 1,
      "n": <feature dimension>,
      "task_mode": "benign_malignant" | "subtype",
      "bags": [
        {"id": str, "split": "train"|"test", "bag_label": 0|1,
         "K": int, "features_file": str,
         "latent_labels": [0|1, ...]        # optional
        }, ...
      ]
    }

The synthetic generator creates bags whose negative instances are drawn
from N(0, I) and whose positive instances are shifted by a random
direction of norm ``cluster_sep``. One designated coordinate (the last)
carries an additive confound proportional to the bag label on the train
split; setting ``confound_flip`` reverses that association on the test
split, producing a controlled train/test distribution shift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .seeding import component_rng

TASK_MODES = ("benign_malignant", "subtype")
SPLITS = ("train", "test")
MANIFEST_VERSION = 1


def compute_bag_label(latent_labels) -> int:
    """Bag label induced by instance labels: 1 iff any instance is positive."""
    labels = np.asarray(latent_labels)
    if labels.size == 0:
        raise ValueError("empty bag")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("instance labels must be 0 or 1")
    return int(labels.any())


@dataclass
class Bag:
    """One sample: instance features plus the observed bag label.

    ``latent_labels`` are evaluation-only ground truth; when present they
    must be consistent with ``label`` under the any-positive rule.
    """

    bag_id: str
    features: np.ndarray
    label: int
    split: str = "train"
    latent_labels: np.ndarray | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataError(
                "dimension_mismatch",
                f"bag {self.bag_id!r}: features must be a K x n matrix with K >= 1",
            )
        if not np.isfinite(feats).all():
            raise DataError("non_finite", f"bag {self.bag_id!r}: features contain NaN or Inf")
        self.features = feats
        if self.label not in (0, 1):
            raise DataError("bad_label", f"bag {self.bag_id!r}: bag label must be 0 or 1")
        self.label = int(self.label)
        if self.split not in SPLITS:
            raise DataError("bad_split", f"bag {self.bag_id!r}: split must be one of {SPLITS}")
        if self.latent_labels is not None:
            lat = np.asarray(self.latent_labels)
            if lat.shape != (feats.shape[0],):
                raise DataError(
                    "dimension_mismatch",
                    f"bag {self.bag_id!r}: latent labels must have one entry per instance",
                )
            if not np.isin(lat, (0, 1)).all():
                raise DataError("bad_label", f"bag {self.bag_id!r}: latent labels must be 0 or 1")
            if compute_bag_label(lat) != self.label:
                raise DataError(
                    "label_mismatch",
                    f"bag {self.bag_id!r}: bag label inconsistent with instance labels",
                )
            self.latent_labels = lat.astype(np.int8)

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass
class BagDataset:
    """A collection of bags with a uniform feature dimension and a split tag per bag."""

    bags: list
    n: int
    task_mode: str = "benign_malignant"

    def __post_init__(self):
        if self.task_mode not in TASK_MODES:
            raise DataError("unknown_task_mode", f"unknown task mode {self.task_mode!r}")
        for bag in self.bags:
            if bag.n_features != self.n:
                raise DataError(
                    "dimension_mismatch",
                    f"bag {bag.bag_id!r} has dimension {bag.n_features}, dataset declares {self.n}",
                )

    @property
    def train_bags(self) -> list:
        return [b for b in self.bags if b.split == "train"]

    @property
    def test_bags(self) -> list:
        return [b for b in self.bags if b.split == "test"]


@dataclass
class SyntheticConfig:
    """Knobs for the synthetic bag generator.

    ``confound_strength`` is the magnitude added to the designated
    (last) coordinate of every instance in a bag, scaled by the bag label
    on the train split and, when ``confound_flip`` is set, by one minus
    the bag label on the test split.
    """

    n_bags_train: int = 200
    n_bags_test: int = 100
    k_range: tuple = (100, 300)
    n: int = 64
    pos_fraction: float = 0.1
    cluster_sep: float = 3.0
    confound_strength: float = 2.0
    confound_flip: bool = True
    seed: int = 0

    def validate(self) -> "SyntheticConfig":
        if self.n_bags_train < 1 or self.n_bags_test < 1:
            raise ConfigError("bag counts must be >= 1")
        k_min, k_max = int(self.k_range[0]), int(self.k_range[1])
        if k_min < 1 or k_max < k_min:
            raise ConfigError("k_range must satisfy 1 <= min <= max")
        if self.n < 2:
            raise ConfigError("feature dimension must be >= 2 (one coordinate is reserved for the confound)")
        if not (0.0 < self.pos_fraction <= 1.0):
            raise ConfigError("pos_fraction must lie in (0, 1]")
        if self.cluster_sep < 0:
            raise ConfigError("cluster_sep must be >= 0")
        if self.confound_strength < 0:
            raise ConfigError("confound_strength must be >= 0")
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")
        return self


def generate_synthetic(cfg: SyntheticConfig) -> BagDataset:
    """Generate a dataset deterministically from ``cfg``.

    Bag labels alternate within each split so classes stay exactly
    balanced. The positive-cluster shift lives on the first coordinate
    and the confound on the last, so the causal and spurious signals
    occupy disjoint, individually inspectable axes.
    """
    cfg.validate()
    rng = component_rng(cfg.seed, "data")
    k_min, k_max = int(cfg.k_range[0]), int(cfg.k_range[1])

    mu = np.zeros(cfg.n)
    mu[0] = cfg.cluster_sep

    bags = []
    for split, count in (("train", cfg.n_bags_train), ("test", cfg.n_bags_test)):
        for b in range(count):
            label = b % 2
            k = int(rng.integers(k_min, k_max + 1))
            feats = rng.standard_normal((k, cfg.n))
            latent = np.zeros(k, dtype=np.int8)
            if label == 1:
                n_pos = math.ceil(cfg.pos_fraction * k)
                pos_idx = rng.choice(k, size=n_pos, replace=False)
                feats[pos_idx] += mu
                latent[pos_idx] = 1
            if split == "test" and cfg.confound_flip:
                shift = cfg.confound_strength * (1 - label)
            else:
                shift = cfg.confound_strength * label
            feats[:, -1] += shift
            bags.append(
                Bag(
                    bag_id=f"{split}_{b:04d}",
                    features=feats.astype(np.float32),
                    label=label,
                    split=split,
                    latent_labels=latent,
                )
            )
    return BagDataset(bags=bags, n=cfg.n, task_mode="benign_malignant")


def save_dataset(dataset: BagDataset, out_dir) -> Path:
    """Write ``dataset`` as a manifest directory; returns the directory path."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for bag in dataset.bags:
        rel = f"features/{bag.bag_id}.f32"
        with open(out / rel, "wb") as fh:
            fh.write(np.ascontiguousarray(bag.features, dtype="<f4").tobytes())
        entry = {
            "id": bag.bag_id,
            "split": bag.split,
            "bag_label": bag.label,
            "K": bag.n_instances,
            "features_file": rel,
        }
        if bag.latent_labels is not None:
            entry["latent_labels"] = [int(v) for v in bag.latent_labels]
        entries.append(entry)
    manifest = {
        "version": MANIFEST_VERSION,
        "n": dataset.n,
        "task_mode": dataset.task_mode,
        "bags": entries,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_dataset(path) -> BagDataset:
    """Load a dataset directory (or a manifest file directly).

    Raises :class:`DataError` with a distinct ``code`` per failure kind:
    ``missing_file``, ``bad_manifest``, ``unknown_task_mode``,
    ``dimension_mismatch``, ``non_finite``, ``label_mismatch``.
    """
    p = Path(path)
    manifest_path = p / "manifest.json" if p.is_dir() else p
    if not manifest_path.exists():
        raise DataError("missing_file", f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError("bad_manifest", f"{manifest_path}: invalid JSON ({exc})")

    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError("bad_manifest", f"{manifest_path}: unsupported manifest version")
    task_mode = manifest.get("task_mode")
    if task_mode not in TASK_MODES:
        raise DataError("unknown_task_mode", f"unknown task mode {task_mode!r}")
    try:
        n = int(manifest["n"])
        bag_entries = manifest["bags"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError("bad_manifest", f"{manifest_path}: missing or malformed field ({exc})")

    root = manifest_path.parent
    bags = []
    for entry in bag_entries:
        try:
            bag_id = str(entry["id"])
            split = entry["split"]
            bag_label = int(entry["bag_label"])
            k = int(entry["K"])
            rel = entry["features_file"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError("bad_manifest", f"{manifest_path}: malformed bag entry ({exc})")
        feat_path = root / rel
        if not feat_path.exists():
            raise DataError("missing_file", f"bag {bag_id!r}: missing features file {feat_path}")
        raw = feat_path.read_bytes()
        expected = k * n * 4
        if len(raw) != expected:
            raise DataError(
                "dimension_mismatch",
                f"bag {bag_id!r}: features file holds {len(raw)} bytes, "
                f"expected {expected} for {k} x {n} float32",
            )
        feats = np.frombuffer(raw, dtype="<f4").reshape(k, n).astype(np.float32)
        latent = entry.get("latent_labels")
        bags.append(Bag(bag_id, feats, bag_label, split, latent))
    return BagDataset(bags=bags, n=n, task_mode=task_mode)


def with_seed(cfg: SyntheticConfig, seed: int) -> SyntheticConfig:
    """Copy of ``cfg`` with a different seed (convenience for sweeps)."""
    return replace(cfg, seed=seed)
