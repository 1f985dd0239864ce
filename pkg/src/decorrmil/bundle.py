"""Model bundle: one versioned file holding every trained component.

The file is a tensor container (JSON header line + raw payload, see
:mod:`decorrmil.tensorio`) whose metadata records the resolved run
configuration, component dimensions, and training summary. Network
weights are stored as float32. Memory-bank contents and the random
Fourier parameters are stored as float64 so that a save/load round trip
reproduces the frozen state bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregate import AggregatorNet
from .distill import InstanceDistiller, InstanceScorer
from .errors import DataError
from .memory import MemoryBank
from .pipeline import DecorrMILClassifier
from .rff import RandomFourierMap
from .tensorio import load_tensors, save_tensors

BUNDLE_KIND = "decorrmil_bundle"
BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    """Serializable snapshot of a fitted :class:`DecorrMILClassifier`."""

    config: dict
    meta: dict
    distiller: InstanceScorer | None
    rff: RandomFourierMap | None
    banks: list
    aggregator: AggregatorNet

    @classmethod
    def from_classifier(cls, clf: DecorrMILClassifier, config: dict | None = None) -> "ModelBundle":
        if not hasattr(clf, "aggregator_"):
            raise ValueError("classifier must be fitted before bundling")
        agg = clf.aggregator_
        meta = {
            "kind": BUNDLE_KIND,
            "bundle_version": BUNDLE_VERSION,
            "n_features": clf.n_features_,
            "mode": clf.mode_,
            "task_mode": clf.task_mode_,
            "aggregator": {
                "in_dim": agg.in_dim,
                "variant": agg.variant,
                "attn_dim": agg.attn_dim,
                "mlp_dim": agg.mlp_dim,
            },
            "training": {
                "constraint_checks": clf.constraint_checks_,
                "stage1_loss": clf.stage1_loss_history_,
                "stage2_loss": clf.stage2_loss_history_,
            },
        }
        if clf.distiller_ is not None:
            scorer = clf.distiller_.scorer_
            meta["distiller"] = {"n_features": scorer.n_features, "hidden_dim": scorer.hidden_dim}
        if clf.rff_ is not None:
            meta["rff"] = {"m": clf.rff_.m}
        if clf.banks_:
            meta["banks"] = [
                {
                    "capacity": b.capacity,
                    "entry_rows": b.entry_rows,
                    "feature_dim": b.feature_dim,
                    "update_rule": b.update_rule,
                    "fill_count": b.fill_count,
                    "frozen": b.frozen,
                }
                for b in clf.banks_
            ]
        return cls(
            config=dict(config) if config is not None else clf.get_params(),
            meta=meta,
            distiller=clf.distiller_.scorer_ if clf.distiller_ is not None else None,
            rff=clf.rff_,
            banks=list(clf.banks_),
            aggregator=agg,
        )

    def save(self, path) -> None:
        tensors = {}
        dtypes = {}
        if self.distiller is not None:
            tensors["distiller.w1"] = self.distiller.w1
            tensors["distiller.b1"] = self.distiller.b1
            tensors["distiller.w2"] = self.distiller.w2
            tensors["distiller.b2"] = np.array([self.distiller.b2])
        if self.rff is not None:
            tensors["rff.omega"] = self.rff.omega_
            tensors["rff.phi"] = self.rff.phi_
            dtypes["rff.omega"] = "<f8"
            dtypes["rff.phi"] = "<f8"
        for i, bank in enumerate(self.banks):
            tensors[f"bank{i}.features"] = bank.slot_features
            tensors[f"bank{i}.weights"] = bank.slot_weights
            dtypes[f"bank{i}.features"] = "<f8"
            dtypes[f"bank{i}.weights"] = "<f8"
        for name, value in self.aggregator.params().items():
            tensors[f"aggregator.{name}"] = np.asarray(value)
        meta = dict(self.meta)
        meta["config"] = self.config
        save_tensors(path, meta, tensors, dtypes)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        meta, tensors = load_tensors(path)
        if meta.get("kind") != BUNDLE_KIND:
            raise DataError("bad_header", f"{path}: not a model bundle")
        config = meta.pop("config", {})

        distiller = None
        if "distiller" in meta:
            dmeta = meta["distiller"]
            distiller = InstanceScorer(dmeta["n_features"], dmeta["hidden_dim"], rng=None)
            distiller.w1 = tensors["distiller.w1"].astype(np.float64)
            distiller.b1 = tensors["distiller.b1"].astype(np.float64)
            distiller.w2 = tensors["distiller.w2"].astype(np.float64)
            distiller.b2 = float(tensors["distiller.b2"][0])

        rff = None
        if "rff" in meta:
            rff = RandomFourierMap(m=meta["rff"]["m"], seed=int(config.get("seed", 0)))
            rff.omega_ = tensors["rff.omega"].astype(np.float64)
            rff.phi_ = tensors["rff.phi"].astype(np.float64)

        banks = []
        for i, bmeta in enumerate(meta.get("banks", [])):
            banks.append(
                MemoryBank.from_state(
                    {
                        **bmeta,
                        "slot_features": tensors[f"bank{i}.features"],
                        "slot_weights": tensors[f"bank{i}.weights"],
                    }
                )
            )

        ameta = meta["aggregator"]
        aggregator = AggregatorNet(
            ameta["in_dim"], ameta["variant"], ameta["attn_dim"], ameta["mlp_dim"], rng=None
        )
        aggregator.attn_v = tensors["aggregator.attn_v"].astype(np.float64)
        aggregator.attn_g = tensors["aggregator.attn_g"].astype(np.float64)
        aggregator.attn_w = tensors["aggregator.attn_w"].astype(np.float64)
        aggregator.mlp_w1 = tensors["aggregator.mlp_w1"].astype(np.float64)
        aggregator.mlp_b1 = tensors["aggregator.mlp_b1"].astype(np.float64)
        aggregator.mlp_w2 = tensors["aggregator.mlp_w2"].astype(np.float64)
        aggregator.mlp_b2 = float(tensors["aggregator.mlp_b2"])

        return cls(
            config=config,
            meta=meta,
            distiller=distiller,
            rff=rff,
            banks=banks,
            aggregator=aggregator,
        )

    def to_classifier(self) -> DecorrMILClassifier:
        """Rebuild a fitted classifier from the bundle."""
        params = {
            key: value
            for key, value in self.config.items()
            if key in DecorrMILClassifier().get_params()
        }
        clf = DecorrMILClassifier(**params)
        clf.n_features_ = int(self.meta["n_features"])
        clf.mode_ = self.meta["mode"]
        clf.task_mode_ = self.meta.get("task_mode")
        clf.classes_ = np.array([0, 1])
        clf.constraint_checks_ = int(self.meta["training"]["constraint_checks"])
        clf.stage1_loss_history_ = list(self.meta["training"]["stage1_loss"])
        clf.stage2_loss_history_ = list(self.meta["training"]["stage2_loss"])
        if self.distiller is not None:
            distiller = InstanceDistiller(
                k=clf.k,
                mode=clf.mode_,
                hidden_dim=self.distiller.hidden_dim,
                allow_small_bags=clf.allow_small_bags,
                seed=clf.seed,
            )
            distiller.scorer_ = self.distiller
            distiller.n_features_ = self.distiller.n_features
            clf.distiller_ = distiller
        else:
            clf.distiller_ = None
        clf.rff_ = self.rff
        clf.banks_ = list(self.banks)
        clf.aggregator_ = self.aggregator
        return clf
