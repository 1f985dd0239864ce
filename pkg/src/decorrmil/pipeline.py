"""The end-to-end bag classifier.

Training is staged. Stage 1 fits the instance scorer from bag labels and
is then frozen. Stage 2 iterates over training bags: the forwarded
instances are mapped to random-Fourier space, extended with a memory-bank
draw, given decorrelating weights by an inner optimization, folded back
into the bank, and the reweighted batch rows are fused and classified;
only the fusion and classifier parameters receive gradients. At
evaluation the same per-bag computation runs against the frozen banks
(draws seeded per bag id, so repeated evaluations are identical) and no
bank is modified.

Either stage can be disabled: without stage 1 every instance of a bag is
forwarded; without stage 2 the raw forwarded features go straight to the
fusion head.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .aggregate import AGG_VARIANTS, AggregatorNet, bag_loss
from .dataset import Bag, BagDataset
from .decorrelate import DECORR_MODES, WeightState, optimize_weights
from .distill import SELECTION_MODES, InstanceDistiller
from .errors import DataError, NumericError
from .memory import UPDATE_RULES, MemoryBank
from .rff import RandomFourierMap
from .seeding import component_rng, stable_id_hash


def _coerce_bags(X):
    """Accept a BagDataset (train split + task mode) or a plain bag sequence."""
    if isinstance(X, BagDataset):
        return X.train_bags, X.task_mode
    bags = list(X)
    return bags, None


class DecorrMILClassifier(BaseEstimator, ClassifierMixin):
    """Two-stage weakly supervised bag classifier.

    Parameters
    ----------
    k : instances forwarded per bag by stage 1 (also the memory-bank slot size).
    mode : "topk", "bipolar", or None to pick by task mode (bipolar for
        subtype datasets, top-k otherwise).
    stage1, stage2 : enable/disable the two causal stages; with both off
        this degenerates to a plain attention (or pooling) bag classifier.
    decorr_mode : which correlation penalty drives the per-bag weights.
    bank_update : "all" blends every slot with its own smoothing factor,
        "drawn" only the slot that was drawn for the batch.
    seed : root seed; every random component derives its own stream from it.
    """

    def __init__(
        self,
        *,
        k: int = 32,
        mode: str | None = None,
        hidden_dim: int = 128,
        epochs_stage1: int = 15,
        lr_stage1: float = 1e-3,
        momentum: float = 0.9,
        rff_m: int = 1,
        rff_seed: int | None = None,
        decorr_mode: str = "both",
        decorr_steps: int = 20,
        decorr_lr: float = 0.5,
        inprod_symmetric: bool = False,
        bank_t: int = 8,
        bank_update: str = "all",
        bank_warmup: bool = False,
        agg_variant: str = "gated_attention",
        agg_attn_dim: int = 64,
        agg_mlp_dim: int = 64,
        epochs_stage2: int = 15,
        lr_stage2: float = 1e-3,
        stage1: bool = True,
        stage2: bool = True,
        allow_small_bags: bool = True,
        seed: int = 0,
    ):
        self.k = k
        self.mode = mode
        self.hidden_dim = hidden_dim
        self.epochs_stage1 = epochs_stage1
        self.lr_stage1 = lr_stage1
        self.momentum = momentum
        self.rff_m = rff_m
        self.rff_seed = rff_seed
        self.decorr_mode = decorr_mode
        self.decorr_steps = decorr_steps
        self.decorr_lr = decorr_lr
        self.inprod_symmetric = inprod_symmetric
        self.bank_t = bank_t
        self.bank_update = bank_update
        self.bank_warmup = bank_warmup
        self.agg_variant = agg_variant
        self.agg_attn_dim = agg_attn_dim
        self.agg_mlp_dim = agg_mlp_dim
        self.epochs_stage2 = epochs_stage2
        self.lr_stage2 = lr_stage2
        self.stage1 = stage1
        self.stage2 = stage2
        self.allow_small_bags = allow_small_bags
        self.seed = seed

    # -- validation --------------------------------------------------------

    def _validate_params(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mode is not None and self.mode not in SELECTION_MODES:
            raise ValueError(f"mode must be one of {SELECTION_MODES} or None")
        if self.decorr_mode not in DECORR_MODES:
            raise ValueError(f"decorr_mode must be one of {DECORR_MODES}")
        if self.bank_update not in UPDATE_RULES:
            raise ValueError(f"bank_update must be one of {UPDATE_RULES}")
        if self.agg_variant not in AGG_VARIANTS:
            raise ValueError(f"agg_variant must be one of {AGG_VARIANTS}")
        for name in ("epochs_stage1", "epochs_stage2", "decorr_steps", "bank_t", "rff_m"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative")

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y=None):
        """Train both stages on the given bags (or a dataset's train split)."""
        self._validate_params()
        bags, task_mode = _coerce_bags(X)
        if not bags:
            raise DataError("empty_split", "no training bags")
        n = bags[0].n_features
        for bag in bags:
            if bag.n_features != n:
                raise DataError("dimension_mismatch", "bags have inconsistent feature dimensions")

        mode = self.mode
        if mode is None:
            mode = "bipolar" if task_mode == "subtype" else "topk"
        if mode == "bipolar" and self.k % 2 != 0:
            raise ValueError("bipolar selection needs an even k")

        self.n_features_ = n
        self.mode_ = mode
        self.task_mode_ = task_mode
        self.classes_ = np.array([0, 1])
        self.constraint_checks_ = 0

        if self.stage1:
            self.distiller_ = InstanceDistiller(
                k=self.k,
                mode=mode,
                hidden_dim=self.hidden_dim,
                epochs=self.epochs_stage1,
                lr=self.lr_stage1,
                momentum=self.momentum,
                allow_small_bags=self.allow_small_bags,
                seed=self.seed,
            ).fit(bags)
            self.stage1_loss_history_ = self.distiller_.loss_history_
        else:
            self.distiller_ = None
            self.stage1_loss_history_ = []

        if self.stage2:
            rff_seed = self.seed if self.rff_seed is None else self.rff_seed
            self.rff_ = RandomFourierMap(m=self.rff_m, seed=rff_seed).fit()
            in_dim = self.rff_.output_dim(n)
            self.banks_ = [
                MemoryBank(self.bank_t, rows, in_dim, self.bank_update)
                for rows in self._bank_slot_rows()
            ]
        else:
            self.rff_ = None
            self.banks_ = []
            in_dim = n

        agg_rng = component_rng(self.seed, "aggregator")
        self.aggregator_ = AggregatorNet(
            in_dim, self.agg_variant, self.agg_attn_dim, self.agg_mlp_dim, agg_rng
        )
        bank_rng = component_rng(self.seed, "bank")

        if self.stage2 and self.bank_warmup:
            for bag in bags:
                self._bag_features(bag, bank_rng, training=True)

        velocity = {
            name: np.zeros_like(np.asarray(p, dtype=np.float64))
            for name, p in self.aggregator_.params().items()
        }
        history = []
        for epoch in range(self.epochs_stage2):
            order = agg_rng.permutation(len(bags))
            losses = np.empty(len(bags))
            for j, idx in enumerate(order):
                bag = bags[idx]
                feats, _, _ = self._bag_features(bag, bank_rng, training=True)
                prob, cache = self.aggregator_.forward(feats)
                loss = bag_loss(prob, bag.label)
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite bag loss at epoch {epoch}, bag {bag.bag_id!r}",
                        trace=history,
                    )
                losses[j] = loss
                grads = self.aggregator_.backward(cache, bag.label)
                deltas = {}
                for name in velocity:
                    velocity[name] = self.momentum * velocity[name] + grads[name]
                    deltas[name] = -self.lr_stage2 * velocity[name]
                self.aggregator_.apply_update(deltas)
            history.append(float(losses.mean()))
        self.stage2_loss_history_ = history

        for bank in self.banks_:
            bank.freeze()
        return self

    def _bank_slot_rows(self) -> list:
        if self.stage1 and self.mode_ == "bipolar":
            return [self.k // 2, self.k // 2]
        return [self.k]

    # -- per-bag feature path ------------------------------------------------

    def _forward_groups(self, bag: Bag):
        """Instance rows entering stage 2, split into selection groups."""
        if not self.stage1:
            return [bag.features], None
        dset = self.distiller_.distill(bag)
        if self.mode_ == "bipolar":
            half = (len(dset.indices) + 1) // 2
            groups = [dset.features[:half], dset.features[half:]]
            groups = [g for g in groups if g.shape[0] > 0]
        else:
            groups = [dset.features]
        return groups, dset

    def _bag_features(self, bag: Bag, rng: np.random.Generator, training: bool):
        """Reweighted rows the aggregator consumes for one bag.

        Returns ``(rows, distilled_set_or_None, constraint_checks)``.
        """
        groups, dset = self._forward_groups(bag)
        if not self.stage2:
            rows = np.concatenate([np.asarray(g, dtype=np.float64) for g in groups], axis=0)
            return rows, dset, 0

        weighted_parts = []
        checks = 0
        for group, bank in zip(groups, self.banks_):
            mapped = self.rff_.transform(group)
            batch_rows = mapped.shape[0]
            ones = np.ones(batch_rows)
            extended_f, extended_w, drawn = bank.draw_and_concat(mapped, ones, rng)
            init = WeightState.from_weights(extended_w)
            result = optimize_weights(
                extended_f,
                init,
                steps=self.decorr_steps,
                lr=self.decorr_lr,
                mode=self.decorr_mode,
                symmetric_inprod=self.inprod_symmetric,
            )
            checks += result.constraint_checks
            u = result.state.weights()
            if training and not bank.frozen and batch_rows >= bank.entry_rows:
                bank.update(extended_f, u, drawn_index=drawn)
            weighted_parts.append(mapped * u[:batch_rows, None])
        if training:
            self.constraint_checks_ += checks
        return np.concatenate(weighted_parts, axis=0), dset, checks

    # -- inference -----------------------------------------------------------

    def _require_fitted(self):
        if not hasattr(self, "aggregator_"):
            raise NotFittedError("DecorrMILClassifier is not fitted; call fit first")

    def _check_bag(self, bag: Bag):
        if bag.n_features != self.n_features_:
            raise DataError(
                "dimension_mismatch",
                f"bag {bag.bag_id!r} has dimension {bag.n_features}, model expects {self.n_features_}",
            )

    def _eval_rng(self, bag: Bag) -> np.random.Generator:
        return component_rng(self.seed, "eval", (stable_id_hash(bag.bag_id),))

    def score_bag(self, bag: Bag):
        """Probability and forwarded-instance record for one bag."""
        self._require_fitted()
        self._check_bag(bag)
        feats, dset, _ = self._bag_features(bag, self._eval_rng(bag), training=False)
        prob, _ = self.aggregator_.forward(feats)
        return prob, dset

    def predict_proba(self, bags) -> np.ndarray:
        """Positive-class probability per bag, as an (n_bags, 2) array."""
        if isinstance(bags, BagDataset):
            bags = bags.bags
        scores = np.array([self.score_bag(bag)[0] for bag in bags])
        return np.column_stack([1.0 - scores, scores])

    def decision_scores(self, bags) -> np.ndarray:
        """Positive-class probability per bag as a flat vector."""
        return self.predict_proba(bags)[:, 1]

    def predict(self, bags) -> np.ndarray:
        return (self.decision_scores(bags) >= 0.5).astype(int)
