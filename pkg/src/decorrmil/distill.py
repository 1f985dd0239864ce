"""Stage 1: a weakly supervised instance scorer and extreme-instance selection.

The scorer is a one-hidden-layer network trained from bag labels alone:
for each bag, the loss is binary cross-entropy of the bag label against
the k highest instance probabilities, so the scorer learns to surface the
instances that carry the bag's evidence without ever seeing instance
labels. Selection then forwards either the top-k instances ("topk") or
the k/2 highest plus k/2 lowest ("bipolar", for tasks where both classes
have characteristic instances).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .dataset import Bag, BagDataset
from .errors import DataError, NumericError
from .seeding import component_rng
from .tensorio import load_tensors, save_tensors

PROB_EPS = 1e-7

SELECTION_MODES = ("topk", "bipolar")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def select_top_k(probs, k: int) -> np.ndarray:
    """Indices of the k largest probabilities.

    Ties break toward the lower index; the result is ordered by
    descending probability, then ascending index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValueError("probabilities must be a 1-D vector")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > probs.shape[0]:
        raise ValueError("bag smaller than distillation scale")
    order = np.argsort(-probs, kind="stable")
    return order[:k].astype(np.int64)


def select_bipolar(probs, k: int) -> np.ndarray:
    """Indices of the k/2 largest and k/2 smallest probabilities.

    The two halves are disjoint segments of one stable descending sort,
    so they can never overlap when ``k <= len(probs)``. Output order:
    the max half by descending probability, then the min half by
    ascending probability.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValueError("probabilities must be a 1-D vector")
    if k < 2 or k % 2 != 0:
        raise ValueError("bipolar selection needs a positive even k")
    if k > probs.shape[0]:
        raise ValueError("bag smaller than distillation scale")
    order = np.argsort(-probs, kind="stable")
    half = k // 2
    hi = order[:half]
    lo = order[probs.shape[0] - half :][::-1]
    return np.concatenate([hi, lo]).astype(np.int64)


def distillation_loss(top_probs, label: int) -> float:
    """Mean binary cross-entropy of ``label`` against the selected probabilities.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    p = np.asarray(top_probs, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty probability vector")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    if label == 1:
        return float(-np.mean(np.log(p)))
    return float(-np.mean(np.log1p(-p)))


@dataclass
class DistilledSet:
    """Instances forwarded from one bag.

    ``indices`` are positions within the bag; ``features`` are the
    corresponding rows of the bag's feature matrix, in selection order.
    For bipolar selection the max half occupies the first ceil(len/2)
    rows and the min half the remainder.
    """

    bag_id: str
    indices: np.ndarray
    features: np.ndarray
    probs: np.ndarray
    mode: str


class InstanceScorer:
    """One-hidden-layer scorer mapping an n-vector to P(instance positive).

    With ``rng=None`` all parameters start at zero (every prediction is
    then exactly 0.5); otherwise weights draw from scaled normals.
    """

    def __init__(self, n_features: int, hidden_dim: int = 128, rng: np.random.Generator | None = None):
        if n_features < 1:
            raise ValueError("n_features must be >= 1")
        if hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        self.n_features = int(n_features)
        self.hidden_dim = int(hidden_dim)
        if rng is None:
            self.w1 = np.zeros((hidden_dim, n_features))
            self.b1 = np.zeros(hidden_dim)
            self.w2 = np.zeros(hidden_dim)
            self.b2 = 0.0
        else:
            self.w1 = rng.standard_normal((hidden_dim, n_features)) * np.sqrt(2.0 / n_features)
            self.b1 = np.zeros(hidden_dim)
            self.w2 = rng.standard_normal(hidden_dim) * np.sqrt(1.0 / hidden_dim)
            self.b2 = 0.0

    # -- forward ---------------------------------------------------------

    def _check_input(self, features: np.ndarray) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.n_features:
            raise DataError(
                "dimension_mismatch",
                f"scorer expects K x {self.n_features} features, got {feats.shape}",
            )
        return feats

    def logits(self, features) -> np.ndarray:
        feats = self._check_input(features)
        hidden = np.maximum(feats @ self.w1.T + self.b1, 0.0)
        return hidden @ self.w2 + self.b2

    def predict_proba(self, features) -> np.ndarray:
        """Per-instance positive probability, each strictly inside (0, 1)."""
        return sigmoid(self.logits(features))

    # -- training support --------------------------------------------------

    def bag_loss_grads(self, features, label: int, k: int):
        """Top-k loss for one bag and its gradients w.r.t. all parameters.

        Returns ``(loss, grads, selected)`` where ``grads`` has the same
        keys as :meth:`params`.
        """
        feats = self._check_input(features)
        pre = feats @ self.w1.T + self.b1
        hidden = np.maximum(pre, 0.0)
        logit = hidden @ self.w2 + self.b2
        probs = sigmoid(logit)
        selected = select_top_k(probs, k)
        loss = distillation_loss(probs[selected], label)

        dlogit = np.zeros_like(probs)
        dlogit[selected] = (probs[selected] - label) / selected.size
        dhidden = np.outer(dlogit, self.w2)
        dpre = dhidden * (pre > 0)
        grads = {
            "w1": dpre.T @ feats,
            "b1": dpre.sum(axis=0),
            "w2": hidden.T @ dlogit,
            "b2": float(dlogit.sum()),
        }
        return loss, grads, selected

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": np.asarray(self.b2)}

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        i = 0
        size = self.w1.size
        self.w1 = vec[i : i + size].reshape(self.w1.shape).copy()
        i += size
        self.b1 = vec[i : i + self.b1.size].copy()
        i += self.b1.size
        self.w2 = vec[i : i + self.w2.size].copy()
        i += self.w2.size
        self.b2 = float(vec[i])

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        meta = {"kind": "instance_scorer", "n_features": self.n_features, "hidden_dim": self.hidden_dim}
        save_tensors(path, meta, {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": np.array([self.b2])})

    @classmethod
    def load(cls, path) -> "InstanceScorer":
        meta, tensors = load_tensors(path)
        if meta.get("kind") != "instance_scorer":
            raise DataError("bad_header", f"{path}: not an instance scorer checkpoint")
        scorer = cls(meta["n_features"], meta["hidden_dim"], rng=None)
        scorer.w1 = tensors["w1"].astype(np.float64)
        scorer.b1 = tensors["b1"].astype(np.float64)
        scorer.w2 = tensors["w2"].astype(np.float64)
        scorer.b2 = float(tensors["b2"][0])
        return scorer


def _as_bag_list(data) -> list:
    if isinstance(data, BagDataset):
        return data.train_bags
    return list(data)


class InstanceDistiller(BaseEstimator):
    """Trains the instance scorer from bag labels and selects forwarded instances.

    Parameters mirror the CLI: ``k`` is the number of instances forwarded
    per bag, ``mode`` chooses top-k or bipolar selection (the training
    loss always uses the top k regardless of mode), and
    ``allow_small_bags`` keeps bags with fewer than ``k`` instances by
    selecting all of them instead of raising.
    """

    def __init__(
        self,
        k: int = 32,
        mode: str = "topk",
        hidden_dim: int = 128,
        epochs: int = 15,
        lr: float = 1e-3,
        momentum: float = 0.9,
        allow_small_bags: bool = True,
        seed: int = 0,
    ):
        self.k = k
        self.mode = mode
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.allow_small_bags = allow_small_bags
        self.seed = seed

    def _effective_k(self, n_instances: int) -> int:
        if n_instances >= self.k:
            return self.k
        if not self.allow_small_bags:
            raise DataError("bag_too_small", f"bag has {n_instances} instances, k={self.k}")
        return n_instances

    def fit(self, X, y=None):
        """Train on the given bags (or a dataset's train split)."""
        bags = _as_bag_list(X)
        if not bags:
            raise DataError("empty_split", "no training bags")
        n = bags[0].n_features
        for bag in bags:
            if bag.n_features != n:
                raise DataError("dimension_mismatch", "bags have inconsistent feature dimensions")
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"mode must be one of {SELECTION_MODES}")

        rng = component_rng(self.seed, "distiller")
        scorer = InstanceScorer(n, self.hidden_dim, rng)
        velocity = {name: np.zeros_like(np.asarray(p, dtype=np.float64)) for name, p in scorer.params().items()}
        history = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(bags))
            losses = np.empty(len(bags))
            for j, idx in enumerate(order):
                bag = bags[idx]
                k_eff = self._effective_k(bag.n_instances)
                loss, grads, _ = scorer.bag_loss_grads(bag.features, bag.label, k_eff)
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite distillation loss at epoch {epoch}, bag {bag.bag_id!r}",
                        trace=history,
                    )
                losses[j] = loss
                for name in velocity:
                    velocity[name] = self.momentum * velocity[name] + grads[name]
                scorer.w1 -= self.lr * velocity["w1"]
                scorer.b1 -= self.lr * velocity["b1"]
                scorer.w2 -= self.lr * velocity["w2"]
                scorer.b2 -= self.lr * velocity["b2"]
            history.append(float(losses.mean()))
        self.scorer_ = scorer
        self.loss_history_ = history
        self.n_features_ = n
        return self

    def _require_fitted(self):
        if not hasattr(self, "scorer_"):
            raise NotFittedError("InstanceDistiller is not fitted; call fit first")

    def predict_instances(self, bag) -> np.ndarray:
        """Per-instance probabilities for one bag (or raw feature matrix)."""
        self._require_fitted()
        feats = bag.features if isinstance(bag, Bag) else bag
        return self.scorer_.predict_proba(feats)

    def distill(self, bag: Bag, mode: str | None = None, k: int | None = None) -> DistilledSet:
        """Select and gather the forwarded instances for one bag."""
        self._require_fitted()
        mode = self.mode if mode is None else mode
        k = self.k if k is None else k
        if mode not in SELECTION_MODES:
            raise ValueError(f"mode must be one of {SELECTION_MODES}")
        probs = self.predict_instances(bag)
        k_eff = k
        if bag.n_instances < k:
            if not self.allow_small_bags:
                raise DataError("bag_too_small", f"bag {bag.bag_id!r} has {bag.n_instances} instances, k={k}")
            k_eff = bag.n_instances
        if mode == "topk":
            indices = select_top_k(probs, k_eff)
        elif k_eff % 2 == 0:
            indices = select_bipolar(probs, k_eff)
        else:
            # Odd k_eff only happens when the whole (odd-sized) bag is kept
            # under the small-bag fallback: split the full descending order.
            order = np.argsort(-probs, kind="stable")
            half = (k_eff + 1) // 2
            indices = np.concatenate([order[:half], order[half:][::-1]]).astype(np.int64)
        return DistilledSet(
            bag_id=bag.bag_id,
            indices=indices,
            features=bag.features[indices],
            probs=probs[indices],
            mode=mode,
        )
