"""Bag-level head: permutation-invariant fusion of instance rows plus an MLP classifier.

The default fusion is gated attention: each instance row is scored by
w . (tanh(V row) * sigmoid(G row)), scores are softmax-normalized over
the bag, and the fused vector is the attention-weighted sum of rows.
Max and mean pooling are provided as plain alternatives (their attention
vector is reported uniform). The classifier is a one-hidden-layer MLP
with ReLU and a sigmoid output. Gradients are computed analytically.
"""

from __future__ import annotations

import numpy as np

from .distill import PROB_EPS, sigmoid
from .errors import DataError

AGG_VARIANTS = ("gated_attention", "max_pool", "mean_pool")

_PARAM_NAMES = ("attn_v", "attn_g", "attn_w", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")


def bag_loss(pred: float, label: int) -> float:
    """Binary cross-entropy of one bag prediction, clamped to [1e-7, 1 - 1e-7]."""
    p = min(max(float(pred), PROB_EPS), 1.0 - PROB_EPS)
    if label == 1:
        return -float(np.log(p))
    return -float(np.log1p(-p))


class AggregatorNet:
    """Fusion head with analytic gradients.

    With ``rng=None`` all parameters start at zero; the MLP then outputs
    exactly 0.5 and attention is uniform.
    """

    def __init__(
        self,
        in_dim: int,
        variant: str = "gated_attention",
        attn_dim: int = 64,
        mlp_dim: int = 64,
        rng: np.random.Generator | None = None,
    ):
        if variant not in AGG_VARIANTS:
            raise ValueError(f"variant must be one of {AGG_VARIANTS}")
        if in_dim < 1 or attn_dim < 1 or mlp_dim < 1:
            raise ValueError("dimensions must be >= 1")
        self.in_dim = int(in_dim)
        self.variant = variant
        self.attn_dim = int(attn_dim)
        self.mlp_dim = int(mlp_dim)
        if rng is None:
            self.attn_v = np.zeros((attn_dim, in_dim))
            self.attn_g = np.zeros((attn_dim, in_dim))
            self.attn_w = np.zeros(attn_dim)
            self.mlp_w1 = np.zeros((mlp_dim, in_dim))
            self.mlp_w2 = np.zeros(mlp_dim)
        else:
            self.attn_v = rng.standard_normal((attn_dim, in_dim)) / np.sqrt(in_dim)
            self.attn_g = rng.standard_normal((attn_dim, in_dim)) / np.sqrt(in_dim)
            self.attn_w = rng.standard_normal(attn_dim) / np.sqrt(attn_dim)
            self.mlp_w1 = rng.standard_normal((mlp_dim, in_dim)) * np.sqrt(2.0 / in_dim)
            self.mlp_w2 = rng.standard_normal(mlp_dim) / np.sqrt(mlp_dim)
        self.mlp_b1 = np.zeros(mlp_dim)
        self.mlp_b2 = 0.0

    def _check_features(self, features) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError("empty feature set")
        if feats.shape[1] != self.in_dim:
            raise DataError(
                "dimension_mismatch",
                f"aggregator expects rows of dimension {self.in_dim}, got {feats.shape[1]}",
            )
        return feats

    def fuse(self, features):
        """Fuse instance rows into one vector; returns ``(fused, attention)``.

        Attention is non-negative and sums to one; pooling variants
        report a uniform vector.
        """
        feats = self._check_features(features)
        k = feats.shape[0]
        if self.variant == "gated_attention":
            tanh_part = np.tanh(feats @ self.attn_v.T)
            gate_part = sigmoid(feats @ self.attn_g.T)
            scores = (tanh_part * gate_part) @ self.attn_w
            shifted = scores - scores.max()
            expd = np.exp(shifted)
            attn = expd / expd.sum()
            fused = attn @ feats
        elif self.variant == "mean_pool":
            attn = np.full(k, 1.0 / k)
            fused = feats.mean(axis=0)
        else:
            attn = np.full(k, 1.0 / k)
            fused = feats.max(axis=0)
        return fused, attn

    def classify(self, fused) -> float:
        """MLP probability for a fused vector, strictly inside (0, 1)."""
        fused = np.asarray(fused, dtype=np.float64).reshape(-1)
        if fused.size != self.in_dim:
            raise DataError(
                "dimension_mismatch",
                f"classifier expects a vector of dimension {self.in_dim}, got {fused.size}",
            )
        hidden = np.maximum(self.mlp_w1 @ fused + self.mlp_b1, 0.0)
        return float(sigmoid(np.array([hidden @ self.mlp_w2 + self.mlp_b2]))[0])

    def forward(self, features):
        """Full pass; returns ``(probability, cache)`` for :meth:`backward`."""
        feats = self._check_features(features)
        fused, attn = self.fuse(feats)
        pre = self.mlp_w1 @ fused + self.mlp_b1
        hidden = np.maximum(pre, 0.0)
        logit = hidden @ self.mlp_w2 + self.mlp_b2
        prob = float(sigmoid(np.array([logit]))[0])
        cache = {"features": feats, "fused": fused, "attn": attn, "pre": pre, "hidden": hidden, "prob": prob}
        if self.variant == "gated_attention":
            cache["tanh_part"] = np.tanh(feats @ self.attn_v.T)
            cache["gate_part"] = sigmoid(feats @ self.attn_g.T)
        elif self.variant == "max_pool":
            cache["argmax_rows"] = feats.argmax(axis=0)
        return prob, cache

    def backward(self, cache, label: int) -> dict:
        """Gradients of :func:`bag_loss` at ``cache`` w.r.t. every parameter."""
        feats = cache["features"]
        attn = cache["attn"]
        dlogit = cache["prob"] - label
        grads = {
            "mlp_w2": dlogit * cache["hidden"],
            "mlp_b2": dlogit,
        }
        dhidden = dlogit * self.mlp_w2
        dpre = dhidden * (cache["pre"] > 0)
        grads["mlp_w1"] = np.outer(dpre, cache["fused"])
        grads["mlp_b1"] = dpre
        dfused = self.mlp_w1.T @ dpre

        if self.variant == "gated_attention":
            dattn = feats @ dfused
            dscores = attn * (dattn - float(attn @ dattn))
            tg = cache["tanh_part"] * cache["gate_part"]
            grads["attn_w"] = tg.T @ dscores
            dtg = np.outer(dscores, self.attn_w)
            dtanh = dtg * cache["gate_part"] * (1.0 - cache["tanh_part"] ** 2)
            dgate = dtg * cache["tanh_part"] * cache["gate_part"] * (1.0 - cache["gate_part"])
            grads["attn_v"] = dtanh.T @ feats
            grads["attn_g"] = dgate.T @ feats
        else:
            grads["attn_v"] = np.zeros_like(self.attn_v)
            grads["attn_g"] = np.zeros_like(self.attn_g)
            grads["attn_w"] = np.zeros_like(self.attn_w)
        return grads

    # -- parameter plumbing --------------------------------------------------

    def params(self) -> dict:
        return {
            "attn_v": self.attn_v,
            "attn_g": self.attn_g,
            "attn_w": self.attn_w,
            "mlp_w1": self.mlp_w1,
            "mlp_b1": self.mlp_b1,
            "mlp_w2": self.mlp_w2,
            "mlp_b2": np.asarray(self.mlp_b2),
        }

    def apply_update(self, deltas: dict) -> None:
        self.attn_v += deltas["attn_v"]
        self.attn_g += deltas["attn_g"]
        self.attn_w += deltas["attn_w"]
        self.mlp_w1 += deltas["mlp_w1"]
        self.mlp_b1 += deltas["mlp_b1"]
        self.mlp_w2 += deltas["mlp_w2"]
        self.mlp_b2 = float(self.mlp_b2 + deltas["mlp_b2"])

    def param_vector(self) -> np.ndarray:
        parts = [np.asarray(self.params()[name], dtype=np.float64).ravel() for name in _PARAM_NAMES]
        return np.concatenate(parts)

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        i = 0
        for name in _PARAM_NAMES:
            current = np.asarray(self.params()[name])
            size = current.size
            block = vec[i : i + size].reshape(current.shape)
            if name == "mlp_b2":
                self.mlp_b2 = float(block)
            else:
                setattr(self, name, block.copy())
            i += size

    def grad_vector(self, grads: dict) -> np.ndarray:
        parts = [np.asarray(grads[name], dtype=np.float64).ravel() for name in _PARAM_NAMES]
        return np.concatenate(parts)
