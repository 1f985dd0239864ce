"""Fixed-capacity store of past mapped features and weights.

The bank extends per-batch weight learning toward the whole training
distribution: before optimizing a batch, one stored slot is drawn
uniformly and concatenated onto it; afterwards the batch is folded back
into the bank. Until the bank is full, batches fill empty slots
verbatim. Once full, every slot i blends via its own smoothing factor
alpha_i = i / t (slot t tracks only the newest batch, slot 1 the longest
history), so the t slots jointly cover long- and short-term memory. A
frozen bank (test phase) still serves draws but rejects updates.
"""

from __future__ import annotations

import numpy as np

UPDATE_RULES = ("all", "drawn")


class MemoryBank:
    """t slots of saved (entry_rows x feature_dim) features plus matching weights."""

    def __init__(self, capacity: int, entry_rows: int, feature_dim: int, update_rule: str = "all"):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if entry_rows < 1 or feature_dim < 1:
            raise ValueError("slot shape must be at least 1 x 1")
        if update_rule not in UPDATE_RULES:
            raise ValueError(f"update rule must be one of {UPDATE_RULES}")
        self.capacity = int(capacity)
        self.entry_rows = int(entry_rows)
        self.feature_dim = int(feature_dim)
        self.update_rule = update_rule
        self.slot_features = np.zeros((capacity, entry_rows, feature_dim))
        self.slot_weights = np.zeros((capacity, entry_rows))
        self.fill_count = 0
        self.frozen = False

    @property
    def alpha(self) -> np.ndarray:
        """Per-slot smoothing factors i/t for i = 1..t."""
        return np.arange(1, self.capacity + 1, dtype=np.float64) / self.capacity

    def _check_batch(self, features, weights):
        feats = np.asarray(features, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if feats.ndim != 2 or feats.shape[1] != self.feature_dim:
            raise ValueError(
                f"batch features must be B x {self.feature_dim}, got {feats.shape}"
            )
        if w.size != feats.shape[0]:
            raise ValueError("one weight per batch row required")
        return feats, w

    def draw_and_concat(self, batch_features, batch_weights, rng: np.random.Generator):
        """Concatenate one uniformly drawn filled slot onto the batch.

        Returns ``(extended_features, extended_weights, drawn_index)``;
        an empty bank returns the batch unchanged with index ``None``.
        The bank itself is never modified by a draw.
        """
        feats, w = self._check_batch(batch_features, batch_weights)
        if self.fill_count == 0:
            return feats, w, None
        idx = int(rng.integers(self.fill_count))
        extended_features = np.concatenate([feats, self.slot_features[idx]], axis=0)
        extended_weights = np.concatenate([w, self.slot_weights[idx]])
        return extended_features, extended_weights, idx

    def update(self, features, weights, drawn_index: int | None = None) -> None:
        """Fold the first ``entry_rows`` rows of a batch into the bank.

        While slots remain empty the rows fill the next slot verbatim.
        On a full bank, rule ``all`` blends every slot i with its own
        alpha_i; rule ``drawn`` blends only ``drawn_index``.
        """
        if self.frozen:
            raise RuntimeError("bank frozen")
        feats, w = self._check_batch(features, weights)
        if feats.shape[0] < self.entry_rows:
            raise ValueError(
                f"batch has {feats.shape[0]} rows, bank slots need {self.entry_rows}"
            )
        head_f = feats[: self.entry_rows]
        head_w = w[: self.entry_rows]
        if self.fill_count < self.capacity:
            self.slot_features[self.fill_count] = head_f
            self.slot_weights[self.fill_count] = head_w
            self.fill_count += 1
            return
        if self.update_rule == "all":
            a = self.alpha
            self.slot_features = a[:, None, None] * head_f[None] + (1.0 - a)[:, None, None] * self.slot_features
            self.slot_weights = a[:, None] * head_w[None] + (1.0 - a)[:, None] * self.slot_weights
        else:
            if drawn_index is None:
                raise ValueError("update rule 'drawn' requires the drawn slot index")
            a = float(self.alpha[drawn_index])
            self.slot_features[drawn_index] = a * head_f + (1.0 - a) * self.slot_features[drawn_index]
            self.slot_weights[drawn_index] = a * head_w + (1.0 - a) * self.slot_weights[drawn_index]

    def freeze(self) -> "MemoryBank":
        """Switch to read-only; idempotent."""
        self.frozen = True
        return self

    # -- persistence -------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "entry_rows": self.entry_rows,
            "feature_dim": self.feature_dim,
            "update_rule": self.update_rule,
            "fill_count": self.fill_count,
            "frozen": self.frozen,
            "slot_features": self.slot_features.copy(),
            "slot_weights": self.slot_weights.copy(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "MemoryBank":
        bank = cls(
            state["capacity"],
            state["entry_rows"],
            state["feature_dim"],
            state["update_rule"],
        )
        bank.fill_count = int(state["fill_count"])
        bank.frozen = bool(state["frozen"])
        bank.slot_features = np.asarray(state["slot_features"], dtype=np.float64).copy()
        bank.slot_weights = np.asarray(state["slot_weights"], dtype=np.float64).copy()
        if bank.slot_features.shape != (bank.capacity, bank.entry_rows, bank.feature_dim):
            raise ValueError("bank state arrays do not match declared shape")
        return bank
