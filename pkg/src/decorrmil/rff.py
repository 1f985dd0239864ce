"""Random cosine feature map approximating a Gaussian kernel.

Each of ``m`` random samples draws a scalar frequency w_j ~ N(0, 1) and a
phase p_j ~ Uniform[0, 2*pi), and maps a feature vector h elementwise to
sqrt(2) * cos(w_j * h + p_j). The m blocks are concatenated, so an
(L, n) input becomes (L, n*m). Averaged over many samples, products of
mapped scalars recover the Gaussian kernel exp(-(a-b)^2 / 2), which is
what lets downstream correlation penalties capture nonlinear dependence.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .seeding import component_rng

ROOT2 = float(np.sqrt(2.0))


class RandomFourierMap(BaseEstimator, TransformerMixin):
    """Frozen random cosine map; the same map must serve train and test."""

    def __init__(self, m: int = 1, seed: int = 0):
        self.m = m
        self.seed = seed

    def fit(self, X=None, y=None):
        """Draw the frequencies and phases; ``X`` is ignored."""
        if self.m < 1:
            raise ValueError("m must be >= 1")
        rng = component_rng(self.seed, "rff")
        self.omega_ = rng.standard_normal(self.m)
        self.phi_ = rng.uniform(0.0, 2.0 * np.pi, self.m)
        return self

    def _require_fitted(self):
        if not hasattr(self, "omega_"):
            raise NotFittedError("RandomFourierMap is not fitted; call fit first")

    def transform(self, X) -> np.ndarray:
        """Map an (L, n) matrix to (L, n*m); every output lies in [-sqrt(2), sqrt(2)].

        Block j (columns [j*n, (j+1)*n)) holds sqrt(2)*cos(omega_j * X + phi_j).
        """
        self._require_fitted()
        feats = np.asarray(X, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("expected an L x n feature matrix")
        if not np.isfinite(feats).all():
            raise ValueError("features contain NaN or Inf")
        blocks = ROOT2 * np.cos(
            feats[:, None, :] * self.omega_[None, :, None] + self.phi_[None, :, None]
        )
        return blocks.reshape(feats.shape[0], self.m * feats.shape[1])

    def output_dim(self, n_features: int) -> int:
        return int(self.m) * int(n_features)
