import math

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from decorrmil import RandomFourierMap


def rff_oracle(omega, phi, X):
    """Scalar-loop rendering of the cosine map."""
    L, n = X.shape
    m = omega.size
    out = np.empty((L, n * m))
    for i in range(L):
        for j in range(m):
            for c in range(n):
                out[i, j * n + c] = math.sqrt(2.0) * math.cos(omega[j] * X[i, c] + phi[j])
    return out


class TestConstruction:
    def test_same_seed_identical(self):
        a = RandomFourierMap(m=1, seed=5).fit()
        b = RandomFourierMap(m=1, seed=5).fit()
        assert np.array_equal(a.omega_, b.omega_)
        assert np.array_equal(a.phi_, b.phi_)

    def test_zero_samples_rejected(self):
        with pytest.raises(ValueError):
            RandomFourierMap(m=0).fit()

    def test_frequency_moments(self):
        rmap = RandomFourierMap(m=10000, seed=0).fit()
        assert abs(rmap.omega_.mean()) < 0.05
        assert abs(rmap.omega_.var() - 1.0) < 0.1

    def test_phase_range(self):
        rmap = RandomFourierMap(m=10000, seed=1).fit()
        assert rmap.phi_.min() >= 0.0
        assert rmap.phi_.max() < 2.0 * np.pi

    def test_transform_before_fit_errors(self):
        with pytest.raises(NotFittedError):
            RandomFourierMap().transform(np.zeros((2, 3)))


class TestTransform:
    def test_zero_frequency_block_is_constant(self):
        rmap = RandomFourierMap(m=2, seed=0).fit()
        rmap.omega_[0] = 0.0
        X = np.random.default_rng(0).standard_normal((4, 3))
        out = rmap.transform(X)
        assert np.allclose(out[:, :3], math.sqrt(2.0) * math.cos(rmap.phi_[0]))

    def test_zero_input_zero_phase(self):
        rmap = RandomFourierMap(m=1, seed=0).fit()
        rmap.phi_[0] = 0.0
        out = rmap.transform(np.zeros((2, 5)))
        assert np.allclose(out, math.sqrt(2.0))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        for m in (1, 2, 4):
            rmap = RandomFourierMap(m=m, seed=7).fit()
            X = rng.standard_normal((5, 6))
            assert np.allclose(rmap.transform(X), rff_oracle(rmap.omega_, rmap.phi_, X), atol=1e-12)

    def test_output_range(self):
        rmap = RandomFourierMap(m=3, seed=2).fit()
        X = np.random.default_rng(4).standard_normal((50, 8)) * 10
        out = rmap.transform(X)
        bound = math.sqrt(2.0) + 1e-12
        assert out.min() >= -bound and out.max() <= bound

    def test_single_sample_keeps_width(self):
        rmap = RandomFourierMap(m=1, seed=0).fit()
        out = rmap.transform(np.zeros((4, 9)))
        assert out.shape == (4, 9)

    def test_non_finite_rejected(self):
        rmap = RandomFourierMap(m=1, seed=0).fit()
        bad = np.zeros((2, 2))
        bad[0, 0] = np.inf
        with pytest.raises(ValueError):
            rmap.transform(bad)


class TestKernelConsistency:
    def test_products_average_to_gaussian_kernel(self):
        # For scalars a, b: E[2 cos(wa + p) cos(wb + p)] = exp(-(a-b)^2 / 2)
        # when w ~ N(0,1) and p ~ Uniform[0, 2pi). Check the sampler at m=4096.
        rmap = RandomFourierMap(m=4096, seed=12).fit()
        for a, b in ((0.0, 0.5), (1.0, -0.3), (0.3, 0.3), (2.0, 0.0)):
            prod = 2.0 * np.cos(rmap.omega_ * a + rmap.phi_) * np.cos(rmap.omega_ * b + rmap.phi_)
            expected = math.exp(-((a - b) ** 2) / 2.0)
            assert abs(prod.mean() - expected) < 0.05
