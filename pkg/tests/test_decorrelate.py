import math

import numpy as np
import pytest

from decorrmil import (
    NumericError,
    WeightState,
    build_correlation_matrices,
    covariance_matrix,
    decorrelation_grad,
    decorrelation_loss,
    inner_product_matrix,
    optimize_weights,
    reweight,
)


# -- independent scalar oracles ------------------------------------------------


def softplus_scalar(v):
    return math.log1p(math.exp(-abs(v))) + max(v, 0.0)


def weights_oracle(v):
    s = np.array([softplus_scalar(x) for x in v])
    return len(v) * s / s.sum()


def covariance_oracle(weighted):
    L, D = weighted.shape
    out = np.zeros((L, L))
    for i in range(L):
        for j in range(L):
            mi = sum(weighted[i]) / D
            mj = sum(weighted[j]) / D
            acc = 0.0
            for p in range(D):
                acc += (weighted[i, p] - mi) * (weighted[j, p] - mj)
            out[i, j] = acc / (D - 1)
    return out


def inner_product_oracle(features, weighted):
    L, D = features.shape
    out = np.zeros((L, L))
    for i in range(L):
        for j in range(L):
            for p in range(D):
                out[i, j] += features[i, p] * weighted[j, p]
    return out


def loss_oracle(features, v, mode, symmetric=False):
    """Penalty evaluated with plain loops, including the weight map."""
    u = weights_oracle(v)
    weighted = np.array([u[i] * features[i] for i in range(len(u))])
    total = 0.0
    if mode in ("cov", "both"):
        cov = covariance_oracle(weighted)
        for i in range(len(u)):
            for j in range(len(u)):
                if i != j:
                    total += abs(cov[i, j])
    if mode in ("inprod", "both"):
        base = weighted if symmetric else features
        prod = inner_product_oracle(base, weighted)
        for i in range(len(u)):
            for j in range(len(u)):
                if i != j:
                    total += abs(prod[i, j])
    return total


# -- weight state ----------------------------------------------------------------


class TestWeightState:
    def test_uniform_gives_ones(self):
        u = WeightState.uniform(5).weights()
        assert np.allclose(u, 1.0, atol=1e-12)

    def test_sum_constraint_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            size = int(rng.integers(1, 40))
            state = WeightState(rng.standard_normal(size) * 3)
            u = state.weights()
            assert abs(u.sum() - size) < 1e-10
            assert u.min() > 0

    def test_from_weights_round_trip(self):
        target = np.array([2.0, 0.5, 0.5])
        u = WeightState.from_weights(target).weights()
        assert np.allclose(u, target, atol=1e-9)

    def test_from_weights_rescales(self):
        u = WeightState.from_weights([4.0, 4.0]).weights()
        assert np.allclose(u, [1.0, 1.0], atol=1e-9)

    def test_from_weights_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            WeightState.from_weights([1.0, 0.0])


class TestReweight:
    def test_identity_weights(self):
        X = np.random.default_rng(1).standard_normal((4, 6))
        assert np.array_equal(reweight(X, np.ones(4)), X)

    def test_direct_scaling(self):
        X = np.ones((3, 2))
        out = reweight(X, [2.0, 0.5, 0.5])
        assert np.allclose(out, [[2, 2], [0.5, 0.5], [0.5, 0.5]])

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((5, 7))
        u = rng.uniform(0.1, 2.0, 5)
        expected = np.array([u[i] * X[i] for i in range(5)])
        assert np.allclose(reweight(X, u), expected, atol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            reweight(np.ones((3, 2)), [1.0, 2.0])


# -- correlation matrices ----------------------------------------------------------


class TestCovarianceMatrix:
    def test_constant_row_zeroes_its_line(self):
        X = np.array([[2.0, 2.0, 2.0], [1.0, -1.0, 0.5]])
        cov = covariance_matrix(X)
        assert np.allclose(cov[0, :], 0.0) and np.allclose(cov[:, 0], 0.0)

    def test_identical_rows_hand_value(self):
        row = np.array([1.0, -1.0, 1.0, -1.0])
        cov = covariance_matrix(np.vstack([row, row]))
        assert cov[0, 1] == pytest.approx(4.0 / 3.0, abs=1e-12)
        assert cov[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)

    def test_disjoint_support_zero_mean(self):
        X = np.array([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
        assert covariance_matrix(X)[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_single_column_rejected(self):
        with pytest.raises(ValueError):
            covariance_matrix(np.ones((3, 1)))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            X = rng.standard_normal((4, 6))
            assert np.allclose(covariance_matrix(X), covariance_oracle(X), atol=1e-12)


class TestInnerProductMatrix:
    def test_orthogonal_rows_zero_offdiagonal(self):
        X = np.eye(3) * np.array([[2.0], [3.0], [0.5]])
        u = np.array([1.4, 0.9, 0.7])
        M = inner_product_matrix(X, reweight(X, u))
        off = M - np.diag(np.diag(M))
        assert np.allclose(off, 0.0)

    def test_basis_rows_identity(self):
        X = np.eye(2)
        assert np.allclose(inner_product_matrix(X, reweight(X, [1.0, 1.0])), np.eye(2))

    def test_one_sided_weighting_is_asymmetric(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((3, 5))
        M = inner_product_matrix(X, reweight(X, [2.0, 0.5, 0.5]))
        assert not np.allclose(M, M.T)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((4, 6))
        u = rng.uniform(0.2, 2.0, 4)
        weighted = reweight(X, u)
        assert np.allclose(inner_product_matrix(X, weighted), inner_product_oracle(X, weighted), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            inner_product_matrix(np.ones((2, 3)), np.ones((3, 3)))


class TestDecorrelationLoss:
    def test_diagonal_matrix_zero(self):
        mats = build_correlation_matrices(np.eye(3) * 2.0, np.ones(3), mode="inprod")
        assert decorrelation_loss(mats) == pytest.approx(0.0, abs=1e-12)

    def test_two_by_two_all_ones(self):
        row = np.array([1.0, -1.0, 1.0])
        X = np.vstack([row, row])
        # Covariance here is the all-(4/3) matrix scaled: compute directly.
        mats = build_correlation_matrices(X, np.ones(2), mode="cov")
        expected = 2 * abs(covariance_oracle(X)[0, 1])
        assert decorrelation_loss(mats) == pytest.approx(expected, abs=1e-12)

    def test_matches_double_loop_oracle_both(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((5, 7))
        v = rng.standard_normal(5)
        u = weights_oracle(v)
        mats = build_correlation_matrices(X, u, mode="both")
        assert decorrelation_loss(mats) == pytest.approx(loss_oracle(X, v, "both"), rel=1e-10)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((6, 5))
        u = rng.uniform(0.5, 1.5, 6)
        u = u * (6 / u.sum())
        perm = rng.permutation(6)
        for mode in ("cov", "inprod", "both"):
            a = decorrelation_loss(build_correlation_matrices(X, u, mode))
            b = decorrelation_loss(build_correlation_matrices(X[perm], u[perm], mode))
            assert a == pytest.approx(b, rel=1e-10)


# -- gradients ---------------------------------------------------------------------


class TestDecorrelationGrad:
    def test_zero_features_zero_gradient(self):
        state = WeightState(np.array([0.3, -0.4, 0.1]))
        grad = decorrelation_grad(np.zeros((3, 4)), state, mode="both")
        assert np.allclose(grad, 0.0)

    def test_hand_derived_two_by_two(self):
        # Two rows in R^2, covariance mode. By hand:
        #   centered rows: (-1, 1) and (1, -1), so Ghat12 = -2, |Ghat12| = 2
        #   loss = 2 * u1 * u2 * |Ghat12| / (D-1) = 4 u1 u2
        #   dloss/dv1 = 4 sig(v1) s2 (u2 - u1) * 2 / S^2  ... assembled below
        X = np.array([[1.0, 3.0], [2.0, 0.0]])
        v = np.array([0.3, -0.2])
        s = np.array([softplus_scalar(v[0]), softplus_scalar(v[1])])
        S = s.sum()
        u = 2 * s / S
        sig = 1.0 / (1.0 + np.exp(-v))
        g_abs = 2.0  # |Ghat12|
        # dloss/du_i = 2 * u_other * g_abs; chain through u_i = 2 s_i / S.
        dl_dv1 = 2 * g_abs * (u[1] * (2 * sig[0] * s[1] / S**2) + u[0] * (-2 * s[1] * sig[0] / S**2))
        dl_dv2 = 2 * g_abs * (u[0] * (2 * sig[1] * s[0] / S**2) + u[1] * (-2 * s[0] * sig[1] / S**2))
        grad = decorrelation_grad(X, WeightState(v), mode="cov")
        assert grad[0] == pytest.approx(dl_dv1, abs=1e-8)
        assert grad[1] == pytest.approx(dl_dv2, abs=1e-8)

    @pytest.mark.parametrize("mode", ["cov", "inprod", "both"])
    @pytest.mark.parametrize("symmetric", [False, True])
    def test_matches_finite_differences(self, mode, symmetric):
        rng = np.random.default_rng(8)
        for _ in range(5):
            L = int(rng.integers(2, 10))
            D = int(rng.integers(2, 12))
            X = rng.standard_normal((L, D))
            v = rng.standard_normal(L) * 0.5
            grad = decorrelation_grad(X, WeightState(v), mode=mode, symmetric_inprod=symmetric)
            numeric = np.zeros(L)
            eps = 1e-5
            for i in range(L):
                vp, vm = v.copy(), v.copy()
                vp[i] += eps
                vm[i] -= eps
                numeric[i] = (
                    loss_oracle(X, vp, mode, symmetric) - loss_oracle(X, vm, mode, symmetric)
                ) / (2 * eps)
            rel = np.abs(grad - numeric) / np.maximum(1e-8, np.abs(grad) + np.abs(numeric))
            assert rel.max() < 1e-4


# -- optimizer -----------------------------------------------------------------------


class TestOptimizeWeights:
    def test_zero_steps_returns_init(self):
        X = np.random.default_rng(9).standard_normal((4, 5))
        init = WeightState(np.array([0.1, 0.2, -0.3, 0.5]))
        result = optimize_weights(X, init, steps=0)
        assert np.array_equal(result.state.raw, init.raw)

    def test_downweights_duplicated_rows(self):
        # Rows (a, a, b) with a ⟂ b: the inner-product penalty is, by hand,
        # loss(u) = |<a,a>| (u1 + u2) = 4 (u1 + u2), so the symmetric-weight
        # grid oracle loss(t) = 8t is minimized by pushing t down.
        a = np.array([2.0, 0.0, 0.0, 0.0])
        b = np.array([0.0, 3.0, 0.0, 0.0])
        X = np.vstack([a, a, b])
        uniform_loss = decorrelation_loss(build_correlation_matrices(X, np.ones(3), "inprod"))
        assert uniform_loss == pytest.approx(8.0, abs=1e-12)

        grid = [(8 * t, t) for t in np.linspace(0.05, 1.45, 200)]
        assert min(grid)[1] == pytest.approx(0.05)  # grid oracle: smaller t is better

        result = optimize_weights(X, steps=200, lr=0.1, mode="inprod")
        u = result.state.weights()
        final = result.losses[-1]
        assert final < uniform_loss
        assert u[0] < 1.0 and u[1] < 1.0 and u[2] > 1.0
        # Consistency with the hand formula at the optimizer's weights.
        assert final == pytest.approx(4 * (u[0] + u[1]), rel=1e-8)

    def test_monotone_and_constraint_preserving(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((8, 12))
        result = optimize_weights(X, steps=40, lr=0.05, mode="both")
        losses = np.array(result.losses)
        assert np.all(np.diff(losses) <= 1e-12)
        u = result.state.weights()
        assert abs(u.sum() - 8) < 1e-10 and u.min() > 0
        assert 0 < result.constraint_checks <= 40
        assert result.constraint_checks == len(result.losses) - 1

    def test_halves_loss_on_correlated_gaussians(self):
        # Shared latent factor makes rows strongly correlated; learned
        # weights must cut the penalty to half its uniform value on
        # average (recorded over ten seeds).
        ratios = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            shared = rng.standard_normal((1, 64))
            X = 2.0 * rng.standard_normal((32, 1)) @ shared + rng.standard_normal((32, 64))
            result = optimize_weights(X, steps=200, lr=0.05, mode="both")
            ratios.append(result.losses[-1] / result.losses[0])
        assert np.mean(ratios) <= 0.5

    def test_orthogonal_rows_zero_loss_any_weights(self):
        X = np.eye(4) * np.array([[1.0], [2.0], [3.0], [0.5]])
        for raw in (np.zeros(4), np.array([1.0, -1.0, 0.5, 0.2])):
            mats = build_correlation_matrices(X, WeightState(raw).weights(), "inprod")
            assert decorrelation_loss(mats) == pytest.approx(0.0, abs=1e-12)

    def test_invalid_mode_rejected(self):
        with pytest.raises(ValueError):
            optimize_weights(np.ones((2, 3)), steps=1, mode="banana")
