"""Per-instance weight learning that shrinks off-diagonal feature correlation.

Given L mapped instance rows, each row i gets a positive weight u_i with
sum(u) == L enforced exactly through a normalized-softplus
parametrization of free variables v. Two L x L correlation matrices are
supported:

* ``cov``    — sample covariance across feature columns of the weighted
  rows (symmetric);
* ``inprod`` — inner products of unweighted rows against weighted rows,
  i.e. M[i, j] = <row_i, u_j * row_j> (one-sided weighting; a symmetric
  u_i * u_j variant is available behind a flag).

The objective is the sum of absolute off-diagonal entries of the chosen
matrix (or of both), minimized over v by gradient descent with
backtracking step halving. Because centering commutes with row scaling
and u > 0, both penalties collapse to closed forms in u over fixed Gram
matrices, which the optimizer exploits: the Gram matrices are built once
per call and every step costs O(L^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

DECORR_MODES = ("cov", "inprod", "both")

SUM_CONSTRAINT_TOL = 1e-10
MAX_HALVINGS = 10


def softplus(v: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, v)


def inv_softplus(y: np.ndarray) -> np.ndarray:
    """Inverse of softplus for strictly positive y."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("inverse softplus requires positive inputs")
    out = np.empty_like(y)
    small = y < 1e-3  # exp(-y) rounds to 1.0 there; expm1 keeps precision
    out[small] = np.log(np.expm1(y[small]))
    out[~small] = y[~small] + np.log1p(-np.exp(-y[~small]))
    return out


@dataclass
class WeightState:
    """Free parameters v and the induced weights u.

    u_i = L * softplus(v_i) / sum_j softplus(v_j), so every u_i is
    strictly positive and sum(u) == L by construction.
    """

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(-1)
        if self.raw.size == 0:
            raise ValueError("weight state needs at least one entry")

    @property
    def size(self) -> int:
        return self.raw.size

    def weights(self) -> np.ndarray:
        s = softplus(self.raw)
        u = s * (self.size / s.sum())
        return u * (self.size / u.sum())

    @classmethod
    def uniform(cls, size: int) -> "WeightState":
        return cls(np.zeros(int(size)))

    @classmethod
    def from_weights(cls, target) -> "WeightState":
        """State whose weights reproduce ``target`` rescaled to sum to its length."""
        target = np.asarray(target, dtype=np.float64).reshape(-1)
        if target.size == 0 or np.any(target <= 0):
            raise ValueError("target weights must be positive")
        scaled = target * (target.size / target.sum())
        return cls(inv_softplus(scaled))


def reweight(features, weights) -> np.ndarray:
    """Scale row i of ``features`` by ``weights[i]``."""
    feats = np.asarray(features, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if feats.ndim != 2 or feats.shape[0] != w.size:
        raise ValueError("one weight per feature row required")
    return feats * w[:, None]


def covariance_matrix(weighted) -> np.ndarray:
    """Row-by-row sample covariance across the D feature columns (needs D >= 2)."""
    w = np.asarray(weighted, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] < 2:
        raise ValueError("covariance needs at least two feature columns")
    centered = w - w.mean(axis=1, keepdims=True)
    return centered @ centered.T / (w.shape[1] - 1)


def inner_product_matrix(features, weighted) -> np.ndarray:
    """M[i, j] = <unweighted row i, weighted row j>; not symmetric in general."""
    f = np.asarray(features, dtype=np.float64)
    w = np.asarray(weighted, dtype=np.float64)
    if f.shape != w.shape or f.ndim != 2:
        raise ValueError("features and weighted features must share an L x D shape")
    return f @ w.T


@dataclass
class CorrelationMatrices:
    """The matrices entering the off-diagonal penalty for one instance set."""

    mode: str
    cov: np.ndarray | None = None
    inprod: np.ndarray | None = None


def build_correlation_matrices(
    features, weights, mode: str = "both", symmetric_inprod: bool = False
) -> CorrelationMatrices:
    if mode not in DECORR_MODES:
        raise ValueError(f"mode must be one of {DECORR_MODES}")
    weighted = reweight(features, weights)
    cov = covariance_matrix(weighted) if mode in ("cov", "both") else None
    inprod = None
    if mode in ("inprod", "both"):
        base = weighted if symmetric_inprod else np.asarray(features, dtype=np.float64)
        inprod = inner_product_matrix(base, weighted)
    return CorrelationMatrices(mode=mode, cov=cov, inprod=inprod)


def offdiagonal_abs_sum(matrix) -> float:
    m = np.asarray(matrix, dtype=np.float64)
    return float(np.abs(m).sum() - np.abs(np.diagonal(m)).sum())


def decorrelation_loss(matrices: CorrelationMatrices) -> float:
    """Sum of absolute off-diagonal entries over the selected matrices."""
    total = 0.0
    if matrices.mode in ("cov", "both"):
        total += offdiagonal_abs_sum(matrices.cov)
    if matrices.mode in ("inprod", "both"):
        total += offdiagonal_abs_sum(matrices.inprod)
    return total


# -- closed forms over fixed Gram matrices ----------------------------------
#
# With u > 0:
#   cov penalty      = sum_{i!=j} u_i u_j |Ghat_ij| / (D-1),  Ghat = centered Gram
#   one-sided inprod = sum_{i!=j} |G_ij| u_j                  G    = raw Gram
#   symmetric inprod = sum_{i!=j} u_i u_j |G_ij|
# so loss(u) = u' A u + c' u for data-dependent A (zero diagonal) and c.


@dataclass
class _Penalty:
    quad: np.ndarray | None
    lin: np.ndarray | None

    def loss(self, u: np.ndarray) -> float:
        total = 0.0
        if self.quad is not None:
            total += float(u @ self.quad @ u)
        if self.lin is not None:
            total += float(self.lin @ u)
        return total

    def grad_u(self, u: np.ndarray) -> np.ndarray:
        g = np.zeros_like(u)
        if self.quad is not None:
            g += 2.0 * (self.quad @ u)
        if self.lin is not None:
            g += self.lin
        return g


def _build_penalty(features, mode: str, symmetric_inprod: bool) -> _Penalty:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError("expected an L x D feature matrix")
    if mode not in DECORR_MODES:
        raise ValueError(f"mode must be one of {DECORR_MODES}")
    quad = None
    lin = None
    if mode in ("cov", "both"):
        if feats.shape[1] < 2:
            raise ValueError("covariance needs at least two feature columns")
        centered = feats - feats.mean(axis=1, keepdims=True)
        ghat = np.abs(centered @ centered.T) / (feats.shape[1] - 1)
        np.fill_diagonal(ghat, 0.0)
        quad = ghat
    if mode in ("inprod", "both"):
        gram = np.abs(feats @ feats.T)
        np.fill_diagonal(gram, 0.0)
        if symmetric_inprod:
            quad = gram if quad is None else quad + gram
        else:
            lin = gram.sum(axis=0)
    return _Penalty(quad=quad, lin=lin)


def _chain_to_raw(raw: np.ndarray, u: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    # d u_i / d v_j for u = L * s / sum(s), s = softplus(v).
    total = softplus(raw).sum()
    sig = np.empty_like(raw)
    pos = raw >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-raw[pos]))
    e = np.exp(raw[~pos])
    sig[~pos] = e / (1.0 + e)
    return (sig / total) * (raw.size * grad_u - float(grad_u @ u))


def decorrelation_grad(
    features, state: WeightState, mode: str = "both", symmetric_inprod: bool = False
) -> np.ndarray:
    """Gradient of the off-diagonal penalty w.r.t. the free parameters v."""
    penalty = _build_penalty(features, mode, symmetric_inprod)
    u = state.weights()
    grad = _chain_to_raw(state.raw, u, penalty.grad_u(u))
    if not np.isfinite(grad).all():
        raise NumericError("non-finite decorrelation gradient")
    return grad


@dataclass
class OptimizeResult:
    """Outcome of :func:`optimize_weights`.

    ``losses`` holds the penalty value before any step and after each
    accepted step; ``constraint_checks`` counts the per-step assertions
    that sum(u) == L within 1e-10 and min(u) > 0.
    """

    state: WeightState
    losses: list = field(default_factory=list)
    halvings: int = 0
    constraint_checks: int = 0


def optimize_weights(
    features,
    init: WeightState | None = None,
    steps: int = 20,
    lr: float = 0.5,
    mode: str = "both",
    symmetric_inprod: bool = False,
) -> OptimizeResult:
    """Gradient descent on v with monotonicity enforced by step halving.

    Steps follow the inf-norm-normalized gradient, so ``lr`` bounds how
    far any single free parameter moves per step regardless of the
    feature scale (the raw penalty is a sum over L*(L-1) matrix entries,
    whose gradients grow with L and D). Each step retries with a halved
    learning rate (at most ten halvings) until the penalty does not
    increase. The absolute-value penalty has kinks where no step length
    descends; exhausting the halvings there means the optimization has
    converged and stops early. Non-finite losses or gradients raise
    :class:`NumericError` with the loss trace. ``steps=0`` returns
    ``init`` unchanged.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError("expected an L x D feature matrix")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    state = WeightState.uniform(feats.shape[0]) if init is None else init
    if state.size != feats.shape[0]:
        raise ValueError("weight state size must match the number of feature rows")

    penalty = _build_penalty(feats, mode, symmetric_inprod)
    raw = state.raw.copy()
    u = WeightState(raw).weights()
    current = penalty.loss(u)
    result = OptimizeResult(state=state, losses=[current])
    if steps == 0:
        return result

    halvings_total = 0
    checks = 0
    for _ in range(steps):
        grad = _chain_to_raw(raw, u, penalty.grad_u(u))
        if not np.isfinite(grad).all():
            raise NumericError("non-finite decorrelation gradient", trace=result.losses)
        scale = np.abs(grad).max()
        if scale == 0.0:
            break  # stationary point
        direction = grad / scale
        step_lr = lr
        accepted = False
        for attempt in range(MAX_HALVINGS + 1):
            candidate = raw - step_lr * direction
            u_new = WeightState(candidate).weights()
            new_loss = penalty.loss(u_new)
            if not np.isfinite(new_loss):
                raise NumericError(
                    "non-finite decorrelation penalty during line search",
                    trace=result.losses + [new_loss],
                )
            if new_loss <= current:
                raw, u, current = candidate, u_new, new_loss
                halvings_total += attempt
                accepted = True
                break
            step_lr *= 0.5
        if not accepted:
            break  # at a kink of the absolute-value penalty: converged
        total = float(u.sum())
        if abs(total - u.size) > SUM_CONSTRAINT_TOL or u.min() <= 0:
            raise NumericError(
                f"weight constraint violated: sum={total!r}, min={u.min()!r}",
                trace=result.losses,
            )
        checks += 1
        result.losses.append(current)

    result.state = WeightState(raw)
    result.halvings = halvings_total
    result.constraint_checks = checks
    return result
