"""Exact GP regression with joint value and gradient observations."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .covariance import InvalidInputError, KernelParams, joint_cov_matrix

__all__ = [
    "IllConditionedError",
    "TrainingBlock",
    "GpModel",
    "BatchPrediction",
    "fit",
    "predict",
    "predict_batch",
]

logger = logging.getLogger(__name__)

# Diagonal jitter ladder, in units of sigma2.
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
# Queries are processed in padded chunks of this fixed size so that every
# query goes through identically shaped BLAS calls; results are then
# independent of batch composition.
_CHUNK = 64


class IllConditionedError(RuntimeError):
    """Cholesky factorization failed even with the largest jitter."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


@dataclass
class TrainingBlock:
    """Observations of one local GP.

    ``noise`` and ``grad_noise`` are per-point standard deviations of the
    value and gradient observations; ``None`` falls back to the kernel
    defaults.  ``grad_targets = None`` trains on values only.
    """

    positions: np.ndarray
    values: np.ndarray
    grad_targets: np.ndarray | None = None
    noise: np.ndarray | None = None
    grad_noise: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        n = self.positions.shape[0]
        if n < 1:
            raise InvalidInputError("training block needs at least one point")
        if self.values.shape[0] != n:
            raise InvalidInputError("values length does not match positions")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.values))):
            raise InvalidInputError("training positions and values must be finite")
        if self.grad_targets is not None:
            self.grad_targets = np.asarray(self.grad_targets, dtype=float).reshape(self.positions.shape)
            if not np.all(np.isfinite(self.grad_targets)):
                raise InvalidInputError("gradient targets must be finite")
        for name in ("noise", "grad_noise"):
            val = getattr(self, name)
            if val is not None:
                val = np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()
                if np.any(val < 0) or not np.all(np.isfinite(val)):
                    raise InvalidInputError(f"{name} must be finite and >= 0")
                setattr(self, name, val)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def with_gradients(self) -> bool:
        return self.grad_targets is not None

    def target_vector(self) -> np.ndarray:
        if not self.with_gradients:
            return self.values.copy()
        return np.column_stack([self.values, self.grad_targets]).reshape(-1)

    def noise_diagonal(self, params: KernelParams) -> np.ndarray:
        sy = self.noise if self.noise is not None else np.full(self.n, params.noise_y)
        if not self.with_gradients:
            return sy**2
        sg = self.grad_noise if self.grad_noise is not None else np.full(self.n, params.noise_grad)
        block = np.column_stack([sy**2] + [sg**2] * self.dim)
        return block.reshape(-1)


@dataclass(frozen=True)
class GpModel:
    """A fitted GP: lower Cholesky factor of ``K + Sigma`` and the solve ``alpha``."""

    training: TrainingBlock
    factor: np.ndarray
    alpha: np.ndarray
    params: KernelParams
    jitter: float = 0.0

    def covariance(self) -> np.ndarray:
        """The regularized training covariance the factor was computed from."""
        K = joint_cov_matrix(self.training.positions, self.training.positions,
                             self.params, self.training.with_gradients)
        K[np.diag_indices_from(K)] += self.training.noise_diagonal(self.params) + self.jitter
        return K


@dataclass
class BatchPrediction:
    """Latent predictions for ``M`` queries.

    ``grad_mean`` and ``grad_var`` are NaN when the kernel is not
    differentiable.
    """

    mean: np.ndarray
    grad_mean: np.ndarray
    var: np.ndarray
    grad_var: np.ndarray
    n_clamped: int = 0

    def __len__(self):
        return self.mean.shape[0]


def fit(training: TrainingBlock, params: KernelParams) -> GpModel:
    """Factorize the training covariance and precompute the mean weights."""
    if training.with_gradients and not params.differentiable:
        raise InvalidInputError("gradient observations need the Matérn 3/2 kernel")
    K = joint_cov_matrix(training.positions, training.positions, params,
                         training.with_gradients)
    K[np.diag_indices_from(K)] += training.noise_diagonal(params)
    y = training.target_vector()

    for rel in JITTER_LADDER:
        jitter = rel * params.sigma2
        A = K.copy()
        if jitter:
            A[np.diag_indices_from(A)] += jitter
        try:
            L = linalg.cholesky(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if jitter:
            logger.info("cholesky needed jitter %.1e (n=%d)", jitter, training.n)
        alpha = linalg.cho_solve((L, True), y, check_finite=False)
        return GpModel(training, L, alpha, params, jitter)

    cond = float(np.linalg.cond(K))
    raise IllConditionedError(
        f"factorization failed with jitter up to {JITTER_LADDER[-1]:.0e}*sigma2", cond)


def _prior_block(params: KernelParams, d: int, with_grad: bool) -> np.ndarray:
    if not with_grad:
        return np.array([[params.sigma2]])
    block = np.eye(1 + d) * params.sigma2 * params.lam**2
    block[0, 0] = params.sigma2
    return block


def _cross_cov(model: GpModel, Xs: np.ndarray) -> np.ndarray:
    tr = model.training
    if not model.params.differentiable:
        return joint_cov_matrix(tr.positions, Xs, model.params, with_gradients=False)
    full = joint_cov_matrix(tr.positions, Xs, model.params, with_gradients=True)
    if tr.with_gradients:
        return full
    return full[:: 1 + tr.dim]


def predict_batch(model: GpModel, X_star) -> BatchPrediction:
    """Predictive mean, gradient mean and variances at each row of ``X_star``."""
    tr = model.training
    d = tr.dim
    X_star = np.asarray(X_star, dtype=float).reshape(-1, d)
    m = X_star.shape[0]
    diff = model.params.differentiable
    q = 1 + d if diff else 1
    means = np.empty((m, q))
    covs = np.empty((m, q, q))
    prior = _prior_block(model.params, d, diff)

    pad = np.empty((_CHUNK, d))
    for start in range(0, m, _CHUNK):
        mc = min(_CHUNK, m - start)
        pad[:mc] = X_star[start:start + mc]
        pad[mc:] = X_star[start]
        Ks = _cross_cov(model, pad)
        means[start:start + mc] = (Ks.T @ model.alpha).reshape(_CHUNK, q)[:mc]
        V = linalg.solve_triangular(model.factor, Ks, lower=True, check_finite=False)
        V = V.reshape(V.shape[0], _CHUNK, q)
        covs[start:start + mc] = (prior - np.einsum("nia,nib->iab", V, V))[:mc]

    var = covs[:, 0, 0].copy()
    neg = var < 0
    n_clamped = int(np.count_nonzero(neg))
    var[neg] = 0.0
    if diff:
        grad_mean = means[:, 1:]
        grad_var = covs[:, 1:, 1:]
    else:
        grad_mean = np.full((m, d), np.nan)
        grad_var = np.full((m, d, d), np.nan)
    return BatchPrediction(means[:, 0].copy(), grad_mean.copy(), var, grad_var.copy(), n_clamped)


def predict(model: GpModel, x_star):
    """Return ``(mean, grad_mean, var, grad_var)`` at a single query point."""
    p = predict_batch(model, np.asarray(x_star, dtype=float)[None, :])
    return float(p.mean[0]), p.grad_mean[0], float(p.var[0]), p.grad_var[0]
