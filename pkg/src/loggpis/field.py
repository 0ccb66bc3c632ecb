"""Conversion of latent GP predictions into distance estimates.

The latent process models ``v(x) = exp(-lam * d(x))`` with ``v = 1`` on the
surface, so the unsigned distance is recovered as ``-ln(v) / lam``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import KernelParams

__all__ = [
    "LATENT_FLOOR",
    "OUTSIDE",
    "INSIDE",
    "UNKNOWN",
    "FieldEstimate",
    "FieldEstimates",
    "to_distance",
    "to_gradient",
    "to_variance",
    "recover_sign",
    "log_transform",
    "gpis_transform",
]

LATENT_FLOOR = 1e-12
GRAD_TOL = 1e-12
SIGN_TOL = 1e-9

OUTSIDE, INSIDE, UNKNOWN = 1, -1, 0


@dataclass
class FieldEstimate:
    """Field output at one query.  ``gradient`` is ``None`` where undefined."""

    latent_mean: float
    distance: float
    gradient: np.ndarray | None
    variance: float
    sign: int = UNKNOWN
    clamped: bool = False

    @property
    def signed_distance(self) -> float:
        return self.sign * self.distance if self.sign else self.distance


@dataclass
class FieldEstimates:
    """Column-oriented field output for ``M`` queries.

    Undefined gradients are NaN rows; ``sign`` holds +1, -1 or 0 (unknown).
    """

    latent_mean: np.ndarray
    distance: np.ndarray
    gradient: np.ndarray
    variance: np.ndarray
    sign: np.ndarray
    clamped: np.ndarray

    def __len__(self):
        return self.distance.shape[0]

    def __getitem__(self, i) -> FieldEstimate:
        g = self.gradient[i]
        return FieldEstimate(
            float(self.latent_mean[i]), float(self.distance[i]),
            None if np.isnan(g).any() else g.copy(), float(self.variance[i]),
            int(self.sign[i]), bool(self.clamped[i]))

    @property
    def gradient_defined(self) -> np.ndarray:
        return ~np.isnan(self.gradient).any(axis=1)

    def signed_distance(self) -> np.ndarray:
        s = np.where(self.sign == UNKNOWN, 1, self.sign)
        return s * self.distance

    @classmethod
    def empty(cls, dim: int) -> "FieldEstimates":
        z = np.zeros(0)
        return cls(z, z.copy(), np.zeros((0, dim)), z.copy(),
                   np.zeros(0, dtype=int), np.zeros(0, dtype=bool))


def _distances(f: np.ndarray, lam: float, floor: float):
    f = np.asarray(f, dtype=float)
    low = f <= floor
    high = f > 1.0
    safe = np.clip(f, floor, 1.0)
    d = -np.log(safe) / lam
    d[high] = 0.0
    return d, low | high


def to_distance(latent_mean: float, params: KernelParams, floor: float = LATENT_FLOOR):
    """Return ``(distance, clamped)`` for a latent mean.

    Latent means at or below ``floor`` saturate at ``-ln(floor) / lam``;
    means above one are reported as on-surface.  Both cases set ``clamped``.
    """
    d, c = _distances(np.array([latent_mean]), params.lam, floor)
    return float(d[0]), bool(c[0])


def _unit_gradients(f: np.ndarray, g: np.ndarray, flip: bool) -> np.ndarray:
    norm = np.linalg.norm(g, axis=1)
    # Degeneracy is judged relative to the latent scale so that directions
    # remain available far from the data, where both f and |grad f| are tiny.
    tol = GRAD_TOL * np.minimum(1.0, np.abs(f))
    ok = np.isfinite(norm) & (norm > tol) & (norm > 0)
    out = np.full_like(g, np.nan)
    out[ok] = g[ok] / norm[ok, None]
    if flip:
        out[ok] *= -1.0
    return out


def to_gradient(latent_mean: float, latent_grad) -> np.ndarray | None:
    """Unit distance gradient: the normalized latent gradient with its sign flipped.

    Returns ``None`` where the latent gradient vanishes (e.g. on the medial axis).
    """
    g = np.asarray(latent_grad, dtype=float)[None, :]
    u = _unit_gradients(np.array([latent_mean], dtype=float), g, flip=True)[0]
    return None if np.isnan(u).any() else u


def to_variance(latent_mean, latent_var, params: KernelParams, floor: float = LATENT_FLOOR):
    """First-order propagation of the latent variance through ``-ln(f) / lam``."""
    f = np.clip(np.asarray(latent_mean, dtype=float), floor, 1.0)
    # (lam f)^2 underflows for very small floors; the variance is then inf.
    with np.errstate(divide="ignore", over="ignore"):
        v = np.asarray(latent_var, dtype=float) / (params.lam * f) ** 2
    return float(v) if v.ndim == 0 else v


def _signs(X: np.ndarray, grad: np.ndarray, sensor_pos) -> np.ndarray:
    sensor_pos = np.broadcast_to(np.asarray(sensor_pos, dtype=float), X.shape)
    dot = np.einsum("ij,ij->i", grad, sensor_pos - X)
    sign = np.where(dot > SIGN_TOL, OUTSIDE, np.where(dot < -SIGN_TOL, INSIDE, UNKNOWN))
    sign[~np.isfinite(dot)] = UNKNOWN
    return sign.astype(int)


def recover_sign(query, gradient, sensor_pos) -> int:
    """+1 when the distance gradient points toward the sensor, -1 when away."""
    if gradient is None:
        return UNKNOWN
    return int(_signs(np.asarray(query, float)[None], np.asarray(gradient, float)[None],
                      np.asarray(sensor_pos, float))[0])


def log_transform(X, mean, grad_mean, var, params: KernelParams,
                  sensor_pos=None, floor: float = LATENT_FLOOR) -> FieldEstimates:
    """Apply the log transform to blended latent predictions at ``X``."""
    X = np.asarray(X, dtype=float)
    mean = np.asarray(mean, dtype=float)
    grad_mean = np.asarray(grad_mean, dtype=float).reshape(X.shape)
    var = np.asarray(var, dtype=float)
    dist, clamped = _distances(mean, params.lam, floor)
    grad = _unit_gradients(mean, grad_mean, flip=True)
    variance = to_variance(mean, np.maximum(var, 0.0), params, floor)
    variance = np.atleast_1d(variance)
    if sensor_pos is None:
        sign = np.zeros(X.shape[0], dtype=int)
    else:
        sign = _signs(X, grad, sensor_pos)
    return FieldEstimates(np.asarray(mean, float).copy(), dist, grad, variance, sign, clamped)


def gpis_transform(X, mean, grad_mean, var) -> FieldEstimates:
    """Standard GPIS read-out: the latent mean is the signed distance itself."""
    mean = np.asarray(mean, dtype=float)
    grad_mean = np.asarray(grad_mean, dtype=float).reshape(-1, np.asarray(X).shape[1])
    var = np.asarray(var, dtype=float)
    sign = np.where(mean > 0, OUTSIDE, np.where(mean < 0, INSIDE, UNKNOWN)).astype(int)
    # Reported gradients are those of the unsigned distance |mean|.
    grad = _unit_gradients(np.ones_like(mean), grad_mean, flip=False)
    grad[sign == INSIDE] *= -1.0
    return FieldEstimates(mean.copy(), np.abs(mean), grad, np.maximum(var, 0.0),
                          sign, np.zeros(mean.shape[0], dtype=bool))
