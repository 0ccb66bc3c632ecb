"""Matérn-family covariances and their derivative blocks.

Two members are supported:

* ``nu = 1`` (Whittle): ``k(r) = sigma2 * (lam r) * K1(lam r)``, value-only.
* ``nu = 3/2`` (scaled Matérn 3/2): ``k(r) = sigma2 * (1 + lam r) * exp(-lam r)``,
  once differentiable, so value/gradient joint covariances are available.

Both are normalized so that ``k(0) = sigma2``.  The Matérn length is tied to
the inverse length ``lam`` through ``l = sqrt(2 nu) / lam`` so the Bessel
argument is always ``lam * r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "InvalidInputError",
    "UnsupportedKernelError",
    "KernelParams",
    "KernelEval",
    "matern_cov",
    "whittle_cov",
    "kernel_eval",
    "joint_cov_matrix",
]

WHITTLE = 1.0
MATERN32 = 1.5
KERNEL_NAMES = {"whittle": WHITTLE, "matern32": MATERN32}

# Switch points of the piecewise K1 evaluation.
_SERIES_BELOW = 1e-6
_ASYMPTOTIC_ABOVE = 30.0


class InvalidInputError(ValueError):
    """Raised for non-finite or out-of-domain arguments."""


class UnsupportedKernelError(ValueError):
    """Raised when derivative blocks are requested from the Whittle kernel."""


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters shared by every covariance evaluation.

    Parameters
    ----------
    lam : float
        Inverse length scale (1/m).  Larger values give a sharper heat kernel
        and a closer approximation of the distance field.
    nu : float
        Smoothness order, 1 (Whittle) or 1.5 (Matérn 3/2).
    sigma2 : float
        Signal variance.
    noise_y : float
        Standard deviation of value observations.
    noise_grad : float
        Standard deviation of gradient observations, expressed on the scale
        of a unit normal.
    """

    lam: float = 40.0
    nu: float = MATERN32
    sigma2: float = 1.0
    noise_y: float = 1e-2
    noise_grad: float = 1e-2

    def __post_init__(self):
        for name in ("lam", "nu", "sigma2", "noise_y", "noise_grad"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        if self.lam <= 0:
            raise InvalidInputError("lam must be > 0")
        if self.sigma2 <= 0:
            raise InvalidInputError("sigma2 must be > 0")
        if self.noise_y < 0 or self.noise_grad < 0:
            raise InvalidInputError("noise levels must be >= 0")
        if self.nu not in (WHITTLE, MATERN32):
            raise InvalidInputError(f"nu must be 1 or 1.5, got {self.nu}")

    @property
    def kernel_name(self) -> str:
        return "whittle" if self.nu == WHITTLE else "matern32"

    @property
    def differentiable(self) -> bool:
        return self.nu == MATERN32

    @classmethod
    def for_kernel(cls, name: str, **kwargs) -> "KernelParams":
        try:
            nu = KERNEL_NAMES[name]
        except KeyError:
            raise InvalidInputError(f"unknown kernel {name!r}") from None
        return cls(nu=nu, **kwargs)


@dataclass(frozen=True)
class KernelEval:
    """Covariance value and derivative blocks for one pair ``(x, x')``."""

    value: float
    grad_x: np.ndarray
    grad_xp: np.ndarray
    hess: np.ndarray


def _check_distance(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("distance must be finite")
    if np.any(r < 0):
        raise InvalidInputError("distance must be >= 0")
    return r


def _zk1(z: np.ndarray) -> np.ndarray:
    """Return ``z * K1(z)`` for ``z >= 0`` with the limit value 1 at zero."""
    out = np.empty_like(z)
    small = z < _SERIES_BELOW
    large = z > _ASYMPTOTIC_ABOVE
    mid = ~(small | large)

    zs = z[small]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.where(zs > 0, np.log(zs / 2.0), 0.0)
    out[small] = 1.0 + 0.5 * zs**2 * (log_term + np.euler_gamma - 0.5)

    zm = z[mid]
    out[mid] = zm * special.k1(zm)

    # Hankel expansion K1(z) ~ sqrt(pi/2z) e^-z sum_k a_k, mu = 4 nu^2 = 4.
    zl = z[large]
    term = np.ones_like(zl)
    acc = np.ones_like(zl)
    for k in range(1, 7):
        term = term * (4.0 - (2 * k - 1) ** 2) / (k * 8.0 * zl)
        acc = acc + term
    out[large] = zl * np.sqrt(np.pi / (2.0 * zl)) * np.exp(-zl) * acc
    return out


def whittle_cov(r, params: KernelParams):
    """Normalized Whittle covariance ``sigma2 * (lam r) K1(lam r)``.

    The raw form ``r / (2 lam) * K1(lam r)`` tends to ``1 / (2 lam^2)`` at zero
    lag; this is that form scaled by ``2 lam^2 sigma2``.
    """
    r = _check_distance(r)
    z = np.atleast_1d(params.lam * r).astype(float)
    val = params.sigma2 * _zk1(z)
    return float(val[0]) if r.ndim == 0 else val.reshape(r.shape)


def _matern32(r: np.ndarray, params: KernelParams) -> np.ndarray:
    z = params.lam * r
    return params.sigma2 * (1.0 + z) * np.exp(-z)


def matern_cov(r, params: KernelParams):
    """Matérn covariance at lag ``r`` for the configured smoothness order."""
    if params.nu == WHITTLE:
        return whittle_cov(r, params)
    r = _check_distance(r)
    val = _matern32(r, params)
    return float(val) if r.ndim == 0 else val


def kernel_eval(x, xp, params: KernelParams, derivatives: bool = True) -> KernelEval:
    """Evaluate ``k(x, x')`` together with its first and mixed second derivatives."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.shape != xp.shape or x.ndim != 1:
        raise InvalidInputError("x and xp must be vectors of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xp))):
        raise InvalidInputError("positions must be finite")
    delta = x - xp
    r = float(np.linalg.norm(delta))
    value = matern_cov(r, params)
    if not derivatives:
        return KernelEval(value, None, None, None)
    if not params.differentiable:
        raise UnsupportedKernelError("the Whittle kernel has no derivative blocks")

    lam = params.lam
    a = params.sigma2 * lam * lam * math.exp(-lam * r)
    grad_x = -a * delta
    hess = a * np.eye(x.size)
    if r > 0:
        hess -= a * lam * np.outer(delta, delta) / r
    return KernelEval(value, grad_x, -grad_x, hess)


def joint_cov_matrix(X, Xp, params: KernelParams, with_gradients: bool = True) -> np.ndarray:
    """Covariance between the processes at ``X`` and ``Xp``.

    With gradients the result has shape ``(N (1+D), M (1+D))`` and is ordered
    per point as ``[f, df/dx_1, ..., df/dx_D]``; without gradients it is the
    plain ``N x M`` Gram matrix.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
    if X.shape[1] != Xp.shape[1]:
        raise InvalidInputError(
            f"dimension mismatch: {X.shape[1]} vs {Xp.shape[1]}")
    n, d = X.shape
    m = Xp.shape[0]
    delta = X[:, None, :] - Xp[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", delta, delta))

    if not with_gradients:
        if params.nu == WHITTLE:
            return params.sigma2 * _zk1(params.lam * r)
        return _matern32(r, params)

    if not params.differentiable:
        raise UnsupportedKernelError("the Whittle kernel has no derivative blocks")
    lam = params.lam
    e = np.exp(-lam * r)
    a = params.sigma2 * lam * lam * e
    out = np.empty((n, 1 + d, m, 1 + d))
    out[:, 0, :, 0] = params.sigma2 * (1.0 + lam * r) * e
    out[:, 1:, :, 0] = np.moveaxis(-a[:, :, None] * delta, 2, 1)
    out[:, 0, :, 1:] = a[:, :, None] * delta
    inv_r = np.divide(lam, r, out=np.zeros_like(r), where=r > 0)
    outer = delta[:, :, :, None] * delta[:, :, None, :]
    hess = -(a * inv_r)[:, :, None, None] * outer
    idx = np.arange(d)
    hess[:, :, idx, idx] += a[:, :, None]
    out[:, 1:, :, 1:] = np.transpose(hess, (0, 2, 1, 3))
    return out.reshape(n * (1 + d), m * (1 + d))
