"""Independent reference implementations used as test oracles.

Nothing here imports the package under test.  Kernel derivative blocks are
obtained by symbolic differentiation (sympy) and the GP posterior is a
plain dense solve assembled entry by entry.
"""

from __future__ import annotations

import functools

import mpmath
import numpy as np
import sympy as sp

# Frozen values (30-digit mpmath evaluations).
WHITTLE_LAM1_R1 = 0.601907230197234574737540001536  # 1 * K1(1)
WHITTLE_Z4 = 0.0499339955490737258815367199232  # 4 * K1(4)
MATERN32_LAM1_R1 = 0.735758882342884643191047540323  # 2 / e
CAP_LAM40 = 0.690775527898213705205397436405  # -ln(1e-12) / 40


def zk1(z: float) -> float:
    """``z K1(z)`` with arbitrary precision, limit 1 at zero."""
    if z == 0:
        return 1.0
    return float(z * mpmath.besselk(1, z))


@functools.lru_cache(maxsize=None)
def _matern32_blocks(dim: int):
    x = sp.symbols(f"x0:{dim}", real=True)
    y = sp.symbols(f"y0:{dim}", real=True)
    lam, s2 = sp.symbols("lam s2", positive=True)
    r = sp.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))
    k = s2 * (1 + lam * r) * sp.exp(-lam * r)
    gx = [sp.simplify(sp.diff(k, a)) for a in x]
    gy = [sp.simplify(sp.diff(k, b)) for b in y]
    h = [[sp.simplify(sp.diff(k, a, b)) for b in y] for a in x]
    args = (*x, *y, lam, s2)
    return (sp.lambdify(args, k, "math"), [sp.lambdify(args, g, "math") for g in gx],
            [sp.lambdify(args, g, "math") for g in gy],
            [[sp.lambdify(args, e, "math") for e in row] for row in h])


def matern32_joint(x, y, lam: float, s2: float) -> np.ndarray:
    """``(1+D) x (1+D)`` covariance of ``[f, grad f]`` at ``x`` and ``y``.

    Evaluated from the symbolic derivatives; the coincident-point limit
    ``s2 lam^2 I`` is used when ``x == y``.
    """
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    d = len(x)
    out = np.zeros((d + 1, d + 1))
    if x == y:
        out[0, 0] = s2
        out[1:, 1:] = s2 * lam * lam * np.eye(d)
        return out
    k, gx, gy, h = _matern32_blocks(d)
    args = (*x, *y, lam, s2)
    out[0, 0] = k(*args)
    for i in range(d):
        out[i + 1, 0] = gx[i](*args)
        out[0, i + 1] = gy[i](*args)
        for j in range(d):
            out[i + 1, j + 1] = h[i][j](*args)
    return out


def dense_gp(X, y, G, Xs, lam, s2, noise_y, noise_g):
    """Posterior mean, gradient mean and value variance by a dense solve.

    ``G`` holds gradient observations (``None`` for values only).
    """
    X = np.asarray(X, float)
    Xs = np.asarray(Xs, float)
    n, d = X.shape
    q = 1 + d if G is not None else 1
    K = np.zeros((n * q, n * q))
    for i in range(n):
        for j in range(n):
            K[i * q:(i + 1) * q, j * q:(j + 1) * q] = matern32_joint(X[i], X[j], lam, s2)[:q, :q]
    noise = [noise_y**2] + [noise_g**2] * (q - 1)
    K += np.diag(np.tile(noise, n))
    t = np.column_stack([y, G]).reshape(-1) if G is not None else np.asarray(y, float)
    mean, grad, var = [], [], []
    for xs in Xs:
        Ks = np.zeros((n * q, 1 + d))
        for i in range(n):
            Ks[i * q:(i + 1) * q, :] = matern32_joint(X[i], xs, lam, s2)[:q, :]
        w = np.linalg.solve(K, t)
        m = Ks.T @ w
        mean.append(m[0])
        grad.append(m[1:])
        var.append(s2 - Ks[:, 0] @ np.linalg.solve(K, Ks[:, 0]))
    return np.array(mean), np.array(grad), np.array(var)


def circle_edf(X, center, radius):
    X = np.atleast_2d(np.asarray(X, float))
    return np.abs(np.linalg.norm(X - np.asarray(center, float), axis=1) - radius)


def box_sdf(X, center, size):
    """Signed distance to an axis-aligned box (textbook formula)."""
    X = np.atleast_2d(np.asarray(X, float))
    q = np.abs(X - np.asarray(center, float)) - 0.5 * np.asarray(size, float)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return outside + inside
