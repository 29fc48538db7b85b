"""Closed-form kernels used by the iterative learner.

Every kernel is batched: leading axes are treated as independent instances.
"""

from __future__ import annotations

import numpy as np

from .tensor_core import NumericalError, ValidationError, hermitianize


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of nonnegative ``v`` onto ``{x : ||x||_1 <= radius}`` along the last axis.

    Sort-based exact thresholding. Rows already inside the ball are returned
    unchanged (bitwise).
    """
    if not radius > 0:
        raise ValidationError("radius must be positive")
    v = np.asarray(v, dtype=float)
    inside = v.sum(axis=-1, keepdims=True) <= radius
    if np.all(inside):
        return v.copy()
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - radius
    idx = np.arange(1, v.shape[-1] + 1)
    cond = u - css / idx > 0
    # last index where cond holds; cond[0] is always true when outside the ball
    rho = v.shape[-1] - 1 - np.argmax(cond[..., ::-1], axis=-1)
    shift = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1)
    out = np.maximum(v - shift, 0.0)
    return np.where(inside, v, out)


def csign(z: np.ndarray) -> np.ndarray:
    """Complex signum ``z / |z|`` with ``sign(0) = 0``."""
    z = np.asarray(z)
    a = np.abs(z)
    return np.divide(z, a, out=np.zeros_like(z, dtype=complex), where=a > 0)


def prox_linf(z: np.ndarray, lam: float) -> np.ndarray:
    """Prox of ``lam * ||.||_inf`` on complex vectors (last axis).

    Moreau form: ``sign(z) * (|z| - lam * Proj_{B1}(|z| / lam))``, equivalently
    ``|z|`` minus its projection onto the l1 ball of radius ``lam``.
    """
    if not lam > 0:
        raise ValidationError("prox weight must be positive")
    z = np.asarray(z, dtype=complex)
    a = np.abs(z)
    mag = a - project_l1_ball(a, lam)
    return csign(z) * np.maximum(mag, 0.0)


def block_soft_threshold(z: np.ndarray, lam: float) -> np.ndarray:
    """``max(0, 1 - lam / ||z||_2) z`` along the last axis; zero stays zero."""
    if not lam > 0:
        raise ValidationError("threshold must be positive")
    z = np.asarray(z)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    scale = np.maximum(0.0, 1.0 - np.divide(lam, norm, out=np.full_like(norm, np.inf), where=norm > 0))
    return scale * z


def project_hermitian_pd(w: np.ndarray, eps: float) -> np.ndarray:
    """Hermitianize then clamp eigenvalues at ``eps``. Works on stacks ``(..., N, N)``."""
    if not eps > 0:
        raise ValidationError("eps must be positive")
    w = np.asarray(w, dtype=complex)
    if not np.all(np.isfinite(w)):
        raise NumericalError("non-finite input to the PD projection")
    vals, vecs = np.linalg.eigh(hermitianize(w))
    vals = np.maximum(vals, eps)
    out = (vecs * vals[..., None, :]) @ np.conj(np.swapaxes(vecs, -1, -2))
    return hermitianize(out)


def gamma1_blocks(f: np.ndarray, tau: float, omega: float, sigma: float, theta: float) -> np.ndarray:
    """Diagonal blocks of the p-system, shape ``(..., N, N, N)`` with block index on axis ``-3``.

    Block ``j`` is ``(tau + omega) I + sigma F^H F + theta (I - e_j e_j^T)``.
    """
    f = np.asarray(f, dtype=complex)
    n = f.shape[-1]
    base = (tau + omega + theta) * np.eye(n) + sigma * (np.conj(np.swapaxes(f, -1, -2)) @ f)
    blocks = np.repeat(base[..., None, :, :], n, axis=-3)
    j = np.arange(n)
    blocks[..., j, j, j] -= theta
    return blocks


def solve_gamma1(
    f: np.ndarray,
    rhs: np.ndarray,
    tau: float,
    omega: float,
    sigma: float,
    theta: float,
) -> np.ndarray:
    """Solve the block-diagonal p-system for ``rhs`` (vectorized, length ``N^2``)."""
    if not tau + omega > 0:
        raise ValidationError("tau + omega must be positive")
    f = np.asarray(f, dtype=complex)
    n = f.shape[-1]
    r = np.asarray(rhs, dtype=complex).reshape(rhs.shape[:-1] + (n, n))  # row j = column j of R
    x = np.linalg.solve(gamma1_blocks(f, tau, omega, sigma, theta), r[..., None])[..., 0]
    return x.reshape(rhs.shape)


def gamma2_matrix(p: np.ndarray, c: float, rho: float) -> np.ndarray:
    """``c I + (rho/2) P P^H``; the f-system is right-multiplication by this matrix."""
    p = np.asarray(p, dtype=complex)
    n = p.shape[-1]
    return c * np.eye(n) + 0.5 * rho * (p @ np.conj(np.swapaxes(p, -1, -2)))


def solve_gamma2(
    p: np.ndarray,
    rhs: np.ndarray,
    tau: float,
    delta: float,
    rho: float,
    beta: float | np.ndarray = 0.0,
) -> np.ndarray:
    """Solve the f-system: returns ``vec(R G^{-1})`` with ``G = (tau/2 + beta + delta/2) I + (rho/2) P P^H``.

    One ``N x N`` factorization per instance, shared by all ``N`` rows of ``R``.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta < 0):
        raise ValidationError("beta must be nonnegative")
    c = 0.5 * tau + beta + 0.5 * delta
    if np.any(c <= 0):
        raise ValidationError("tau/2 + beta + delta/2 must be positive")
    p = np.asarray(p, dtype=complex)
    n = p.shape[-1]
    g = gamma2_matrix(p, 1.0, rho) + (np.asarray(c)[..., None, None] - 1.0) * np.eye(n)
    r = np.swapaxes(np.asarray(rhs, dtype=complex).reshape(rhs.shape[:-1] + (n, n)), -1, -2)
    # F G = R  <=>  G^H F^H = R^H, and G is Hermitian
    fh = np.linalg.solve(g, np.conj(np.swapaxes(r, -1, -2)))
    f = np.conj(np.swapaxes(fh, -1, -2))
    return np.swapaxes(f, -1, -2).reshape(rhs.shape)
