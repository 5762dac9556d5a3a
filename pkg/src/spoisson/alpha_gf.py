"""The alpha-generating-function family of symplectic one-step schemes.

For a canonical system dZ = J^-1 grad H_0 dt + J^-1 grad H_1 o dW (one noise
channel) the truncated generating function at mean-square order 1 is

    Sbar(Phat, Qhat) = H_0 h + H_1 dW
                       + (2 alpha - 1) (dH_1/dQhat . dH_1/dPhat) dW^2 / 2,

the only iterated-integral combination surviving the truncation being
dW^2 / 2.  The update solves the implicit system

    P+ = P - dSbar/dQhat,   Q+ = Q + dSbar/dPhat,

evaluated at the mixed point Phat = (1-alpha) P + alpha P+,
Qhat = alpha Q + (1-alpha) Q+.  The gradient ordering is fixed as
(d/dPhat; d/dQhat) with J^-1 = [[0, -I], [I, 0]].

States are Z = (P_1..P_n, Q_1..Q_n) arrays of shape (..., 2n); increments
are expected already truncated by the caller's policy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .noise import TruncationPolicy
from .sde import fixed_point
from .poisson import step_jacobian_fd


@dataclass(frozen=True)
class AlphaSchemeConfig:
    alpha: float
    tol: float = 1e-12
    max_iter: int = 100
    truncation: TruncationPolicy = field(default_factory=TruncationPolicy)

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class SbarGradient:
    """Partial derivatives of the truncated generating function."""

    dP: np.ndarray
    dQ: np.ndarray


def sbar_gradient(shs, phat, qhat, h: float, dw, alpha: float) -> SbarGradient:
    """Exact gradient of Sbar at the mixed point (phat, qhat).

    ``shs`` provides n and the Hamiltonians H_0, H_1 (the extra term needs
    the H_1 Hessian unless alpha = 1/2, where its coefficient vanishes).
    ``dw`` is the scalar increment, batched over leading axes.
    """
    n = shs.n
    if shs.n_noise != 1:
        raise ValueError("the truncated generating function is for one noise channel")
    H0, H1 = shs.hamiltonians
    z = np.concatenate([np.asarray(phat, dtype=float), np.asarray(qhat, dtype=float)], axis=-1)
    dw = np.asarray(dw, dtype=float)
    g1 = H1.grad(z)
    grad = H0.grad(z) * h + g1 * dw[..., None]
    if alpha != 0.5:
        if H1.hess is None:
            raise ValueError("alpha != 1/2 needs the Hessian of the noise Hamiltonian")
        hs = H1.hess(z)
        # grad of G = dH1/dQ . dH1/dP:  dG/dz_j = sum_k (hs[n+k, j] gP_k + gQ_k hs[k, j])
        #           = sum_i hs[i, j] u_i   with u = (gQ, gP)
        u = np.concatenate([g1[..., n:], g1[..., :n]], axis=-1)
        gradG = np.einsum("...ij,...i->...j", hs, u)
        grad = grad + (2.0 * alpha - 1.0) * 0.5 * (dw**2)[..., None] * gradG
    return SbarGradient(dP=grad[..., :n], dQ=grad[..., n:])


def alpha_step(shs, z, h: float, dw, config: AlphaSchemeConfig):
    """One implicit step of the alpha-generating scheme from state z = (P, Q).

    Solved by fixed-point iteration from z, stopping when successive iterates
    differ by < tol in max norm; non-contractive inputs surface as
    NonConvergenceError or DivergenceError, never as silent wrong answers.
    """
    z = np.asarray(z, dtype=float)
    n = shs.n
    P, Q = z[..., :n], z[..., n:]
    alpha = config.alpha

    def update(z_new):
        phat = (1.0 - alpha) * P + alpha * z_new[..., :n]
        qhat = alpha * Q + (1.0 - alpha) * z_new[..., n:]
        g = sbar_gradient(shs, phat, qhat, h, dw, alpha)
        return np.concatenate([P - g.dQ, Q + g.dP], axis=-1)

    return fixed_point(update, z, config.tol, config.max_iter)


def make_alpha_stepper(shs, config: AlphaSchemeConfig) -> Callable:
    """One-step map (z, h, dw) -> z_new with dw of shape (..., 1)."""
    return lambda z, h, dw: alpha_step(shs, z, h, np.asarray(dw)[..., 0], config)


def symplectic_residual(step: Callable, z, h: float, dw, eps: float | None = None) -> float:
    """Max-abs entry of M J^-1 M^T - J^-1 with M the fd Jacobian of the step."""
    z = np.asarray(z, dtype=float)
    n = z.shape[-1] // 2
    Jinv = np.zeros((2 * n, 2 * n))
    Jinv[:n, n:] = -np.eye(n)
    Jinv[n:, :n] = np.eye(n)
    M = step_jacobian_fd(step, z, h, dw, eps)
    return float(np.max(np.abs(M @ Jinv @ M.T - Jinv)))
