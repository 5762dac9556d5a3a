"""Stochastic Poisson systems: brackets, structural validators, Jacobians.

A Poisson system dy = B(y)(grad K_0 dt + sum_r grad K_r o dW_r) is described
by its skew structure matrix B (which must satisfy the Jacobi condition) and
m+1 scalar Hamiltonians.  The validators here check those properties
numerically at user-supplied points and report the worst residual, entrywise
max-abs, together with the point that produced it.

Rank constancy of B is declared by the system author and is not verified.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .noise import TimeGrid, WienerIncrements
from .sde import (
    StratonovichSDE,
    _default_eps,
    fd_vector_jacobian,
    integrate,
    midpoint_step,
)


@dataclass(frozen=True)
class ScalarField:
    """A scalar function of the state with its gradient and optional Hessian.

    Conventions: ``value`` maps (..., d) -> (...), ``grad`` maps
    (..., d) -> (..., d), ``hess`` maps (..., d) -> (..., d, d).
    """

    value: Callable
    grad: Callable
    hess: Callable | None = None


def scale_field(f: ScalarField, c: float) -> ScalarField:
    hess = None if f.hess is None else (lambda y: c * f.hess(y))
    return ScalarField(
        value=lambda y: c * f.value(y),
        grad=lambda y: c * f.grad(y),
        hess=hess,
    )


def fd_gradient(value: Callable, y, eps: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar field, batch-capable."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    if eps is None:
        eps = _default_eps(y)
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps
        cols.append((value(y + e) - value(y - e)) / (2.0 * eps))
    return np.stack(cols, axis=-1)


def fd_field(value: Callable, eps: float | None = None) -> ScalarField:
    """Scalar field with finite-difference gradient and Hessian."""
    grad = lambda y: fd_gradient(value, y, eps)
    return ScalarField(
        value=value,
        grad=grad,
        hess=lambda y: fd_vector_jacobian(grad, y, eps),
    )


def fd_structure_derivative(structure: Callable, y, eps: float | None = None) -> np.ndarray:
    """Central differences of a matrix field; [..., i, j, s] = dB_ij/dy_s."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    if eps is None:
        eps = _default_eps(y)
    slabs = []
    for s in range(d):
        e = np.zeros(d)
        e[s] = eps
        slabs.append((structure(y + e) - structure(y - e)) / (2.0 * eps))
    return np.stack(slabs, axis=-1)


@dataclass(frozen=True)
class PoissonSystem:
    """Structure matrix, Hamiltonians, and optional derivative data.

    ``structure`` maps (..., d) -> (..., d, d); ``structure_derivative``
    (when given) maps (..., d) -> (..., d, d, d) with [..., i, j, s] =
    dB_ij/dy_s.  ``hamiltonians`` holds K_0 .. K_m.  ``rank`` is the declared
    constant rank 2n of B, so d = 2n + l.
    """

    dim: int
    n_noise: int
    structure: Callable
    hamiltonians: tuple[ScalarField, ...]
    rank: int
    structure_derivative: Callable | None = None
    casimirs: tuple[ScalarField, ...] = ()
    domain: Callable | None = None

    def __post_init__(self) -> None:
        if len(self.hamiltonians) != self.n_noise + 1:
            raise ValueError("need exactly m+1 Hamiltonians K_0..K_m")
        if self.rank % 2 or not 0 <= self.rank <= self.dim:
            raise ValueError(f"rank must be even and within [0, {self.dim}]")


@dataclass(frozen=True)
class CheckReport:
    max_residual: float
    worst_point: np.ndarray
    points_tested: int


def _report(residuals: np.ndarray, points: np.ndarray) -> CheckReport:
    worst = int(np.argmax(residuals))
    return CheckReport(
        max_residual=float(residuals[worst]),
        worst_point=np.array(points[worst]),
        points_tested=len(points),
    )


def drift_and_diffusions(sys: PoissonSystem) -> StratonovichSDE:
    """Coefficient fields a = B grad K_0 and b_r = B grad K_r of the system."""

    def make_field(K: ScalarField) -> Callable:
        return lambda y: np.einsum("...ij,...j->...i", sys.structure(y), K.grad(y))

    jacobians = None
    if sys.structure_derivative is not None and all(
        K.hess is not None for K in sys.hamiltonians
    ):
        jacobians = tuple(field_jacobian(sys, K) for K in sys.hamiltonians[1:])
    return StratonovichSDE(
        dim=sys.dim,
        drift=make_field(sys.hamiltonians[0]),
        diffusions=tuple(make_field(K) for K in sys.hamiltonians[1:]),
        diffusion_jacobians=jacobians,
    )


def field_jacobian(sys: PoissonSystem, K: ScalarField) -> Callable:
    """Analytic Jacobian of y -> B(y) grad K(y) (needs dB and the Hessian)."""
    if sys.structure_derivative is None or K.hess is None:
        raise ValueError("field_jacobian needs structure_derivative and the Hessian")

    def jac(y):
        y = np.asarray(y, dtype=float)
        dB = sys.structure_derivative(y)
        g = K.grad(y)
        return np.einsum("...acb,...c->...ab", dB, g) + sys.structure(y) @ K.hess(y)

    return jac


def variational_matrices(sys: PoissonSystem, y) -> list[np.ndarray]:
    """M_i(y) = B'(y)(grad K_i) + B(y) hess K_i for each Hamiltonian."""
    return [field_jacobian(sys, K)(y) for K in sys.hamiltonians]


def bracket(F: ScalarField, G: ScalarField, sys: PoissonSystem, y):
    """Poisson bracket {F, G}(y) = grad F(y)^T B(y) grad G(y)."""
    y = np.asarray(y, dtype=float)
    return np.einsum("...i,...ij,...j->...", F.grad(y), sys.structure(y), G.grad(y))


def check_skew(sys: PoissonSystem, points) -> CheckReport:
    """Worst entry of B(y) + B(y)^T over the points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    B = sys.structure(points)
    res = np.max(np.abs(B + np.swapaxes(B, -1, -2)), axis=(-1, -2))
    return _report(res, points)


def check_jacobi(sys: PoissonSystem, points, fd_fallback: bool = True) -> CheckReport:
    """Worst cyclic-sum residual of the Jacobi condition over the points.

    Residual per point and index triple (i, j, k):
    sum_s (dB_ij/dy_s B_sk + dB_jk/dy_s B_si + dB_ki/dy_s B_sj).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if sys.structure_derivative is not None:
        dB = sys.structure_derivative(points)
    elif fd_fallback:
        dB = fd_structure_derivative(sys.structure, points)
    else:
        raise ValueError("structure derivative unavailable and finite differences disabled")
    B = sys.structure(points)
    T = np.einsum("...ijs,...sk->...ijk", dB, B)
    R = T + np.moveaxis(T, (-3, -2, -1), (-1, -3, -2)) + np.moveaxis(T, (-3, -2, -1), (-2, -1, -3))
    res = np.max(np.abs(R), axis=(-1, -2, -3))
    return _report(res, points)


def check_casimir(cgrad, sys: PoissonSystem, points) -> CheckReport:
    """Worst entry of grad C(y)^T B(y) over the points."""
    if isinstance(cgrad, ScalarField):
        cgrad = cgrad.grad
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rows = np.einsum("...i,...ij->...j", cgrad(points), sys.structure(points))
    res = np.max(np.abs(rows), axis=-1)
    return _report(res, points)


def step_jacobian_fd(step: Callable, y, h: float, dw, eps: float | None = None) -> np.ndarray:
    """Central-difference Jacobian of a one-step map at fixed (h, dw)."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    if eps is None:
        eps = _default_eps(y)
    E = eps * np.eye(d)
    batch = np.concatenate([y + E, y - E], axis=0)
    dw = np.asarray(dw, dtype=float)
    dw_batch = np.broadcast_to(dw, (2 * d,) + dw.shape)
    out = step(batch, h, dw_batch)
    return (out[:d] - out[d:]).T / (2.0 * eps)


def variational_jacobian(
    sys: PoissonSystem,
    y0,
    grid: TimeGrid,
    noise: WienerIncrements,
    stepper: Callable | None = None,
    tol: float = 1e-12,
) -> np.ndarray:
    """Jacobian of the flow via the variational equation, integrated alongside
    the state: dz_j = M_0 z_j dt + sum_r M_r z_j o dW_r, z_j(t0) = e_j.

    The augmented (state, variational) system is solved with the implicit
    midpoint rule by default, which makes the result the exact Jacobian of
    that discretized flow (up to the iteration tolerance).
    """
    if sys.structure_derivative is None or any(K.hess is None for K in sys.hamiltonians):
        raise ValueError("variational equation needs dB and the Hamiltonian Hessians")
    d = sys.dim

    def aug_field(K: ScalarField) -> Callable:
        vec = lambda y: np.einsum("...ij,...j->...i", sys.structure(y), K.grad(y))
        jac = field_jacobian(sys, K)

        def f(u):
            y = u[..., :d]
            Z = u[..., d:].reshape(u.shape[:-1] + (d, d))
            dZ = jac(y) @ Z
            return np.concatenate([vec(y), dZ.reshape(u.shape[:-1] + (d * d,))], axis=-1)

        return f

    aug = StratonovichSDE(
        dim=d + d * d,
        drift=aug_field(sys.hamiltonians[0]),
        diffusions=tuple(aug_field(K) for K in sys.hamiltonians[1:]),
    )
    if stepper is None:
        stepper = lambda u, h, dw: midpoint_step(aug, u, h, dw, tol=tol)
    u0 = np.concatenate([np.asarray(y0, dtype=float), np.eye(d).ravel()])
    traj = integrate(stepper, u0, grid, noise)
    return traj.states[-1][d:].reshape(d, d)


def poisson_map_residual(
    step: Callable, sys: PoissonSystem, y, h: float, dw, eps: float | None = None
) -> float:
    """Max-abs entry of M B(y) M^T - B(step(y)) with M the fd step Jacobian."""
    y = np.asarray(y, dtype=float)
    M = step_jacobian_fd(step, y, h, dw, eps)
    y_new = step(y, h, np.asarray(dw, dtype=float))
    res = M @ sys.structure(y) @ M.T - sys.structure(y_new)
    return float(np.max(np.abs(res)))
