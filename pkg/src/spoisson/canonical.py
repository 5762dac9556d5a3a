"""Canonical (Darboux-Lie) charts and the Poisson-integrator composition.

A chart theta maps states y to (P, Q, C) coordinates in which the structure
matrix becomes the constant block diag(J_block, 0), with the last l
coordinates the Casimir functions.  Charts are supplied per model (or by the
user) and validated numerically; solving the defining PDEs automatically is
out of scope.

The composed integrator realizes: transform, take one symplectic step in
(P, Q) with the Casimir parameters frozen at their initial values, reattach
the frozen parameters, invert.  Freezing is deliberate: recomputing C along
the way would mask Casimir drift.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .alpha_gf import AlphaSchemeConfig, alpha_step
from .noise import truncate_increments
from .poisson import CheckReport, PoissonSystem, ScalarField, _report
from .sde import DomainError, fd_vector_jacobian


def j_inverse(n: int) -> np.ndarray:
    """The canonical block [[0, -I_n], [I_n, 0]]."""
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    return J


@dataclass(frozen=True)
class Chart:
    """Coordinate change y -> (P, Q, C) with target constant matrix b0.

    ``forward`` maps (..., d) -> (..., d) and its last d - 2n components are
    the Casimir functions; ``inverse`` undoes it.  ``jacobian`` (when given)
    is the analytic A(y) = d theta / dy, otherwise finite differences of
    ``forward`` are used.  ``domain`` is a boolean predicate on y.
    """

    dim: int
    n: int
    forward: Callable
    inverse: Callable
    b0: np.ndarray
    jacobian: Callable | None = None
    domain: Callable | None = None

    @property
    def n_casimirs(self) -> int:
        return self.dim - 2 * self.n


@dataclass(frozen=True)
class CanonicalSHS:
    """Canonical Hamiltonian system dZ = J^-1 grad H_r(Z) (dt, o dW_r) with the
    Casimir parameters frozen into the Hamiltonians."""

    n: int
    n_noise: int
    casimir_values: np.ndarray
    hamiltonians: tuple[ScalarField, ...]

    def __post_init__(self) -> None:
        if len(self.hamiltonians) != self.n_noise + 1:
            raise ValueError("need exactly m+1 Hamiltonians H_0..H_m")


def chart_jacobian_at(chart: Chart, points) -> np.ndarray:
    if chart.jacobian is not None:
        return chart.jacobian(points)
    return fd_vector_jacobian(chart.forward, points)


def verify_chart(
    chart: Chart,
    sys: PoissonSystem,
    points,
    cond_threshold: float = 1e12,
) -> CheckReport:
    """Worst entry of A(y) B(y) A(y)^T - B0 over the points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    A = chart_jacobian_at(chart, points)
    cond = np.linalg.cond(A)
    if np.max(cond) > cond_threshold:
        worst = points[int(np.argmax(cond))]
        raise ValueError(f"chart Jacobian numerically singular at {worst}")
    res = A @ sys.structure(points) @ np.swapaxes(A, -1, -2) - chart.b0
    return _report(np.max(np.abs(res), axis=(-1, -2)), points)


def _block_sign(chart: Chart) -> float:
    """+1 if the leading 2n x 2n block of b0 is J^-1, -1 if it is -J^-1.

    A -J^-1 block is absorbed by negating every Hamiltonian, which brings the
    transformed system to the standard canonical form.
    """
    tn = 2 * chart.n
    block = np.asarray(chart.b0, dtype=float)[:tn, :tn]
    Jinv = j_inverse(chart.n)
    if np.array_equal(block, Jinv):
        return 1.0
    if np.array_equal(block, -Jinv):
        return -1.0
    raise ValueError("chart b0 leading block must be +-[[0,-I],[I,0]]")


def transform_system(sys: PoissonSystem, chart: Chart, y0) -> CanonicalSHS:
    """Generalized canonical system in chart coordinates, Casimirs frozen at y0.

    H_r(Z) = s K_r(theta^-1(Z, C)) with s the chart block sign; gradients come
    from the chain rule with the chart Jacobian, Hessians from central
    differences of that gradient.  Models may instead supply fully analytic
    Hamiltonians; this generic route exists for user systems and as a
    cross-check.
    """
    y0 = np.asarray(y0, dtype=float)
    if chart.domain is not None and not np.all(chart.domain(y0)):
        raise DomainError("initial state outside chart domain", state=y0)
    tn = 2 * chart.n
    ybar0 = chart.forward(y0)
    frozen_c = np.array(ybar0[..., tn:], dtype=float)
    sign = _block_sign(chart)

    def to_state(z):
        z = np.asarray(z, dtype=float)
        c = np.broadcast_to(frozen_c, z.shape[:-1] + frozen_c.shape)
        return chart.inverse(np.concatenate([z, c], axis=-1))

    def make_field(K: ScalarField) -> ScalarField:
        def value(z):
            return sign * K.value(to_state(z))

        def grad(z):
            y = to_state(z)
            A = chart_jacobian_at(chart, y)
            g = np.linalg.solve(np.swapaxes(A, -1, -2), K.grad(y)[..., None])[..., 0]
            return sign * g[..., :tn]

        return ScalarField(
            value=value,
            grad=grad,
            hess=lambda z: fd_vector_jacobian(grad, z),
        )

    return CanonicalSHS(
        n=chart.n,
        n_noise=sys.n_noise,
        casimir_values=frozen_c,
        hamiltonians=tuple(make_field(K) for K in sys.hamiltonians),
    )


def poisson_integrator(
    sys: PoissonSystem, chart: Chart, symplectic_stepper: Callable, frozen_c
) -> Callable:
    """Compose a symplectic one-step map on (P, Q) into a map on y.

    The returned map sends y to theta^-1(stepper(Z(theta(y))), C) with C the
    frozen Casimir values, so every iterate reproduces them exactly up to
    inverse-map round-off.
    """
    frozen_c = np.atleast_1d(np.asarray(frozen_c, dtype=float))
    tn = 2 * chart.n

    def step(y, h, dw):
        y = np.asarray(y, dtype=float)
        if chart.domain is not None:
            ok = np.asarray(chart.domain(y))
            if not np.all(ok):
                raise DomainError("state outside chart domain", state=y, mask=~ok)
        z = chart.forward(y)[..., :tn]
        z_new = symplectic_stepper(z, h, dw)
        c = np.broadcast_to(frozen_c, z_new.shape[:-1] + frozen_c.shape)
        return chart.inverse(np.concatenate([z_new, c], axis=-1))

    return step


def generic_alpha_scheme(
    sys: PoissonSystem, chart: Chart, y0, config: AlphaSchemeConfig
) -> Callable:
    """Composed alpha-generating scheme built from the generic transform.

    Model modules provide faster analytic variants; this one serves
    user-supplied systems and cross-checks (single noise channel only).
    """
    if sys.n_noise != 1:
        raise ValueError("alpha-generating schemes support a single noise channel")
    shs = transform_system(sys, chart, y0)

    def zstep(z, h, dw):
        return alpha_step(shs, z, h, dw[..., 0], config)

    inner = poisson_integrator(sys, chart, zstep, shs.casimir_values)

    def step(y, h, dw):
        return inner(y, h, truncate_increments(dw, h, config.truncation))

    return step
