"""A three-species stochastic Lotka-Volterra system in Stratonovich form.

dy = B(y) grad K(y) (dt + c2 o dW) with

    K(y)  = a b y1 + y2 - a y3 + nu ln y2 - mu ln y3,
    B(y)  = [[0, r y1 y2, b r y1 y3],
             [-r y1 y2, 0, y2 y3],
             [-b r y1 y3, -y2 y3, 0]],

on the positive octant.  C(y) = (1/r) ln y1 - b ln y2 + ln y3 is a Casimir.
The canonical chart (P, Q, C) = (ln y3, -ln y2, C(y)) has exponential
inverse, so the composed scheme keeps every iterate componentwise positive
by construction.

The chart's constant block is [[0, 1], [-1, 0]] = -J^-1; the transformed
Hamiltonian therefore carries a sign flip, H = -K o theta^-1:

    H(P, Q) = -a b E - exp(-Q) + nu Q + a exp(P) + mu P,
    E = exp(r (C - P - b Q)).

Exponentials are range-guarded: arguments beyond the representable range
raise instead of silently producing infinities (divergent implicit
iterations can push r (C - P - b Q) arbitrarily far).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..alpha_gf import AlphaSchemeConfig, make_alpha_stepper
from ..canonical import CanonicalSHS, Chart, poisson_integrator
from ..noise import truncate_increments
from ..poisson import PoissonSystem, ScalarField, scale_field
from ..sde import DivergenceError, DomainError


@dataclass(frozen=True)
class LVParams:
    a: float
    b: float
    r: float
    nu: float
    mu: float
    c2: float

    def __post_init__(self) -> None:
        if self.r == 0:
            raise ValueError("r must be nonzero (the Casimir carries 1/r)")


REFERENCE_PARAMS = LVParams(a=-2.0, b=-1.0, r=-0.5, nu=1.0, mu=2.0, c2=0.2)
REFERENCE_Y0 = np.array([2.0, 0.9, 0.5])

_EXP_CAP = 700.0  # np.exp overflows just above log(float max) ~ 709.8


def _exp(x):
    x = np.asarray(x, dtype=float)
    bad = x > _EXP_CAP
    if np.any(bad):
        raise DivergenceError("exponential argument out of range", mask=bad)
    return np.exp(x)


def _require_positive(y):
    y = np.asarray(y, dtype=float)
    bad = ~np.all(y > 0, axis=-1)
    if np.any(bad):
        raise DomainError("state must be componentwise positive", state=y, mask=bad)
    return y


def _structure_factory(params: LVParams) -> Callable:
    b, r = params.b, params.r

    def structure(y):
        y = np.asarray(y, dtype=float)
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        z = np.zeros_like(y1)
        return np.stack(
            [
                np.stack([z, r * y1 * y2, b * r * y1 * y3], axis=-1),
                np.stack([-r * y1 * y2, z, y2 * y3], axis=-1),
                np.stack([-b * r * y1 * y3, -y2 * y3, z], axis=-1),
            ],
            axis=-2,
        )

    return structure


def _structure_derivative_factory(params: LVParams) -> Callable:
    b, r = params.b, params.r

    def deriv(y):
        y = np.asarray(y, dtype=float)
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        dB = np.zeros(y.shape[:-1] + (3, 3, 3))
        dB[..., 0, 1, 0] = r * y2
        dB[..., 0, 1, 1] = r * y1
        dB[..., 0, 2, 0] = b * r * y3
        dB[..., 0, 2, 2] = b * r * y1
        dB[..., 1, 2, 1] = y3
        dB[..., 1, 2, 2] = y2
        dB[..., [1, 2, 2], [0, 0, 1], :] = -dB[..., [0, 0, 1], [1, 2, 2], :]
        return dB

    return deriv


def hamiltonian(params: LVParams) -> ScalarField:
    a, b, nu, mu = params.a, params.b, params.nu, params.mu

    def value(y):
        y = _require_positive(y)
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        return a * b * y1 + y2 - a * y3 + nu * np.log(y2) - mu * np.log(y3)

    def grad(y):
        y = _require_positive(y)
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        ab = np.broadcast_to(a * b, y1.shape)
        return np.stack([ab, 1.0 + nu / y2, -a - mu / y3], axis=-1)

    def hess(y):
        y = _require_positive(y)
        y2, y3 = y[..., 1], y[..., 2]
        H = np.zeros(y.shape[:-1] + (3, 3))
        H[..., 1, 1] = -nu / y2**2
        H[..., 2, 2] = mu / y3**2
        return H

    return ScalarField(value=value, grad=grad, hess=hess)


def casimir(params: LVParams) -> ScalarField:
    b, r = params.b, params.r

    def value(y):
        y = _require_positive(y)
        return (np.log(y[..., 0]) / r - b * np.log(y[..., 1]) + np.log(y[..., 2]))

    def grad(y):
        y = _require_positive(y)
        return np.stack(
            [1.0 / (r * y[..., 0]), -b / y[..., 1], 1.0 / y[..., 2]], axis=-1
        )

    def hess(y):
        y = _require_positive(y)
        H = np.zeros(y.shape[:-1] + (3, 3))
        H[..., 0, 0] = -1.0 / (r * y[..., 0] ** 2)
        H[..., 1, 1] = b / y[..., 1] ** 2
        H[..., 2, 2] = -1.0 / y[..., 2] ** 2
        return H

    return ScalarField(value=value, grad=grad, hess=hess)


def _positive_domain(y):
    return np.all(np.asarray(y) > 0, axis=-1)


def system(params: LVParams) -> PoissonSystem:
    K = hamiltonian(params)
    return PoissonSystem(
        dim=3,
        n_noise=1,
        structure=_structure_factory(params),
        hamiltonians=(K, scale_field(K, params.c2)),
        rank=2,
        structure_derivative=_structure_derivative_factory(params),
        casimirs=(casimir(params),),
        domain=_positive_domain,
    )


def chart(casimir_value: float, params: LVParams) -> Chart:
    """Canonical chart (P, Q, C) = (ln y3, -ln y2, C(y)); inverse exponential."""
    b, r = params.b, params.r
    cas = casimir(params)

    def forward(y):
        y = _require_positive(y)
        return np.stack(
            [np.log(y[..., 2]), -np.log(y[..., 1]), cas.value(y)], axis=-1
        )

    def inverse(ybar):
        ybar = np.asarray(ybar, dtype=float)
        p, q, c = ybar[..., 0], ybar[..., 1], ybar[..., 2]
        return np.stack(
            [_exp(r * (c - p - b * q)), _exp(-q), _exp(p)], axis=-1
        )

    def jacobian(y):
        y = _require_positive(y)
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        z = np.zeros_like(y1)
        return np.stack(
            [
                np.stack([z, z, 1.0 / y3], axis=-1),
                np.stack([z, -1.0 / y2, z], axis=-1),
                np.stack([1.0 / (r * y1), -b / y2, 1.0 / y3], axis=-1),
            ],
            axis=-2,
        )

    b0 = np.zeros((3, 3))
    b0[0, 1] = 1.0
    b0[1, 0] = -1.0
    return Chart(dim=3, n=1, forward=forward, inverse=inverse, b0=b0,
                 jacobian=jacobian, domain=_positive_domain)


def transformed_shs(params: LVParams, casimir_value: float) -> CanonicalSHS:
    """Analytic canonical Hamiltonian H = -K o theta^-1 (sign from the chart
    block, see module docstring); the noise Hamiltonian is c2 H."""
    a, b, r, nu, mu = params.a, params.b, params.r, params.nu, params.mu
    c = casimir_value

    def _e(z):
        p, q = z[..., 0], z[..., 1]
        return _exp(r * (c - p - b * q))

    def value(z):
        z = np.asarray(z, dtype=float)
        p, q = z[..., 0], z[..., 1]
        return -a * b * _e(z) - _exp(-q) + nu * q + a * _exp(p) + mu * p

    def grad(z):
        z = np.asarray(z, dtype=float)
        p, q = z[..., 0], z[..., 1]
        E = _e(z)
        out = np.empty_like(z)
        out[..., 0] = a * b * r * E + a * _exp(p) + mu
        out[..., 1] = a * b**2 * r * E + _exp(-q) + nu
        return out

    def hess(z):
        z = np.asarray(z, dtype=float)
        p, q = z[..., 0], z[..., 1]
        E = _e(z)
        out = np.empty(z.shape[:-1] + (2, 2))
        out[..., 0, 0] = -a * b * r**2 * E + a * _exp(p)
        out[..., 1, 1] = -a * b**3 * r**2 * E - _exp(-q)
        out[..., 0, 1] = out[..., 1, 0] = -a * b**2 * r**2 * E
        return out

    H = ScalarField(value=value, grad=grad, hess=hess)
    return CanonicalSHS(
        n=1,
        n_noise=1,
        casimir_values=np.array([casimir_value]),
        hamiltonians=(H, scale_field(H, params.c2)),
    )


def alpha_scheme(params: LVParams, y0, config: AlphaSchemeConfig) -> Callable:
    """Composed alpha-generating one-step map; iterates stay positive."""
    y0 = _require_positive(np.asarray(y0, dtype=float))
    cv = float(casimir(params).value(y0))
    ch = chart(cv, params)
    shs = transformed_shs(params, cv)
    inner = poisson_integrator(system(params), ch, make_alpha_stepper(shs, config), [cv])

    def step(y, h, dw):
        return inner(y, h, truncate_increments(dw, h, config.truncation))

    return step


def alpha_scheme_map(params: LVParams, config: AlphaSchemeConfig) -> Callable:
    """Self-starting variant of :func:`alpha_scheme` for Jacobian diagnostics:
    Casimir parameters come from the input state on every call.  Batched
    inputs step row by row."""

    def step(y, h, dw):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return alpha_scheme(params, y, config)(y, h, dw)
        dw = np.broadcast_to(np.asarray(dw, dtype=float), y.shape[:-1] + (1,))
        return np.stack(
            [alpha_scheme(params, yi, config)(yi, h, di) for yi, di in zip(y, dw)]
        )

    return step
