"""Generic stepping loop, baseline integrators, and strong-error estimation.

One-step maps are pure functions ``step(y, h, dw) -> y_new`` where ``y`` has
shape (..., d) and ``dw`` shape (..., m); leading axes are an optional batch
(Monte Carlo samples run as one vectorized batch, each sample frozen the
moment its own implicit iteration converges, so results are independent of
batch membership).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .noise import TimeGrid, WienerIncrements, coarsen_values, sample_increments, sample_seed


class StepError(RuntimeError):
    """Base class for one-step map failures.

    ``mask`` (when set) is a boolean array over the batch axes marking the
    failing samples.
    """

    def __init__(self, message: str, mask=None):
        super().__init__(message)
        self.mask = mask


class NonConvergenceError(StepError):
    """Implicit iteration exceeded max_iter; carries the last residual."""

    def __init__(self, message: str, residual: float, mask=None):
        super().__init__(f"{message} (residual {residual:.3e})", mask)
        self.residual = residual


class DivergenceError(StepError):
    """Iterates left the representable range (NaN/Inf or overflow guard)."""


class DomainError(StepError):
    """State left the declared domain; carries the offending state."""

    def __init__(self, message: str, state=None, mask=None):
        super().__init__(message, mask)
        self.state = state


class IntegrationError(RuntimeError):
    """A stepper failed mid-trajectory; carries the step index."""

    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"stepper failed at step {step_index}: {cause}")
        self.step_index = step_index


@dataclass(frozen=True)
class StratonovichSDE:
    """dy = a(y) dt + sum_r b_r(y) o dW_r with optional Jacobians b_r'(y)."""

    dim: int
    drift: Callable
    diffusions: tuple[Callable, ...]
    diffusion_jacobians: tuple[Callable, ...] | None = None


@dataclass(frozen=True)
class ItoSDE:
    """dy = a(y) dt + sum_r b_r(y) dW_r in the Ito sense."""

    dim: int
    drift: Callable
    diffusions: tuple[Callable, ...]
    diffusion_jacobians: tuple[Callable, ...] | None = None


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray
    functionals: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class OrderEstimate:
    """Root-mean-square errors e(h) at T and the log-log least-squares slope."""

    step_sizes: np.ndarray
    errors: np.ndarray
    slope: float
    n_samples: int
    n_dropped: int = 0


_FD_EPS = float(np.cbrt(np.finfo(float).eps))


def _default_eps(y) -> float:
    # Central differences balance truncation vs round-off at eps ~ cbrt(ulp).
    return _FD_EPS * (1.0 + float(np.max(np.abs(y))))


def fd_vector_jacobian(f: Callable, y: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Central-difference Jacobian of a vector field, batch-capable.

    ``f`` maps (..., d) -> (..., d); the result has shape (..., d, d) with
    entry [..., i, j] = df_i/dy_j.
    """
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    if eps is None:
        eps = _default_eps(y)
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps
        cols.append((f(y + e) - f(y - e)) / (2.0 * eps))
    return np.stack(cols, axis=-1)


def strat_to_ito_drift(sde: StratonovichSDE, y, fd_fallback: bool = True):
    """Ito drift a(y) + 1/2 sum_r b_r'(y) b_r(y) of a Stratonovich system."""
    y = np.asarray(y, dtype=float)
    out = np.asarray(sde.drift(y), dtype=float).copy()
    for r, b in enumerate(sde.diffusions):
        if sde.diffusion_jacobians is not None:
            jac = sde.diffusion_jacobians[r](y)
        elif fd_fallback:
            jac = fd_vector_jacobian(b, y)
        else:
            raise ValueError(
                "diffusion Jacobians unavailable and finite differences disabled"
            )
        out += 0.5 * np.einsum("...ij,...j->...i", jac, b(y))
    return out


def ito_form(sde: StratonovichSDE, fd_fallback: bool = True) -> ItoSDE:
    """Equivalent Ito system of a Stratonovich one (drift correction baked in)."""
    return ItoSDE(
        dim=sde.dim,
        drift=lambda y: strat_to_ito_drift(sde, y, fd_fallback),
        diffusions=sde.diffusions,
        diffusion_jacobians=sde.diffusion_jacobians,
    )


def euler_maruyama_step(sde: ItoSDE, y, h: float, dw):
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    out = y + h * sde.drift(y)
    for r, b in enumerate(sde.diffusions):
        out = out + b(y) * dw[..., r, None]
    return out


def milstein_step(sde: ItoSDE, y, h: float, dw, fd_fallback: bool = True):
    """Milstein update for a single noise channel (needs the diffusion Jacobian)."""
    if len(sde.diffusions) != 1:
        raise ValueError("milstein_step supports a single noise channel only")
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    b = sde.diffusions[0]
    if sde.diffusion_jacobians is not None:
        jac = sde.diffusion_jacobians[0](y)
    elif fd_fallback:
        jac = fd_vector_jacobian(b, y)
    else:
        raise ValueError("diffusion Jacobian unavailable and finite differences disabled")
    bb = np.einsum("...ij,...j->...i", jac, b(y))
    dw0 = dw[..., 0, None]
    return euler_maruyama_step(sde, y, h, dw) + 0.5 * bb * (dw0**2 - h)


def fixed_point(update: Callable, x0: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Iterate x <- update(x) until successive iterates differ by < tol in max
    norm over the last axis, per batch entry (converged entries are frozen)."""
    x = np.array(x0, dtype=float, copy=True)
    active = np.ones(x.shape[:-1], dtype=bool)
    delta = None
    for _ in range(max_iter):
        xn = update(x)
        bad = ~np.isfinite(xn).all(axis=-1) & active
        if np.any(bad):
            raise DivergenceError("iterates diverged to NaN/Inf", mask=bad)
        delta = np.max(np.abs(xn - x), axis=-1)
        x = np.where(active[..., None], xn, x)
        active = active & ~(delta < tol)
        if not np.any(active):
            return x
    residual = float(np.max(np.where(active, delta, 0.0)))
    raise NonConvergenceError(
        f"no convergence within {max_iter} iterations", residual, mask=active
    )


def midpoint_step(
    sde: StratonovichSDE, y, h: float, dw, tol: float = 1e-12, max_iter: int = 100
):
    """Implicit midpoint rule for the Stratonovich system, by fixed point."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)

    def update(ynew):
        ybar = 0.5 * (y + ynew)
        out = y + h * sde.drift(ybar)
        for r, b in enumerate(sde.diffusions):
            out = out + b(ybar) * dw[..., r, None]
        return out

    return fixed_point(update, y, tol, max_iter)


def implicit_euler_maruyama_step(
    sde: ItoSDE, y, h: float, dw, tol: float = 1e-12, max_iter: int = 100
):
    """Drift-implicit, diffusion-explicit Euler for the Ito system."""
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    noise = np.zeros_like(y)
    for r, b in enumerate(sde.diffusions):
        noise = noise + b(y) * dw[..., r, None]

    def update(ynew):
        return y + h * sde.drift(ynew) + noise

    return fixed_point(update, y, tol, max_iter)


def integrate(
    stepper: Callable,
    y0,
    grid: TimeGrid,
    noise: WienerIncrements,
    record: dict[str, Callable] | None = None,
) -> Trajectory:
    """Run a one-step map over the grid, recording states (and functionals)."""
    if noise.grid != grid:
        raise ValueError("noise was generated on a different grid")
    y = np.asarray(y0, dtype=float)
    states = np.empty((grid.n_steps + 1,) + y.shape)
    states[0] = y
    h = grid.h
    for j in range(grid.n_steps):
        try:
            y = stepper(y, h, noise.values[j])
        except Exception as exc:
            raise IntegrationError(j, exc) from exc
        states[j + 1] = y
    functionals = {}
    if record:
        for name, fn in record.items():
            functionals[name] = np.stack([fn(s) for s in states])
    return Trajectory(grid=grid, states=states, functionals=functionals)


def fit_order(step_sizes, errors) -> float:
    """Least-squares slope of ln e against ln h; NaN if degenerate."""
    hs = np.asarray(step_sizes, dtype=float)
    es = np.asarray(errors, dtype=float)
    if len(hs) < 2 or np.any(es <= 0):
        return float("nan")
    return float(np.polyfit(np.log(hs), np.log(es), 1)[0])


def _run_endpoint(stepper, y, h, values):
    for j in range(values.shape[0]):
        y = stepper(y, h, values[j])
    return y


def ms_error_many(
    schemes: dict[str, Callable],
    reference: Callable,
    m: int,
    y0,
    T: float,
    step_sizes,
    n_samples: int,
    seed: int,
    t0: float = 0.0,
    ref_factor: int = 8,
    on_sample_error: str = "raise",
) -> dict[str, OrderEstimate]:
    """Coupled strong-error estimates for several schemes at once.

    All schemes and the reference share one underlying Brownian path per
    sample: increments are generated on the reference grid (step
    h_min / ref_factor) and summed to the working step sizes.  Errors are
    Euclidean endpoint norms averaged in sample order.

    ``on_sample_error``: "raise" (default) aborts on any failing sample;
    "drop" excludes failing samples from every run (sample results are
    batch-independent, so re-masking earlier runs is exact).
    """
    if n_samples < 1:
        raise ValueError("need n_samples >= 1")
    if on_sample_error not in ("raise", "drop"):
        raise ValueError(f"unknown sample error policy {on_sample_error!r}")
    hs = np.asarray(sorted(step_sizes, reverse=True), dtype=float)
    if len(np.unique(hs)) != len(hs):
        raise ValueError("step sizes must be distinct")
    h_ref = float(hs[-1]) / ref_factor
    n_ref = round((T - t0) / h_ref)
    if abs(n_ref * h_ref - (T - t0)) > 1e-9 * abs(T - t0):
        raise ValueError(f"reference step {h_ref} does not divide [{t0}, {T}]")
    factors = []
    for h in hs:
        f = round(h / h_ref)
        if abs(f * h_ref - h) > 1e-9 * h or n_ref % f:
            raise ValueError(f"step size {h} is not a multiple of the reference step")
        factors.append(f)

    fine_grid = TimeGrid(t0, T, n_ref)
    fine = np.stack(
        [
            sample_increments(fine_grid, m, sample_seed(seed, i)).values
            for i in range(n_samples)
        ],
        axis=1,
    )  # (n_ref, n_samples, m)
    y0 = np.asarray(y0, dtype=float)
    y0_batch = np.broadcast_to(y0, (n_samples,) + y0.shape).copy()

    included = np.ones(n_samples, dtype=bool)

    def run(stepper, h, values):
        """Endpoint states over currently included samples; NaN elsewhere."""
        while True:
            idx = np.flatnonzero(included)
            if idx.size == 0:
                raise RuntimeError("all samples failed")
            try:
                y_end = _run_endpoint(stepper, y0_batch[idx], h, values[:, idx])
            except StepError as exc:
                if on_sample_error == "raise" or exc.mask is None:
                    raise
                failing = idx[np.asarray(exc.mask, dtype=bool)]
                included[failing] = False
                continue
            out = np.full((n_samples,) + y0.shape, np.nan)
            out[idx] = y_end
            return out

    y_ref = run(reference, h_ref, fine)
    coarse = [coarsen_values(fine, f) for f in factors]
    endpoints = {
        name: [run(scheme, float(h), cv) for h, cv in zip(hs, coarse)]
        for name, scheme in schemes.items()
    }

    out = {}
    for name, ends in endpoints.items():
        errors = np.empty(len(hs))
        for i, y_end in enumerate(ends):
            diff = y_end[included] - y_ref[included]
            errors[i] = np.sqrt(np.mean(np.sum(diff**2, axis=-1)))
        out[name] = OrderEstimate(
            step_sizes=hs,
            errors=errors,
            slope=fit_order(hs, errors),
            n_samples=int(included.sum()),
            n_dropped=int(n_samples - included.sum()),
        )
    return out


def ms_error(
    scheme: Callable,
    reference: Callable,
    m: int,
    y0,
    T: float,
    step_sizes,
    n_samples: int,
    seed: int,
    t0: float = 0.0,
    ref_factor: int = 8,
    on_sample_error: str = "raise",
) -> OrderEstimate:
    """Root-mean-square endpoint error of one scheme against a coupled
    reference; see :func:`ms_error_many`."""
    return ms_error_many(
        {"scheme": scheme},
        reference,
        m,
        y0,
        T,
        step_sizes,
        n_samples,
        seed,
        t0=t0,
        ref_factor=ref_factor,
        on_sample_error=on_sample_error,
    )["scheme"]
