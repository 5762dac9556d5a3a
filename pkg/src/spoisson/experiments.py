"""Orchestration of the standard experiments: sample paths against a fine
reference, Casimir evolution against Euler-Maruyama, strong-order estimation,
and the structural check suite.

These functions are the engine behind the CLI commands and the scripts in
scripts/; they return plain data, leaving I/O to the caller.  Reproducibility:
sample i of any Monte Carlo run uses the substream seed
SeedSequence(seed, spawn_key=(i,)), and reductions run in sample order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .alpha_gf import symplectic_residual
from .canonical import Chart, verify_chart
from .noise import TimeGrid, coarsen, sample_increments
from .poisson import (
    PoissonSystem,
    ScalarField,
    check_casimir,
    check_jacobi,
    check_skew,
    drift_and_diffusions,
    poisson_map_residual,
)
from .sde import (
    euler_maruyama_step,
    implicit_euler_maruyama_step,
    integrate,
    ito_form,
    midpoint_step,
    ms_error_many,
)


def reference_stepper(sys: PoissonSystem, tol: float = 1e-12) -> Callable:
    """Implicit midpoint on the original Stratonovich coefficients."""
    sde = drift_and_diffusions(sys)
    return lambda y, h, dw: midpoint_step(sde, y, h, dw, tol=tol)


def em_stepper(sys: PoissonSystem) -> Callable:
    """Euler-Maruyama on the equivalent Ito form."""
    ito = ito_form(drift_and_diffusions(sys))
    return lambda y, h, dw: euler_maruyama_step(ito, y, h, dw)


def iem_stepper(sys: PoissonSystem, tol: float = 1e-12) -> Callable:
    """Drift-implicit, diffusion-explicit Euler on the equivalent Ito form."""
    ito = ito_form(drift_and_diffusions(sys))
    return lambda y, h, dw: implicit_euler_maruyama_step(ito, y, h, dw, tol=tol)


@dataclass(frozen=True)
class PathsResult:
    times: np.ndarray
    states: np.ndarray      # (n_steps + 1, d), the scheme
    reference: np.ndarray   # (n_steps + 1, d), fine midpoint sampled on the grid
    ref_step: float


def paths_experiment(
    sys: PoissonSystem,
    scheme: Callable,
    y0,
    grid: TimeGrid,
    seed: int,
    ref_factor: int = 1000,
    max_ref_steps: int = 10**6,
    tol: float = 1e-12,
) -> PathsResult:
    """One sample path of the scheme and a coupled fine-midpoint reference.

    The reference runs at h / ref_factor, with ref_factor reduced so the total
    reference step count stays below ``max_ref_steps``.
    """
    ref_factor = max(1, min(ref_factor, max_ref_steps // grid.n_steps))
    fine_grid = TimeGrid(grid.t0, grid.T, grid.n_steps * ref_factor)
    fine = sample_increments(fine_grid, sys.n_noise, seed)
    ref_traj = integrate(reference_stepper(sys, tol), y0, fine_grid, fine)
    traj = integrate(scheme, y0, grid, coarsen(fine, ref_factor))
    return PathsResult(
        times=grid.times(),
        states=traj.states,
        reference=ref_traj.states[::ref_factor],
        ref_step=fine_grid.h,
    )


@dataclass(frozen=True)
class CasimirResult:
    times: np.ndarray
    columns: dict[str, np.ndarray]  # casimir values per scheme name


def casimir_experiment(
    sys: PoissonSystem,
    schemes: dict[str, Callable],
    casimir: ScalarField,
    y0,
    grid: TimeGrid,
    seed: int,
) -> CasimirResult:
    """Casimir evolution of several schemes along one shared sample path."""
    noise = sample_increments(grid, sys.n_noise, seed)
    columns = {}
    for name, scheme in schemes.items():
        traj = integrate(scheme, y0, grid, noise, record={"C": casimir.value})
        columns[name] = traj.functionals["C"]
    return CasimirResult(times=grid.times(), columns=columns)


def order_experiment(
    sys: PoissonSystem,
    schemes: dict[str, Callable],
    y0,
    T: float,
    step_sizes,
    n_samples: int,
    seed: int,
    ref_factor: int = 8,
    tol: float = 1e-12,
    on_sample_error: str = "raise",
):
    """Coupled strong-error estimates against the fine midpoint reference.

    Errors are measured at T in the original coordinates (Euclidean norm),
    after any chart inverses the schemes apply internally.
    """
    return ms_error_many(
        schemes,
        reference_stepper(sys, tol),
        sys.n_noise,
        y0,
        T,
        step_sizes,
        n_samples,
        seed,
        ref_factor=ref_factor,
        on_sample_error=on_sample_error,
    )


@dataclass(frozen=True)
class CheckLine:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.residual < self.threshold


# Documented residual thresholds of the check suite.
THRESHOLDS = {
    "skew": 1e-10,
    "jacobi": 1e-8,
    "casimir": 1e-10,
    "chart": 1e-8,
    "symplectic": 1e-6,
    "poisson_map": 1e-6,
}


def check_suite(
    sys: PoissonSystem,
    points: np.ndarray,
    chart: Chart | None = None,
    canonical_stepper_factory: Callable | None = None,
    composed_scheme_factory: Callable | None = None,
    alphas=(0.0, 0.5, 1.0),
    h: float = 0.01,
    seed: int = 0,
    n_map_states: int = 20,
) -> list[CheckLine]:
    """Structural validators with pass/fail thresholds.

    ``canonical_stepper_factory(alpha)`` builds a one-step map on (P, Q) for
    the symplecticity check; ``composed_scheme_factory()`` a one-step map on y
    for the Poisson-map check.  Chart-dependent checks are skipped when no
    chart is supplied.
    """
    rng = np.random.default_rng(seed)
    lines = [
        CheckLine("skew", check_skew(sys, points).max_residual, THRESHOLDS["skew"]),
        CheckLine("jacobi", check_jacobi(sys, points).max_residual, THRESHOLDS["jacobi"]),
    ]
    for i, C in enumerate(sys.casimirs):
        lines.append(
            CheckLine(
                f"casimir[{i}]",
                check_casimir(C, sys, points).max_residual,
                THRESHOLDS["casimir"],
            )
        )
    if chart is not None:
        in_domain = points
        if chart.domain is not None:
            in_domain = points[chart.domain(points)]
        lines.append(
            CheckLine(
                "chart",
                verify_chart(chart, sys, in_domain).max_residual,
                THRESHOLDS["chart"],
            )
        )
    map_states = points[
        rng.choice(len(points), size=min(n_map_states, len(points)), replace=False)
    ]
    if canonical_stepper_factory is not None and chart is not None:
        # symplecticity is checked in chart coordinates
        zs = chart.forward(map_states)[..., : 2 * chart.n]
        worst = 0.0
        for alpha in alphas:
            stepper = canonical_stepper_factory(alpha)
            for z in zs:
                dw = np.sqrt(h) * rng.standard_normal(1)
                worst = max(worst, symplectic_residual(stepper, z, h, dw, eps=1e-6))
        lines.append(CheckLine("symplectic", worst, THRESHOLDS["symplectic"]))
    if composed_scheme_factory is not None:
        scheme = composed_scheme_factory()
        worst = 0.0
        for y in map_states:
            dw = np.sqrt(h) * rng.standard_normal(1)
            worst = max(worst, poisson_map_residual(scheme, sys, y, h, dw, eps=1e-6))
        lines.append(CheckLine("poisson_map", worst, THRESHOLDS["poisson_map"]))
    return lines
