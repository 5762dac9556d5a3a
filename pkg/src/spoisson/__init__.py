"""Structure-preserving numerical integrators for stochastic Poisson systems."""

from .alpha_gf import AlphaSchemeConfig, SbarGradient, alpha_step, make_alpha_stepper, sbar_gradient, symplectic_residual
from .canonical import CanonicalSHS, Chart, generic_alpha_scheme, j_inverse, poisson_integrator, transform_system, verify_chart
from .noise import TimeGrid, TruncationPolicy, WienerIncrements, coarsen, coarsen_values, sample_increments, sample_seed, truncate, truncate_increments, truncation_bound
from .poisson import CheckReport, PoissonSystem, ScalarField, bracket, check_casimir, check_jacobi, check_skew, drift_and_diffusions, fd_field, fd_gradient, poisson_map_residual, scale_field, step_jacobian_fd, variational_jacobian
from .sde import (
    DivergenceError,
    DomainError,
    IntegrationError,
    ItoSDE,
    NonConvergenceError,
    OrderEstimate,
    StepError,
    StratonovichSDE,
    Trajectory,
    euler_maruyama_step,
    fd_vector_jacobian,
    fit_order,
    implicit_euler_maruyama_step,
    integrate,
    ito_form,
    midpoint_step,
    milstein_step,
    ms_error,
    ms_error_many,
    strat_to_ito_drift,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
