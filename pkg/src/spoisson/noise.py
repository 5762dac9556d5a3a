"""Brownian increment generation, truncation, and coarsening.

Every experiment draws its randomness from one underlying fine-grid path per
sample: increments are generated once on the finest grid in play and coarsened
to the working step sizes, never regenerated per step size.  That keeps strong
(pathwise) error estimates meaningful.

Reproducibility rules, fixed per release:

* RNG is numpy's PCG64.  Monte Carlo sample ``i`` of a run with base seed
  ``s`` uses the substream ``SeedSequence(s, spawn_key=(i,))`` (see
  :func:`sample_seed`).
* Gaussians come from the inverse normal CDF applied to half-integer
  uniforms ``(j + 0.5) / 2**53``, so draws never hit 0 or 1 exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [t0, T] with n_steps steps of size h."""

    t0: float
    T: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.T > self.t0:
            raise ValueError(f"need T > t0, got [{self.t0}, {self.T}]")

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class TruncationPolicy:
    """Clamp standard-normal draws to +-A_h with A_h = sqrt(2 k |ln h|)."""

    k: float = 4.0
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"truncation strength k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class WienerIncrements:
    """Per-step Brownian increments ΔW_j ~ N(0, h) on a grid.

    ``values`` has shape (n_steps, dims) and is read-only; regenerating with
    the same seed is bit-identical.
    """

    grid: TimeGrid
    dims: int
    values: np.ndarray
    seed: object

    def __post_init__(self) -> None:
        if self.values.shape != (self.grid.n_steps, self.dims):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"(n_steps, dims) = ({self.grid.n_steps}, {self.dims})"
            )
        self.values.setflags(write=False)


def sample_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Substream seed for Monte Carlo sample `index` under base `seed`."""
    return np.random.SeedSequence(seed, spawn_key=(index,))


def _standard_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    # Inverse-CDF sampling from half-integer uniforms in (0, 1).
    u = (rng.integers(0, 1 << 53, size=shape) + 0.5) * 2.0**-53
    return ndtri(u)


def sample_increments(grid: TimeGrid, m: int, seed) -> WienerIncrements:
    """Draw n_steps x m independent increments ~ N(0, h), deterministic in seed."""
    if m < 1:
        raise ValueError(f"need at least one noise channel, got m={m}")
    if not isinstance(seed, np.random.SeedSequence):
        seed_seq = np.random.SeedSequence(seed)
    else:
        seed_seq = seed
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    values = math.sqrt(grid.h) * _standard_normal(rng, (grid.n_steps, m))
    return WienerIncrements(grid=grid, dims=m, values=values, seed=seed)


def truncation_bound(h: float, k: float) -> float:
    """A_h = sqrt(2 k |ln h|).  Rejects h >= 1, where the bound degenerates."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got h={h}")
    if h >= 1:
        raise ValueError(f"truncation bound undefined for h >= 1, got h={h}")
    return math.sqrt(2.0 * k * abs(math.log(h)))


def truncate(xi, h: float, policy: TruncationPolicy):
    """Clamp standard-normal draw(s) xi to [-A_h, A_h]; identity when disabled."""
    if not policy.enabled:
        return xi
    a = truncation_bound(h, policy.k)
    return np.clip(xi, -a, a)


def truncate_increments(dw, h: float, policy: TruncationPolicy):
    """Clamp increments ΔW = sqrt(h) ξ to [-sqrt(h) A_h, sqrt(h) A_h]."""
    if not policy.enabled:
        return dw
    a = math.sqrt(h) * truncation_bound(h, policy.k)
    return np.clip(dw, -a, a)


def coarsen_values(values: np.ndarray, factor: int) -> np.ndarray:
    """Sum each group of `factor` consecutive rows, left to right."""
    n = values.shape[0]
    if factor < 1 or n % factor:
        raise ValueError(f"factor {factor} does not divide n_steps {n}")
    acc = values[0::factor].copy()
    for j in range(1, factor):
        acc += values[j::factor]
    return acc


def coarsen(fine: WienerIncrements, factor: int) -> WienerIncrements:
    """Merge `factor` consecutive fine increments into one coarse increment."""
    grid = fine.grid
    values = coarsen_values(np.asarray(fine.values), factor)
    coarse_grid = TimeGrid(grid.t0, grid.T, grid.n_steps // factor)
    return WienerIncrements(
        grid=coarse_grid, dims=fine.dims, values=values, seed=fine.seed
    )
