"""Explicit monotone finite differences for the G-heat equation.

``du/dt = G(d^2u/dx^2)``, ``u(0, .) = phi``; then ``u(T, x)`` approximates
the sublinear expectation of ``phi(x + B_T)``.  Used as an oracle for the
Monte Carlo engine on terminal payoffs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError
from .expectation import GFunction, g_eval, sup_expectation
from .scenarios import Control, SeedPolicy, TimeGrid, VolatilityBand, default_controls


@dataclass(frozen=True)
class PdeGrid:
    x_min: float
    x_max: float
    n_x: int
    dt: float
    horizon: float

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ConfigurationError("x_max must exceed x_min")
        if self.n_x < 3:
            raise ConfigurationError("need at least three spatial points")
        if not (self.dt > 0 and self.horizon > 0):
            raise ConfigurationError("time step and horizon must be positive")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def n_t(self) -> int:
        return max(1, math.ceil(self.horizon / self.dt - 1e-9))

    @property
    def step(self) -> float:
        """The time step actually used: ``horizon / n_t`` (never above ``dt``)."""
        return self.horizon / self.n_t

    def cfl_limit(self, band: VolatilityBand) -> float:
        return self.dx ** 2 / (2 * band.sigma_hi ** 2)

    @classmethod
    def for_band(cls, band: VolatilityBand, horizon: float, dx: float = 0.02,
                 buffer: float = 6.0, center: float = 0.0, cfl: float = 1.0) -> "PdeGrid":
        """Domain ``center +- (buffer sigma_hi sqrt(T) + 2 dx)`` with the largest stable step."""
        half = buffer * band.sigma_hi * math.sqrt(horizon) + 2 * dx
        n_half = math.ceil(half / dx)
        dt = cfl * dx ** 2 / (2 * band.sigma_hi ** 2)
        return cls(center - n_half * dx, center + n_half * dx, 2 * n_half + 1, dt, horizon)


@dataclass(frozen=True, eq=False)
class ValueSurface:
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    terminal: str
    boundary_warning: bool = False

    @property
    def final(self) -> np.ndarray:
        return self.u[-1]

    def at(self, x: float) -> float:
        return float(np.interp(x, self.x, self.final))

    def to_csv_rows(self):
        rows = [("t", "x", "u")]
        for t, row in zip(self.times.tolist(), self.u):
            rows += [(t, xi, ui) for xi, ui in zip(self.x.tolist(), row.tolist())]
        return rows


def solve(phi: Callable, band: VolatilityBand, grid: PdeGrid, readout: float = 0.0,
          buffer: float = 6.0, n_store: int = 50, name: str = "phi") -> ValueSurface:
    """March ``u += dt G(D^2 u)`` with ``u = phi`` held on the boundary.

    ``n_store`` evenly spaced time slices (plus both ends) are kept.
    """
    dt = grid.step
    if dt > grid.cfl_limit(band) * (1 + 1e-12):
        raise ConfigurationError(
            f"CFL violated: dt={dt:.3g} > dx^2/(2 sigma_hi^2)={grid.cfl_limit(band):.3g}")
    g = GFunction(band)
    x = grid.x
    u = np.asarray(phi(x), dtype=float).copy()
    if u.shape != x.shape:
        u = np.broadcast_to(u, x.shape).copy()
    inv_dx2 = 1.0 / grid.dx ** 2
    keep = set(np.linspace(0, grid.n_t, min(n_store, grid.n_t) + 1).round().astype(int).tolist())
    times, slices = [0.0], [u.copy()]
    for m in range(1, grid.n_t + 1):
        lap = (u[2:] - 2.0 * u[1:-1] + u[:-2]) * inv_dx2
        u[1:-1] = u[1:-1] + dt * g_eval(g, lap)
        if m in keep:
            times.append(m * dt)
            slices.append(u.copy())
    reach = buffer * band.sigma_hi * math.sqrt(grid.horizon)
    warn = bool(readout - reach < grid.x_min or readout + reach > grid.x_max)
    if warn:
        warnings.warn("PDE boundary lies within the diffusion buffer of the readout point")
    return ValueSurface(np.array(times), x, np.stack(slices), name, warn)


@dataclass
class McConfig:
    n_paths: int = 100_000
    n_steps: int = 32
    seed: int = 20240601
    controls: Sequence[Control] | None = None
    jobs: int = 1


def cross_validate(phi: Callable, band: VolatilityBand, mc_config: McConfig, pde_grid: PdeGrid,
                   x0: float = 0.0, scheme_tol: float = 2e-3, k: float = 3.0) -> dict:
    """Monte Carlo supremum versus PDE value for ``phi(x0 + B_T)``."""
    grid = TimeGrid.uniform(pde_grid.horizon, mc_config.n_steps)
    controls = mc_config.controls or default_controls(band)
    est = sup_expectation(lambda e: phi(x0 + e.b[..., -1]), controls, grid, band,
                          mc_config.n_paths, SeedPolicy(mc_config.seed), jobs=mc_config.jobs)
    surface = solve(phi, band, pde_grid, readout=x0)
    pde_value = surface.at(x0)
    gap = abs(est.value - pde_value)
    allowed = max(0.01 * abs(pde_value), k * est.std_error + scheme_tol)
    return {"mc_value": est.value, "mc_std_error": est.std_error,
            "argmax_control_id": est.argmax_control_id, "pde_value": pde_value,
            "abs_gap": gap, "allowed": allowed, "pass": bool(gap <= allowed),
            "boundary_warning": surface.boundary_warning}
