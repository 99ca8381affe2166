"""Stopping times on the simulation grid, dyadic upper approximations,
stopped integrals and localization.

Every stopping time is decided on the grid: ``index(paths)`` returns the
first grid index at which the rule fires (or N), so ``{tau <= t_k}`` only
looks at the path up to ``t_k``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .expectation import ExpectationEstimate, ScenarioSet
from .integration import (GridProcess, abs_power, bochner_integral, ito_integral, process_values,
                          product, qv_integral)
from .scenarios import GRID_MATCH_RTOL, TimeGrid


def _first_true(mask: np.ndarray, default: int) -> np.ndarray:
    hit = mask.any(axis=-1)
    return np.where(hit, mask.argmax(axis=-1), default)


class StoppingTime:
    name = "tau"

    def index(self, paths) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, paths) -> np.ndarray:
        return paths.grid.points[self.index(paths)]

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class Deterministic(StoppingTime):
    def __init__(self, t: float):
        self.t = float(t)
        self.name = f"det({self.t:g})"

    def index(self, paths):
        pts = paths.grid.points
        tol = GRID_MATCH_RTOL * max(paths.grid.horizon, 1.0)
        # Snap upward to the next grid point; times past T stop at T.
        k = min(int(np.searchsorted(pts, self.t - tol)), paths.n_steps)
        return np.full(paths.b.shape[:-1], k, dtype=np.int64)


_MONITORS = {
    "b": lambda p: p.b,
    "abs_b": lambda p: np.abs(p.b),
    "qv": lambda p: p.qv,
}


class HittingTime(StoppingTime):
    """First grid time the monitored process reaches ``threshold``.

    ``direction="up"`` fires on ``m >= threshold``, ``"down"`` on
    ``m <= threshold``.  ``monitored`` is ``"b"``, ``"abs_b"``, ``"qv"`` or
    any adapted process.
    """

    def __init__(self, threshold: float, monitored="b", direction: str = "up"):
        if direction not in ("up", "down"):
            raise ConfigurationError(f"direction must be 'up' or 'down', not {direction!r}")
        self.threshold = float(threshold)
        self.monitored = monitored
        self.direction = direction
        label = monitored if isinstance(monitored, str) else getattr(monitored, "name", "m")
        self.name = f"hit({label}{'>=' if direction == 'up' else '<='}{self.threshold:g})"

    def index(self, paths):
        if isinstance(self.monitored, str):
            m = _MONITORS[self.monitored](paths)
        else:
            m = process_values(self.monitored, paths)
        mask = m >= self.threshold if self.direction == "up" else m <= self.threshold
        return _first_true(mask, paths.n_steps)


_INTEGRALS = {"dt": bochner_integral, "dqv": qv_integral, "dB": ito_integral}


class IntegralThreshold(StoppingTime):
    """First grid time the running integral of ``integrand`` exceeds ``level``."""

    def __init__(self, integrand, level: float, kind: str = "dt"):
        if kind not in _INTEGRALS:
            raise ConfigurationError(f"unknown integral kind {kind!r}")
        self.integrand = integrand
        self.level = float(level)
        self.kind = kind
        self.name = f"int_{kind}({getattr(integrand, 'name', 'eta')})>{self.level:g}"

    def running(self, paths) -> np.ndarray:
        return _INTEGRALS[self.kind](self.integrand, paths).values

    def index(self, paths):
        return _first_true(self.running(paths) > self.level, paths.n_steps)


class MinOf(StoppingTime):
    def __init__(self, first: StoppingTime, second: StoppingTime):
        self.first, self.second = first, second
        self.name = f"min({first.name},{second.name})"

    def index(self, paths):
        return np.minimum(self.first.index(paths), self.second.index(paths))


# -- dyadic approximation -----------------------------------------------------


def _is_uniform(grid: TimeGrid) -> bool:
    return np.array_equal(grid.points, TimeGrid.uniform(grid.horizon, grid.n_steps).points)


def dyadic_upper(tau: StoppingTime, n: int, paths) -> np.ndarray:
    """Smallest point of the mesh ``{k T / 2^n}`` at or above ``tau``."""
    if n < 1:
        raise ValueError("dyadic level must be >= 1")
    grid = paths.grid
    T, N = grid.horizon, grid.n_steps
    k = np.asarray(tau.index(paths), dtype=np.int64)
    scale = 2 ** n
    if _is_uniform(grid):
        # Exact integer arithmetic: tau = k T / N.
        num = k.astype(object) * scale
        m = np.asarray(-((-num) // N), dtype=np.int64)
        on_mesh = np.asarray(m.astype(object) * N == num, dtype=bool)
        return np.where(on_mesh, grid.points[k], m * T / scale)
    t = grid.points[k]
    m = np.ceil(t * scale / T)
    out = m * T / scale
    out = np.where(out < t, (m + 1) * T / scale, out)
    return np.minimum(out, T)


def dyadic_l1_gap(tau: StoppingTime, n: int, scenarios: ScenarioSet) -> ExpectationEstimate:
    """Estimate of ``E int_0^T |1[0,tau_n](t) - 1[0,tau](t)| dt = E[tau_n - tau]``."""
    return scenarios.expectation(lambda e: dyadic_upper(tau, n, e) - tau.evaluate(e))


def indicator_process(tau: StoppingTime) -> GridProcess:
    """Grid representative of ``1[0, tau]`` for left-point sums.

    The value at ``t_k`` is 1 when the step ``[t_k, t_{k+1})`` lies in
    ``[0, tau]``, i.e. ``t_k < tau``; when ``tau = T`` every value is 1.
    """
    def rule(paths):
        k = np.asarray(tau.index(paths))[..., None]
        j = np.arange(paths.n_steps + 1)
        return ((j < k) | (k == paths.n_steps)).astype(float)
    return GridProcess(rule, bound=1.0, name=f"1[0,{tau.name}]")


def stopped_integral(eta, tau: StoppingTime, t: float, paths) -> np.ndarray:
    """``int_0^{t ^ tau} eta dB``: the running integral read at the stopped index."""
    running = ito_integral(eta, paths).values
    k = np.minimum(paths.grid.index_of(t), np.asarray(tau.index(paths)))
    return np.take_along_axis(running, np.asarray(k)[..., None], axis=-1)[..., 0]


def integral_of_stopped(eta, tau: StoppingTime, t: float, paths) -> np.ndarray:
    """``int_0^t 1[0,tau] eta dB`` read at ``t``."""
    return ito_integral(product(indicator_process(tau), eta), paths).at(t)


def stopped_identity_gap(eta, tau: StoppingTime, paths) -> np.ndarray:
    """Per-path ``max_t |int_0^{t ^ tau} eta dB - int_0^t 1[0,tau] eta dB|`` over grid times."""
    running = ito_integral(eta, paths).values
    j = np.arange(paths.n_steps + 1)
    k = np.minimum(j, np.asarray(tau.index(paths))[..., None])
    stopped = np.take_along_axis(running, k, axis=-1)
    other = ito_integral(product(indicator_process(tau), eta), paths).values
    return np.max(np.abs(stopped - other), axis=-1)


def stopped_process(X, tau: StoppingTime) -> GridProcess:
    """``X_{t ^ tau}`` on the grid."""
    def rule(paths):
        v = process_values(X, paths)
        k = np.asarray(tau.index(paths))[..., None]
        j = np.arange(paths.n_steps + 1)
        held = np.take_along_axis(v, np.broadcast_to(k, v.shape[:-1] + (1,)), axis=-1)
        return np.where(j <= k, v, held)
    return GridProcess(rule, name=f"{getattr(X, 'name', 'X')}^{tau.name}")


# -- localization -------------------------------------------------------------


class LocalizationSequence:
    """Increasing stopping times ``sigma_m`` that reach T as m grows."""

    def __init__(self, rule: Callable[[int], StoppingTime], name: str = "sigma"):
        self.rule = rule
        self.name = name

    def __call__(self, m: int) -> StoppingTime:
        return self.rule(m)

    @classmethod
    def horizon(cls, T: float) -> "LocalizationSequence":
        return cls(lambda m: Deterministic(T), name="T")

    @classmethod
    def exit_times(cls, scale: float = 1.0) -> "LocalizationSequence":
        """Exit times of ``|B|`` from ``[-m scale, m scale]``."""
        return cls(lambda m: HittingTime(m * scale, "abs_b", "up"), name=f"exit({scale:g}m)")

    def check_increasing(self, paths, levels) -> bool:
        idx = [self(m).index(paths) for m in levels]
        return all(np.all(a <= b) for a, b in zip(idx, idx[1:]))


def localize(eta, rule: str, n: float, sequence: LocalizationSequence | None = None):
    """``(1[0,tau_n] eta, tau_n)`` with ``tau_n`` the first time the running
    ``int |eta| ds`` (``rule="L1"``) or ``int |eta|^2 ds`` (``"L2"``) exceeds
    ``n``, capped by ``sequence(n)``.
    """
    if n < 1:
        raise ValueError("localization level must be >= 1")
    powers = {"L1": 1.0, "L2": 2.0}
    if rule not in powers:
        raise ConfigurationError(f"localization rule must be L1 or L2, not {rule!r}")
    tau = IntegralThreshold(abs_power(eta, powers[rule]), n, "dt")
    if sequence is not None:
        tau = MinOf(tau, sequence(n))
    return product(indicator_process(tau), eta), tau


def finite_p_integral(eta, p: float, paths) -> np.ndarray:
    """Per-path flag: ``int_0^T |eta|^p ds`` is finite (sampled M_omega^p membership)."""
    return np.isfinite(bochner_integral(abs_power(eta, p), paths).final)


def stop_time_rows(tau: StoppingTime, n: int, paths):
    """CSV rows ``path_id, tau, tau_dyadic_n`` for an ensemble."""
    tt = tau.evaluate(paths)
    td = dyadic_upper(tau, n, paths)
    rows = [("path_id", "tau", f"tau_dyadic_{n}")]
    rows += [(int(i), float(a), float(b)) for i, a, b in zip(paths.path_index, tt, td)]
    return rows


def random_stopping_time(rng: np.random.Generator, horizon: float, sigma_hi: float,
                         eta=None, depth: int = 0) -> StoppingTime:
    """A stopping time drawn from the hitting / threshold / deterministic families."""
    kinds = ["abs_b", "b_down", "qv", "det"] + (["int"] if eta is not None else [])
    if depth == 0:
        kinds.append("min")
    kind = kinds[int(rng.integers(len(kinds)))]
    scale = sigma_hi * np.sqrt(horizon)
    if kind == "abs_b":
        return HittingTime(rng.uniform(0.1, 1.5) * scale, "abs_b")
    if kind == "b_down":
        return HittingTime(-rng.uniform(0.1, 1.5) * scale, "b", "down")
    if kind == "qv":
        return HittingTime(rng.uniform(0.05, 1.0) * sigma_hi ** 2 * horizon, "qv")
    if kind == "det":
        return Deterministic(rng.uniform(0.0, horizon))
    if kind == "int":
        return IntegralThreshold(abs_power(eta, 2.0), rng.uniform(0.01, 1.0) * horizon, "dt")
    return MinOf(random_stopping_time(rng, horizon, sigma_hi, eta, depth + 1),
                 random_stopping_time(rng, horizon, sigma_hi, eta, depth + 1))
