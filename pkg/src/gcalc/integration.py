"""Adapted integrands and the three integrals: dB, dt and d<B>.

All integrals are left-point sums on the simulation grid, which is exactly
the definition for step processes whose breakpoints sit on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ConfigurationError
from .expectation import ExpectationEstimate, ScenarioSet, pooled_std_error, reduce_samples
from .scenarios import TimeGrid

STAT_K = 3.0


class GridProcess:
    """An adapted process sampled at every grid point.

    ``rule(paths)`` returns an array shaped like ``paths.b``; its value at
    index k may only depend on the path up to ``t_k``.  That contract is
    not checked on every call; see :func:`adaptedness_audit`.
    """

    def __init__(self, rule: Callable, bound: float | None = None, name: str = "eta"):
        self.rule = rule
        self.bound = None if bound is None else float(bound)
        self.name = name

    def values(self, paths) -> np.ndarray:
        v = np.asarray(self.rule(paths), dtype=float)
        v = np.broadcast_to(v, paths.b.shape)
        if self.bound is not None and np.any(np.abs(v) > self.bound):
            raise ContractError(f"{self.name} exceeds its declared bound {self.bound}")
        return v

    @classmethod
    def constant(cls, c: float) -> "GridProcess":
        return cls(lambda p: np.full(p.b.shape, float(c)), bound=abs(float(c)), name=f"{c}")

    @classmethod
    def of_b(cls, f: Callable, bound=None, name="f(B)") -> "GridProcess":
        """``f(B_t)`` evaluated pointwise."""
        return cls(lambda p: f(p.b), bound=bound, name=name)

    def __repr__(self):
        return f"GridProcess({self.name})"


class SimpleProcess:
    """Step process ``sum_j xi_j 1[t_j, t_{j+1})`` with bounded adapted coefficients.

    ``coefficients[j]`` receives the path window ending at ``t_j`` and must
    return values bounded by ``bound`` in absolute value.
    """

    def __init__(self, breakpoints: Sequence[float], coefficients: Sequence[Callable],
                 bound: float, name: str = "simple"):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        if self.breakpoints.size < 2 or self.breakpoints[0] != 0.0:
            raise ConfigurationError("breakpoints must start at 0 and contain at least two times")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ConfigurationError("breakpoints must be strictly increasing")
        if len(coefficients) != self.breakpoints.size - 1:
            raise ConfigurationError("need one coefficient per breakpoint interval")
        self.coefficients = list(coefficients)
        self.bound = float(bound)
        self.name = name

    def indices(self, grid: TimeGrid) -> list:
        return [grid.index_of(t) for t in self.breakpoints]

    def coefficient_values(self, paths) -> list:
        """The realised coefficients ``xi_j``, one array per interval."""
        out = []
        for j, k in enumerate(self.indices(paths.grid)[:-1]):
            xi = np.broadcast_to(np.asarray(self.coefficients[j](paths.upto(k)), dtype=float),
                                 paths.b.shape[:-1])
            if np.any(np.abs(xi) > self.bound):
                raise ContractError(f"coefficient {j} of {self.name} exceeds bound {self.bound}")
            out.append(xi)
        return out

    def values(self, paths) -> np.ndarray:
        idx = self.indices(paths.grid)
        v = np.zeros(paths.b.shape)
        for j, xi in enumerate(self.coefficient_values(paths)):
            v[..., idx[j]:idx[j + 1]] = xi[..., None]
        return v


@dataclass(frozen=True, eq=False)
class IntegralPath:
    grid: TimeGrid
    values: np.ndarray
    kind: str

    @property
    def final(self) -> np.ndarray:
        return self.values[..., -1]

    def at(self, t: float):
        return self.values[..., self.grid.index_of(t)]

    def to_csv_rows(self):
        if self.values.ndim != 1:
            raise ValueError("CSV export is per path")
        return [("t", "value")] + list(zip(self.grid.points.tolist(), self.values.tolist()))


def process_values(eta, paths) -> np.ndarray:
    """Grid values of a process, a constant, or a ready array."""
    if hasattr(eta, "values") and callable(eta.values):
        return eta.values(paths)
    return np.broadcast_to(np.asarray(eta, dtype=float), paths.b.shape)


def _running(increments: np.ndarray) -> np.ndarray:
    zeros = np.zeros(increments.shape[:-1] + (1,))
    return np.concatenate([zeros, np.cumsum(increments, axis=-1)], axis=-1)


def ito_integral(eta, paths) -> IntegralPath:
    """Running ``int_0^t eta dB`` with left-point coefficients."""
    v = process_values(eta, paths)
    return IntegralPath(paths.grid, _running(v[..., :-1] * paths.db), "dB")


def bochner_integral(eta, paths) -> IntegralPath:
    """Running ``int_0^t eta ds``."""
    v = process_values(eta, paths)
    return IntegralPath(paths.grid, _running(v[..., :-1] * paths.dt), "dt")


def qv_integral(eta, paths) -> IntegralPath:
    """Running ``int_0^t eta d<B>``."""
    v = process_values(eta, paths)
    return IntegralPath(paths.grid, _running(v[..., :-1] * paths.dqv), "dqv")


def simple_ito_sum(eta: SimpleProcess, paths) -> np.ndarray:
    """``sum_j xi_j (B_{t_{j+1}} - B_{t_j})`` evaluated breakpoint by breakpoint."""
    idx = eta.indices(paths.grid)
    total = np.zeros(paths.b.shape[:-1])
    for j, xi in enumerate(eta.coefficient_values(paths)):
        total = total + xi * (paths.b[..., idx[j + 1]] - paths.b[..., idx[j]])
    return total


def truncate(eta, n: float) -> GridProcess:
    """Pointwise clamp to ``[-n, n]``."""
    if not n > 0:
        raise ValueError("truncation level must be positive")
    return GridProcess(lambda p: np.clip(process_values(eta, p), -n, n), bound=n,
                       name=f"trunc_{n:g}({getattr(eta, 'name', 'eta')})")


def product(eta, X) -> GridProcess:
    """Pointwise ``eta * X`` for a bounded ``eta``."""
    b = getattr(eta, "bound", None)
    if b is None:
        raise ContractError("product needs a bounded first factor with a declared bound")
    xb = getattr(X, "bound", None)
    return GridProcess(lambda p: process_values(eta, p) * process_values(X, p),
                       bound=None if xb is None else b * xb,
                       name=f"{getattr(eta, 'name', 'eta')}*{getattr(X, 'name', 'X')}")


def abs_power(eta, p: float) -> GridProcess:
    return GridProcess(lambda q: np.abs(process_values(eta, q)) ** p, name=f"|eta|^{p:g}")


def tail_process(X, n: float, p: float = 2.0) -> GridProcess:
    """``|X|^p 1{|X| > n}``."""
    def rule(q):
        x = process_values(X, q)
        return np.where(np.abs(x) > n, np.abs(x) ** p, 0.0)
    return GridProcess(rule, name=f"tail_{n:g}")


def mp_norm_estimate(eta, p: float, scenarios: ScenarioSet) -> ExpectationEstimate:
    """Estimate of ``E[int_0^T |eta|^p dt]`` (before taking the p-th root)."""
    if not p >= 1:
        raise ValueError(f"M^p norm needs p >= 1, got {p}")
    return scenarios.expectation(lambda e: bochner_integral(abs_power(eta, p), e).final)


def mp_norm(eta, p: float, scenarios: ScenarioSet) -> float:
    """``(E[int_0^T |eta_t|^p dt])^(1/p)`` with E the scenario supremum."""
    return mp_norm_estimate(eta, p, scenarios).value ** (1.0 / p)


def max_step_jump(eta, paths) -> np.ndarray:
    """Largest single-step change of the running dB-integral, per path."""
    return np.max(np.abs(np.diff(ito_integral(eta, paths).values, axis=-1)), axis=-1)


def adaptedness_audit(eta, paths, k: int, donor) -> bool:
    """True if the values of ``eta`` up to index ``k`` ignore the path after ``t_k``.

    The path after ``t_k`` is replaced by the increments of ``donor`` and
    the process re-evaluated.
    """
    from .scenarios import PathEnsemble
    db = np.array(paths.db, dtype=float, ndmin=2)
    dqv = np.array(np.broadcast_to(paths.dqv, paths.db.shape), dtype=float, ndmin=2)
    db[:, k:] = np.array(donor.db, ndmin=2)[:, k:]
    dqv[:, k:] = np.array(np.broadcast_to(donor.dqv, donor.db.shape), ndmin=2)[:, k:]
    spliced = PathEnsemble.from_increments(paths.grid, db, dqv)
    a = np.array(process_values(eta, paths), ndmin=2)[:, : k + 1]
    b = process_values(eta, spliced)[:, : k + 1]
    return bool(np.array_equal(a, b))


# -- random integrands for the inequality suite -------------------------------


def random_simple_process(rng: np.random.Generator, grid: TimeGrid, max_breakpoints: int = 8,
                          max_bound: float = 2.0, name: str = "simple") -> SimpleProcess:
    """Step process with coefficients ``a tanh(c B_{t_j} + d) + e``.

    Breakpoints are a random subset of grid points (at most
    ``max_breakpoints`` intervals); coefficients are bounded Lipschitz
    functions of B at the breakpoint.
    """
    n_int = int(rng.integers(1, max_breakpoints + 1))
    n_int = min(n_int, grid.n_steps)
    inner = np.sort(rng.choice(np.arange(1, grid.n_steps), size=n_int - 1, replace=False)) \
        if n_int > 1 else np.array([], dtype=int)
    idx = np.concatenate([[0], inner, [grid.n_steps]]).astype(int)
    coefs = []
    bound = 0.0
    for _ in range(n_int):
        a = rng.uniform(-1, 1) * max_bound / 2
        e = rng.uniform(-1, 1) * max_bound / 2
        c = rng.uniform(-3, 3)
        d = rng.uniform(-1, 1)
        coefs.append(lambda w, a=a, c=c, d=d, e=e: a * np.tanh(c * w.b[..., -1] + d) + e)
        bound = max(bound, abs(a) + abs(e))
    return SimpleProcess(grid.points[idx], coefs, bound=max(bound, 1e-300), name=name)


def inequality_suite(scenarios: ScenarioSet, processes: Sequence, k: float = STAT_K) -> list:
    """Zero-mean, energy and Doob-type checks for each integrand.

    Returns records ``{case_id, lhs, rhs, margin_in_std_errors, pass}``;
    the margin is ``(rhs - lhs) / pooled std error`` and a case passes when
    it is at least ``-k``.
    """
    s2 = scenarios.band.sigma_hi ** 2
    records = []
    ids = scenarios.control_ids
    for i, eta in enumerate(processes):
        final, running_max, energy = [], [], []
        for e in scenarios:
            v = process_values(eta, e)
            running = _running(v[..., :-1] * e.db)
            final.append(running[..., -1])
            running_max.append(np.max(running ** 2, axis=-1))
            energy.append(np.sum(v[..., :-1] ** 2 * e.dt, axis=-1))
        final, running_max, energy = map(np.stack, (final, running_max, energy))

        up = reduce_samples(final, ids, "upper")
        low = reduce_samples(final, ids, "lower")
        sq = reduce_samples(final ** 2, ids, "upper")
        mx = reduce_samples(running_max, ids, "upper")
        en = reduce_samples(energy, ids, "upper")

        def rec(case, lhs, rhs, se):
            margin = (rhs - lhs) / se if se > 0 else (math.inf if rhs >= lhs else -math.inf)
            records.append({"case_id": f"{case}[{i}]", "lhs": float(lhs), "rhs": float(rhs),
                            "margin_in_std_errors": float(margin), "pass": bool(margin >= -k)})

        rec("zero_mean_upper", abs(up.value), 0.0, up.std_error)
        rec("zero_mean_lower", abs(low.value), 0.0, low.std_error)
        rec("energy", sq.value, s2 * en.value, pooled_std_error(sq.std_error, s2 * en.std_error))
        rec("doob", mx.value, 2 * s2 * en.value,
            pooled_std_error(mx.std_error, 2 * s2 * en.std_error))
    return records
