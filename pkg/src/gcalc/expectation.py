"""Sublinear expectations as suprema of Monte Carlo means over scenarios."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import ConfigurationError
from .scenarios import (Control, PathEnsemble, PathWindow, SeedPolicy, TimeGrid, VolatilityBand,
                        default_controls, generate_ensemble)


@dataclass(frozen=True)
class GFunction:
    """The one-dimensional generator ``G(a) = (sigma_hi^2 a^+ - sigma_lo^2 a^-) / 2``."""

    band: VolatilityBand

    def __call__(self, a):
        return g_eval(self, a)


def g_eval(g: GFunction, a):
    a = np.asarray(a, dtype=float)
    lo2, hi2 = g.band.sigma_lo ** 2, g.band.sigma_hi ** 2
    out = 0.5 * (hi2 * np.maximum(a, 0.0) - lo2 * np.maximum(-a, 0.0))
    return float(out) if out.ndim == 0 else out


def gnormal_abs_moment(p: float, band: VolatilityBand) -> float:
    """``E|X|^p`` for the G-normal X: a centred Gaussian moment at variance ``sigma_hi^2``."""
    if not p >= 1:
        raise ValueError(f"absolute moment order must be >= 1, got {p}")
    s = band.sigma_hi
    return float(s ** p * 2 ** (p / 2) * gamma_fn((p + 1) / 2) / math.sqrt(math.pi))


class PayoffFunctional:
    """A random variable: a deterministic function of the path up to ``horizon``.

    ``fn`` receives a :class:`PathWindow` that ends at the horizon (or at the
    grid end when ``horizon`` is None) and returns one value per path.
    """

    def __init__(self, fn: Callable[[PathWindow], np.ndarray], horizon: float | None = None,
                 name: str = "X"):
        self.fn = fn
        self.horizon = horizon
        self.name = name

    def __call__(self, paths) -> np.ndarray:
        if self.horizon is None:
            k = paths.n_steps
        else:
            if self.horizon > paths.grid.horizon * (1 + 1e-12):
                raise ConfigurationError(
                    f"payoff horizon {self.horizon} exceeds grid horizon {paths.grid.horizon}")
            k = paths.grid.index_of(self.horizon)
        out = np.asarray(self.fn(paths.upto(k)), dtype=float)
        return np.broadcast_to(out, paths.b.shape[:-1]).astype(float, copy=False)

    @classmethod
    def constant(cls, c: float) -> "PayoffFunctional":
        return cls(lambda w: np.full(w.b.shape[:-1], float(c)), name=f"const({c})")

    @classmethod
    def terminal(cls, phi: Callable, x0: float = 0.0, horizon=None) -> "PayoffFunctional":
        """``phi(x0 + B_horizon)``."""
        return cls(lambda w: phi(x0 + w.b[..., -1]), horizon=horizon, name="terminal")

    def _combine(self, other, op, name):
        h = self.horizon
        if isinstance(other, PayoffFunctional):
            # None means "up to the end of the grid", the latest possible horizon
            if h is not None:
                h = None if other.horizon is None else max(h, other.horizon)
            return PayoffFunctional(lambda w: op(self._eval_window(w), other._eval_window(w)),
                                    horizon=h, name=name)
        return PayoffFunctional(lambda w: op(self._eval_window(w), other), horizon=h, name=name)

    def _eval_window(self, w: PathWindow):
        if self.horizon is None or self.horizon >= w.now * (1 - 1e-12):
            return np.asarray(self.fn(w), dtype=float)
        k = int(np.argmin(np.abs(w.t - self.horizon)))
        return np.asarray(self.fn(PathWindow(t=w.t[: k + 1], b=w.b[..., : k + 1],
                                             qv=w.qv[..., : k + 1], db=w.db[..., :k],
                                             dqv=w.dqv[..., :k], sigma=w.sigma[..., :k])),
                          dtype=float)

    def __neg__(self):
        return PayoffFunctional(lambda w: -self._eval_window(w), self.horizon, f"-{self.name}")

    def __add__(self, other):
        return self._combine(other, np.add, f"({self.name}+...)")

    def __sub__(self, other):
        return self._combine(other, np.subtract, f"({self.name}-...)")

    def __mul__(self, other):
        return self._combine(other, np.multiply, f"({self.name}*...)")

    __rmul__ = __mul__


@dataclass
class ExpectationEstimate:
    """Supremum (or infimum, for ``kind="lower"``) of per-scenario sample means."""

    value: float
    std_error: float
    argmax_control_id: str
    control_ids: list
    means: np.ndarray
    std_errors: np.ndarray
    n_paths: int
    kind: str = "upper"

    @property
    def n_scenarios(self) -> int:
        return len(self.control_ids)

    def table_rows(self):
        rows = [("control_id", "mean", "std_error")]
        rows += [(c, float(m), float(s)) for c, m, s in
                 zip(self.control_ids, self.means, self.std_errors)]
        return rows

    def to_dict(self) -> dict:
        return {"value": float(self.value), "std_error": float(self.std_error),
                "argmax_control_id": self.argmax_control_id, "n_paths": int(self.n_paths)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _std_errors(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[-1]
    if n < 2:
        return np.zeros(samples.shape[:-1])
    return samples.std(axis=-1, ddof=1) / math.sqrt(n)


def reduce_samples(samples: np.ndarray, control_ids: Sequence[str], kind: str = "upper"
                   ) -> ExpectationEstimate:
    """Reduce an (n_scenarios, n_paths) table of samples to an estimate.

    Means are summed in path-index order, so the result does not depend on
    how the samples were produced.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ConfigurationError("need a non-empty (n_scenarios, n_paths) sample table")
    means = samples.mean(axis=1)
    ses = _std_errors(samples)
    i = int(np.argmax(means)) if kind == "upper" else int(np.argmin(means))
    return ExpectationEstimate(value=float(means[i]), std_error=float(ses[i]),
                               argmax_control_id=list(control_ids)[i],
                               control_ids=list(control_ids), means=means, std_errors=ses,
                               n_paths=samples.shape[1], kind=kind)


class ScenarioSet:
    """Ensembles for a finite control set, simulated with common random numbers.

    This is the working representation of the scenario family: every
    expectation is a maximum over its controls of sample means.
    """

    def __init__(self, controls: Sequence[Control], grid: TimeGrid, band: VolatilityBand,
                 n_paths: int, seed_policy: SeedPolicy | None = None, jobs: int = 1,
                 ensembles: Sequence[PathEnsemble] | None = None):
        controls = list(controls)
        if not controls:
            raise ConfigurationError("control set is empty")
        self.controls = controls
        self.grid = grid
        self.band = band
        self.n_paths = int(n_paths)
        self.seed_policy = seed_policy or SeedPolicy()
        if ensembles is None:
            def make(ic):
                i, c = ic
                return generate_ensemble(c, grid, band, self.n_paths, self.seed_policy,
                                         control_index=i)
            if jobs > 1 and len(controls) > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    ensembles = list(pool.map(make, enumerate(controls)))
            else:
                ensembles = [make(ic) for ic in enumerate(controls)]
        self.ensembles = list(ensembles)

    @classmethod
    def default(cls, band: VolatilityBand, grid: TimeGrid, n_paths: int,
                seed_policy: SeedPolicy | None = None, jobs: int = 1) -> "ScenarioSet":
        return cls(default_controls(band), grid, band, n_paths, seed_policy, jobs)

    @property
    def control_ids(self) -> list:
        return [e.control_id for e in self.ensembles]

    def __iter__(self):
        return iter(self.ensembles)

    def __len__(self):
        return len(self.ensembles)

    def at_resolution(self, n_steps: int) -> "ScenarioSet":
        """The same scenarios seen on a coarser nested grid."""
        ens = [e.at_resolution(n_steps) for e in self.ensembles]
        return ScenarioSet(self.controls, ens[0].grid, self.band, self.n_paths,
                           self.seed_policy, ensembles=ens)

    def samples(self, X: Callable) -> np.ndarray:
        """Evaluate a per-path functional on every scenario: (n_scenarios, n_paths)."""
        return np.stack([np.broadcast_to(np.asarray(X(e), dtype=float), (e.n_paths,))
                         for e in self.ensembles])

    def expectation(self, X: Callable) -> ExpectationEstimate:
        return reduce_samples(self.samples(X), self.control_ids, "upper")

    def lower_expectation(self, X: Callable) -> ExpectationEstimate:
        """``-E[-X]``: the smallest scenario mean."""
        return reduce_samples(self.samples(X), self.control_ids, "lower")

    def capacity(self, event: Callable) -> ExpectationEstimate:
        """Largest scenario frequency of a path event (a boolean functional)."""
        ind = lambda e: np.asarray(event(e), dtype=bool).astype(float)
        return reduce_samples(self.samples(ind), self.control_ids, "upper")


def iter_ensembles(controls: Sequence[Control], grid: TimeGrid, band: VolatilityBand,
                   n_paths: int, seed_policy: SeedPolicy | None = None, jobs: int = 1):
    """Yield one ensemble per control; earlier ensembles are not kept alive.

    Same paths as ``ScenarioSet`` with the same arguments, for runs too
    large to hold every scenario in memory.
    """
    policy = seed_policy or SeedPolicy()
    for i, c in enumerate(controls):
        yield generate_ensemble(c, grid, band, n_paths, policy, control_index=i, jobs=jobs)


def stream_samples(functionals: Sequence[Callable], controls, grid, band, n_paths,
                   seed_policy=None, jobs: int = 1):
    """Sample tables ``(n_scenarios, n_paths)`` for several functionals in one pass.

    Returns the list of tables and the control ids.
    """
    tables = [[] for _ in functionals]
    ids = []
    for e in iter_ensembles(controls, grid, band, n_paths, seed_policy, jobs):
        ids.append(e.control_id)
        for tab, X in zip(tables, functionals):
            tab.append(np.broadcast_to(np.asarray(X(e), dtype=float), (e.n_paths,)).copy())
    return [np.stack(t) for t in tables], ids


def sup_expectation(X: Callable, controls: Sequence[Control], grid: TimeGrid,
                    band: VolatilityBand, n_paths: int, seed_policy: SeedPolicy | None = None,
                    jobs: int = 1) -> ExpectationEstimate:
    (tab,), ids = stream_samples([X], controls, grid, band, n_paths, seed_policy, jobs)
    return reduce_samples(tab, ids, "upper")


def lower_expectation(X: Callable, controls, grid, band, n_paths, seed_policy=None,
                      jobs: int = 1) -> ExpectationEstimate:
    (tab,), ids = stream_samples([X], controls, grid, band, n_paths, seed_policy, jobs)
    return reduce_samples(tab, ids, "lower")


def capacity_estimate(event: Callable, controls, grid, band, n_paths, seed_policy=None,
                      jobs: int = 1) -> ExpectationEstimate:
    ind = lambda e: np.asarray(event(e), dtype=bool).astype(float)
    (tab,), ids = stream_samples([ind], controls, grid, band, n_paths, seed_policy, jobs)
    return reduce_samples(tab, ids, "upper")


def pooled_std_error(*ses: float) -> float:
    return math.sqrt(sum(s * s for s in ses))
