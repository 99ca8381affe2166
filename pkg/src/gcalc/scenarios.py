"""Scenario engine: G-Brownian motion as a family of volatility-controlled walks.

Each scenario is a Gaussian walk whose volatility is picked, step by step,
inside a band ``[sigma_lo, sigma_hi]`` by a control.  The quadratic
variation is accumulated analytically as ``sum(sigma_k**2 * dt_k)``.

Random numbers come from counter-based Philox streams keyed on
``(master_seed, block, stream tag)`` where a block is a fixed run of path
indices, so a path's draws depend only on its index and never on how many
paths were requested or how the work was split between threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AlignmentError, BandViolationError, ConfigurationError

# Relative tolerance used only to decide whether a time sits on the grid.
GRID_MATCH_RTOL = 1e-12


@dataclass(frozen=True)
class VolatilityBand:
    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        lo, hi = float(self.sigma_lo), float(self.sigma_hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ConfigurationError("volatility band must be finite")
        if lo < 0 or hi <= 0 or lo > hi:
            raise ConfigurationError(
                f"invalid band [{lo}, {hi}]: need 0 <= sigma_lo <= sigma_hi, sigma_hi > 0")
        object.__setattr__(self, "sigma_lo", lo)
        object.__setattr__(self, "sigma_hi", hi)

    def contains(self, sigma) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        return (sigma >= self.sigma_lo) & (sigma <= self.sigma_hi)

    def grid(self, n: int) -> np.ndarray:
        """``n`` evenly spaced volatilities spanning the band, endpoints exact."""
        if n == 1:
            return np.array([self.sigma_hi])
        vals = np.linspace(self.sigma_lo, self.sigma_hi, n)
        vals[0], vals[-1] = self.sigma_lo, self.sigma_hi
        return vals


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points ``0 = t_0 < ... < t_N = T``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ConfigurationError("a time grid needs at least two points")
        if pts[0] != 0.0:
            raise ConfigurationError("time grid must start at 0")
        if not np.all(np.diff(pts) > 0):
            raise ConfigurationError("time grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, horizon: float, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise ConfigurationError("n_steps must be positive")
        if not horizon > 0:
            raise ConfigurationError("horizon must be positive")
        pts = horizon * np.arange(n_steps + 1) / n_steps
        pts[-1] = horizon
        return cls(pts)

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    @property
    def n_steps(self) -> int:
        return self.points.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.points)

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises AlignmentError if ``t`` is off-grid."""
        k = int(np.searchsorted(self.points, t))
        tol = GRID_MATCH_RTOL * max(self.horizon, 1.0)
        for j in (k - 1, k):
            if 0 <= j < self.points.size and abs(self.points[j] - t) <= tol:
                return j
        raise AlignmentError(f"time {t!r} is not a grid point")

    def subsample(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n_steps % factor:
            raise ConfigurationError(
                f"cannot coarsen {self.n_steps} steps by factor {factor}")
        return TimeGrid(self.points[::factor])

    def nests(self, coarse: "TimeGrid") -> bool:
        """True if every point of ``coarse`` is a point of this grid."""
        if coarse.n_steps > self.n_steps or self.n_steps % coarse.n_steps:
            return False
        f = self.n_steps // coarse.n_steps
        return bool(np.array_equal(self.points[::f], coarse.points))


# -- volatility controls ------------------------------------------------------


class Control:
    """Base class for volatility controls.

    ``evaluate(t, x)`` returns the volatility to use on the step starting at
    time ``t`` when the walk sits at ``x``.
    """

    control_id: str = "control"
    deterministic: bool = True

    def evaluate(self, t: float, x):
        raise NotImplementedError

    def schedule(self, grid: TimeGrid) -> np.ndarray:
        """Per-step volatilities for state-independent controls."""
        return np.array([self.evaluate(t, 0.0) for t in grid.points[:-1]], dtype=float)

    def __repr__(self):
        return f"<{type(self).__name__} {self.control_id}>"


class Constant(Control):
    def __init__(self, sigma: float):
        self.sigma = float(sigma)
        self.control_id = f"const({self.sigma:.6g})"

    def evaluate(self, t, x):
        return np.full(np.shape(x), self.sigma)

    def schedule(self, grid):
        return np.full(grid.n_steps, self.sigma)


class PiecewiseDeterministic(Control):
    """Volatility ``values[j]`` on ``[breakpoints[j-1], breakpoints[j])``.

    ``values`` has one more entry than ``breakpoints``.
    """

    def __init__(self, breakpoints: Sequence[float], values: Sequence[float], name=None):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.size != self.breakpoints.size + 1:
            raise ConfigurationError("piecewise control needs len(values) == len(breakpoints) + 1")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ConfigurationError("piecewise control breakpoints must increase")
        self.control_id = name or "piecewise(" + ",".join(f"{v:.6g}" for v in self.values) + ")"

    def evaluate(self, t, x):
        j = np.searchsorted(self.breakpoints, t, side="right")
        return np.full(np.shape(x), self.values[j])

    def schedule(self, grid):
        j = np.searchsorted(self.breakpoints, grid.points[:-1], side="right")
        return self.values[j]


class StateFeedback(Control):
    """Volatility chosen by ``rule(t, x)``; vectorised over ``x``."""

    deterministic = False

    def __init__(self, rule: Callable, name: str):
        self.rule = rule
        self.control_id = name

    def evaluate(self, t, x):
        return np.broadcast_to(np.asarray(self.rule(t, x), dtype=float), np.shape(x))


def bang_bang(band: VolatilityBand, high_when: str) -> StateFeedback:
    """Sign-feedback controls switching between the band edges.

    ``high_when`` is one of ``"positive"``, ``"negative"`` (sign of B) or
    ``"inside"``, ``"outside"`` (|B| against the mid-band diffusion scale
    ``sigma_mid * sqrt(t)``).
    """
    lo, hi = band.sigma_lo, band.sigma_hi
    mid = 0.5 * (lo + hi)
    if high_when == "positive":
        rule = lambda t, x: np.where(x > 0, hi, lo)
    elif high_when == "negative":
        rule = lambda t, x: np.where(x < 0, hi, lo)
    elif high_when == "inside":
        rule = lambda t, x: np.where(np.abs(x) <= mid * math.sqrt(t), hi, lo)
    elif high_when == "outside":
        rule = lambda t, x: np.where(np.abs(x) > mid * math.sqrt(t), hi, lo)
    else:
        raise ConfigurationError(f"unknown bang-bang variant {high_when!r}")
    return StateFeedback(rule, f"bang({high_when})")


def default_controls(band: VolatilityBand, n_constant: int = 11, feedback: bool = True) -> list:
    """Constant controls on an even band grid plus four bang-bang controls."""
    controls = [Constant(s) for s in band.grid(n_constant)]
    if feedback and band.sigma_lo < band.sigma_hi:
        controls += [bang_bang(band, w) for w in ("positive", "negative", "inside", "outside")]
    return controls


# -- random streams -----------------------------------------------------------


@dataclass(frozen=True)
class SeedPolicy:
    """Derivation of independent normal streams from one master seed.

    With ``common_random_numbers`` (the default) the control index is left
    out of the stream key, so every control sees the same normals for a
    given path index.
    """

    master_seed: int = 20240601
    common_random_numbers: bool = True
    block_size: int = 256

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigurationError("master_seed must be a 64-bit unsigned integer")
        if self.block_size < 1:
            raise ConfigurationError("block_size must be positive")

    def _block(self, block: int, n_steps: int, control_index: int) -> np.ndarray:
        tag = 0 if self.common_random_numbers else control_index + 1
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(block, tag))
        gen = np.random.Generator(np.random.Philox(ss))
        return gen.standard_normal((self.block_size, n_steps))

    def normals(self, start: int, n_paths: int, n_steps: int, control_index: int = 0) -> np.ndarray:
        """Standard normals for path indices ``start .. start + n_paths - 1``."""
        stop = start + n_paths
        first, last = start // self.block_size, (stop - 1) // self.block_size
        chunks = []
        for block in range(first, last + 1):
            z = self._block(block, n_steps, control_index)
            lo = max(start - block * self.block_size, 0)
            hi = min(stop - block * self.block_size, self.block_size)
            chunks.append(z[lo:hi])
        return np.concatenate(chunks, axis=0)


# -- paths --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PathWindow:
    """Path data observed up to some grid time; handed to adapted functionals."""

    t: np.ndarray
    b: np.ndarray
    qv: np.ndarray
    db: np.ndarray
    dqv: np.ndarray
    sigma: np.ndarray

    @property
    def now(self) -> float:
        return float(self.t[-1])


class _PathData:
    """Shared accessors for single paths and path ensembles.

    Arrays carry a leading path axis for ensembles and none for a single
    path; process rules index them with ``[..., k]`` and work for both.
    """

    grid: TimeGrid
    b: np.ndarray
    qv: np.ndarray
    db: np.ndarray
    dqv: np.ndarray
    sigma: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.grid.points

    @property
    def dt(self) -> np.ndarray:
        return self.grid.dt

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def _fields(self):
        return dict(grid=self.grid, b=self.b, qv=self.qv, db=self.db, dqv=self.dqv,
                    sigma=self.sigma)

    def upto(self, k: int) -> "PathWindow":
        """The path(s) restricted to ``t_0 .. t_k``; nothing later is visible."""
        return PathWindow(t=self.t[: k + 1], b=self.b[..., : k + 1], qv=self.qv[..., : k + 1],
                          db=self.db[..., :k], dqv=self.dqv[..., :k], sigma=self.sigma[..., :k])

    def subsample(self, factor: int):
        """Restriction to every ``factor``-th grid point, increments re-aggregated.

        The coarse path visits exactly the same values of B and <B> at the
        retained points, so it is a path on the nested coarse grid.
        """
        grid = self.grid.subsample(factor)
        b = self.b[..., ::factor]
        qv = self.qv[..., ::factor]
        shape = self.db.shape[:-1] + (grid.n_steps, factor)
        db = self.db.reshape(shape).sum(axis=-1)
        dqv = self.dqv.reshape(shape).sum(axis=-1)
        sigma = np.sqrt(dqv / grid.dt)
        return self._replace(grid=grid, b=b, qv=qv, db=db, dqv=dqv, sigma=sigma)

    def at_resolution(self, n_steps: int):
        if n_steps == self.n_steps:
            return self
        if n_steps > self.n_steps or self.n_steps % n_steps:
            raise ConfigurationError(
                f"grid with {n_steps} steps is not nested in a {self.n_steps}-step grid")
        return self.subsample(self.n_steps // n_steps)


@dataclass(frozen=True, eq=False)
class SamplePath(_PathData):
    grid: TimeGrid
    b: np.ndarray
    qv: np.ndarray
    db: np.ndarray
    dqv: np.ndarray
    sigma: np.ndarray
    control_id: str = ""
    seed: int = 0
    path_index: int = 0

    def _replace(self, **kw):
        base = dict(self._fields(), control_id=self.control_id, seed=self.seed,
                    path_index=self.path_index)
        base.update(kw)
        return SamplePath(**base)

    def to_csv_rows(self):
        return [("t", "b", "qv")] + list(zip(self.t.tolist(), self.b.tolist(), self.qv.tolist()))


@dataclass(frozen=True, eq=False)
class PathEnsemble(_PathData):
    """``n_paths`` paths of one control on one grid; arrays are (n_paths, ...)."""

    grid: TimeGrid
    b: np.ndarray
    qv: np.ndarray
    db: np.ndarray
    dqv: np.ndarray
    sigma: np.ndarray
    control_id: str = ""
    seed: int = 0
    path_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def _replace(self, **kw):
        base = dict(self._fields(), control_id=self.control_id, seed=self.seed,
                    path_index=self.path_index)
        base.update(kw)
        return PathEnsemble(**base)

    def __len__(self):
        return self.b.shape[0]

    @property
    def n_paths(self) -> int:
        return self.b.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return SamplePath(grid=self.grid, b=self.b[i], qv=self.qv[i], db=self.db[i],
                              dqv=self.dqv[i], sigma=self.sigma[i], control_id=self.control_id,
                              seed=self.seed, path_index=int(self.path_index[i]))
        return self._replace(b=self.b[i], qv=self.qv[i], db=self.db[i], dqv=self.dqv[i],
                             sigma=self.sigma[i], path_index=self.path_index[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_increments(cls, grid: TimeGrid, db, dqv, control_id="", seed=0, path_index=None):
        """Build an ensemble from explicit increments (used for splicing audits)."""
        db = np.atleast_2d(np.asarray(db, dtype=float))
        dqv = np.broadcast_to(np.asarray(dqv, dtype=float), db.shape)
        n = db.shape[0]
        zeros = np.zeros((n, 1))
        b = np.concatenate([zeros, np.cumsum(db, axis=1)], axis=1)
        qv = np.concatenate([zeros, np.cumsum(dqv, axis=1)], axis=1)
        sigma = np.sqrt(dqv / grid.dt)
        if path_index is None:
            path_index = np.arange(n, dtype=np.int64)
        return cls(grid=grid, b=b, qv=qv, db=db, dqv=np.array(dqv), sigma=sigma,
                   control_id=control_id, seed=seed, path_index=np.asarray(path_index))


def _check_band(sigma: np.ndarray, band: VolatilityBand, control: Control, k=None):
    ok = band.contains(sigma)
    if not np.all(ok):
        bad = np.asarray(sigma)[~ok].flat[0]
        where = "" if k is None else f" at step {k}"
        raise BandViolationError(
            f"control {control.control_id} emitted sigma={bad!r}{where}, outside "
            f"[{band.sigma_lo}, {band.sigma_hi}]")


def _simulate(control: Control, grid: TimeGrid, band: VolatilityBand, z: np.ndarray):
    n, N = z.shape
    dt = grid.dt
    sqrt_dt = np.sqrt(dt)
    if control.deterministic:
        s = np.asarray(control.schedule(grid), dtype=float)
        _check_band(s, band, control)
        sigma = np.broadcast_to(s, (n, N))
        db = sigma * sqrt_dt * z
        b = np.concatenate([np.zeros((n, 1)), np.cumsum(db, axis=1)], axis=1)
    else:
        sigma = np.empty((n, N))
        db = np.empty((n, N))
        b = np.zeros((n, N + 1))
        for k in range(N):
            s = control.evaluate(float(grid.points[k]), b[:, k])
            _check_band(s, band, control, k)
            sigma[:, k] = s
            db[:, k] = s * sqrt_dt[k] * z[:, k]
            b[:, k + 1] = b[:, k] + db[:, k]
    dqv = (sigma * sigma) * dt
    qv = np.concatenate([np.zeros((n, 1)), np.cumsum(dqv, axis=1)], axis=1)
    return b, qv, db, dqv, sigma


def generate_ensemble(control: Control, grid: TimeGrid, band: VolatilityBand, n_paths: int,
                      seed_policy: SeedPolicy, control_index: int = 0, start: int = 0,
                      jobs: int = 1) -> PathEnsemble:
    """Simulate paths ``start .. start + n_paths - 1`` under one control.

    ``jobs`` only splits the work; results are bit-identical for any value.
    """
    if n_paths < 1:
        raise ConfigurationError("n_paths must be at least 1")
    bs = seed_policy.block_size
    if jobs > 1 and n_paths > bs:
        # Split on block boundaries; each piece is generated independently.
        stop = start + n_paths
        cuts = [start] + list(range((start // bs + 1) * bs, stop, bs)) + [stop]
        pieces = list(zip(cuts[:-1], cuts[1:]))
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(
                lambda ab: generate_ensemble(control, grid, band, ab[1] - ab[0], seed_policy,
                                             control_index, ab[0], 1), pieces))
        return _concat(parts)
    z = seed_policy.normals(start, n_paths, grid.n_steps, control_index)
    b, qv, db, dqv, sigma = _simulate(control, grid, band, z)
    return PathEnsemble(grid=grid, b=b, qv=qv, db=db, dqv=dqv, sigma=sigma,
                        control_id=control.control_id, seed=int(seed_policy.master_seed),
                        path_index=np.arange(start, start + n_paths, dtype=np.int64))


def _concat(parts: list) -> PathEnsemble:
    p0 = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=0)
    return PathEnsemble(grid=p0.grid, b=cat("b"), qv=cat("qv"), db=cat("db"), dqv=cat("dqv"),
                        sigma=cat("sigma"), control_id=p0.control_id, seed=p0.seed,
                        path_index=cat("path_index"))


def generate_path(control: Control, grid: TimeGrid, band: VolatilityBand,
                  seed_policy: SeedPolicy, path_index: int = 0,
                  control_index: int = 0) -> SamplePath:
    return generate_ensemble(control, grid, band, 1, seed_policy, control_index, path_index)[0]
