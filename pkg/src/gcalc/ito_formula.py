"""Semimartingales driven by G-Brownian motion and the generalized Itô formula.

``X = X0 + int alpha ds + int eta d<B> + int beta dB`` is evolved with
left-point sums on the simulation grid.  For a C^{1,2} function phi the
two sides of

    phi(t, X_t) - phi(0, X_0)
        = int d_x phi . beta dB + int [d_t phi + d_x phi . alpha] du
          + int [d_x phi . eta + 1/2 beta' D^2 phi beta] d<B>

are evaluated on the same path and the residual LHS - RHS is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, EvaluationError
from .expectation import ScenarioSet, reduce_samples
from .integration import process_values
from .scenarios import PathEnsemble, SamplePath
from .stopping import LocalizationSequence, StoppingTime, _first_true

MAX_DIM = 4
EPS = np.finfo(float).eps
FD_STEP = EPS ** (1 / 3)
FD_STEP2 = EPS ** (1 / 4)
AUDIT_RTOL = 1e-4
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GL_S = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


# -- smooth functions ---------------------------------------------------------


class SmoothFunction:
    """``phi(t, x)`` on ``[0, T] x R^n`` with its first and second derivatives.

    ``f(t, x)`` takes ``x`` of shape ``(..., n)`` and ``t`` broadcastable to
    ``x.shape[:-1]``.  Missing derivatives fall back to central differences.
    Supplied derivatives must pass :meth:`audit` before the function is used
    on the right-hand side of the formula.
    """

    def __init__(self, f: Callable, dim: int = 1, dt: Callable | None = None,
                 grad: Callable | None = None, hess: Callable | None = None,
                 time_homogeneous: bool = False, name: str = "phi"):
        if not 1 <= dim <= MAX_DIM:
            raise ConfigurationError(f"dimension must be between 1 and {MAX_DIM}")
        self.f = f
        self.dim = dim
        self._dt, self._grad, self._hess = dt, grad, hess
        self.time_homogeneous = time_homogeneous
        self.name = name
        self._audited = None

    @classmethod
    def univariate(cls, f, fx=None, fxx=None, ft=None, time_dependent=False, name="phi"):
        """Wrap scalar functions: ``f(x)`` or, with ``time_dependent``, ``f(t, x)``."""
        if time_dependent:
            call = lambda g: (lambda t, x: g(t, x[..., 0]))
        else:
            call = lambda g: (lambda t, x: g(x[..., 0]))
        grad = None if fx is None else (lambda t, x: call(fx)(t, x)[..., None])
        hess = None if fxx is None else (lambda t, x: call(fxx)(t, x)[..., None, None])
        dt = None
        if ft is not None:
            dt = call(ft)
        elif not time_dependent:
            dt = lambda t, x: np.zeros(x.shape[:-1])
        return cls(lambda t, x: call(f)(t, x), 1, dt, grad, hess,
                   time_homogeneous=not time_dependent, name=name)

    @property
    def supplied(self) -> dict:
        return {"dt": self._dt is not None, "grad": self._grad is not None,
                "hess": self._hess is not None}

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.f(t, x), dtype=float), x.shape[:-1])

    def dt(self, t, x):
        x = np.asarray(x, dtype=float)
        if self._dt is not None:
            return np.broadcast_to(np.asarray(self._dt(t, x), dtype=float), x.shape[:-1])
        return self._fd_dt(t, x)

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        if self._grad is not None:
            return np.broadcast_to(np.asarray(self._grad(t, x), dtype=float), x.shape)
        return self._fd_grad(t, x)

    def hess(self, t, x):
        x = np.asarray(x, dtype=float)
        if self._hess is not None:
            return np.broadcast_to(np.asarray(self._hess(t, x), dtype=float),
                                   x.shape + (self.dim,))
        return self._fd_hess(t, x)

    def _fd_dt(self, t, x):
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        h = FD_STEP * np.maximum(1.0, np.abs(t))
        return (self.value(t + h, x) - self.value(t - h, x)) / (2 * h)

    def _fd_grad(self, t, x):
        out = []
        for i in range(self.dim):
            h = FD_STEP * np.maximum(1.0, np.abs(x[..., i]))
            e = np.eye(self.dim)[i]
            out.append((self.value(t, x + h[..., None] * e)
                        - self.value(t, x - h[..., None] * e)) / (2 * h))
        return np.stack(out, axis=-1)

    def _fd_jacobian_of_grad(self, t, x):
        rows = []
        for i in range(self.dim):
            h = FD_STEP * np.maximum(1.0, np.abs(x[..., i]))
            e = np.eye(self.dim)[i]
            rows.append((self.grad(t, x + h[..., None] * e)
                         - self.grad(t, x - h[..., None] * e)) / (2 * h[..., None]))
        return np.stack(rows, axis=-2)

    def _fd_hess(self, t, x):
        if self._grad is not None:
            hs = self._fd_jacobian_of_grad(t, x)
            return 0.5 * (hs + np.swapaxes(hs, -1, -2))
        n = self.dim
        out = np.empty(x.shape + (n,))
        f0 = self.value(t, x)
        for i in range(n):
            hi = FD_STEP2 * np.maximum(1.0, np.abs(x[..., i]))
            ei = np.zeros(n)
            ei[i] = 1.0
            for j in range(i, n):
                if i == j:
                    d = (self.value(t, x + hi[..., None] * ei) - 2 * f0
                         + self.value(t, x - hi[..., None] * ei)) / hi ** 2
                else:
                    hj = FD_STEP2 * np.maximum(1.0, np.abs(x[..., j]))
                    ej = np.zeros(n)
                    ej[j] = 1.0
                    pp = self.value(t, x + hi[..., None] * ei + hj[..., None] * ej)
                    pm = self.value(t, x + hi[..., None] * ei - hj[..., None] * ej)
                    mp = self.value(t, x - hi[..., None] * ei + hj[..., None] * ej)
                    mm = self.value(t, x - hi[..., None] * ei - hj[..., None] * ej)
                    d = (pp - pm - mp + mm) / (4 * hi * hj)
                out[..., i, j] = d
                out[..., j, i] = d
        return out

    def audit(self, n_probes: int = 100, rng=None, scale: float = 2.0, horizon: float = 1.0,
              rtol: float = AUDIT_RTOL) -> dict:
        """Compare supplied derivatives with central differences at random probes.

        The error measure is ``|supplied - fd| / max(1, |fd|)``.  Returns the
        worst error per derivative and raises ContractError above ``rtol``.
        """
        rng = rng if rng is not None else np.random.default_rng(12345)
        x = rng.normal(scale=scale, size=(n_probes, self.dim))
        t = rng.uniform(0, horizon, size=n_probes)
        worst = {}
        if self._dt is not None:
            worst["dt"] = _rel_err(self.dt(t, x), self._fd_dt(t, x))
        if self._grad is not None:
            worst["grad"] = _rel_err(self.grad(t, x), self._fd_grad(t, x))
        if self._hess is not None:
            ref = (self._fd_jacobian_of_grad(t, x) if self._grad is not None
                   else self._fd_hess(t, x))
            worst["hess"] = _rel_err(self.hess(t, x), ref)
        bad = {k: v for k, v in worst.items() if not v <= rtol}
        if bad:
            raise ContractError(f"derivative audit failed for {self.name}: {bad}")
        self._audited = worst
        return worst

    def ensure_audited(self):
        if self._audited is None:
            self.audit()


def _rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _smoothstep(u):
    """Quintic C^2 step from 1 (u <= 0) to 0 (u >= 1) and its derivatives in u."""
    u = np.clip(u, 0.0, 1.0)
    s = u ** 3 * (10 - 15 * u + 6 * u ** 2)
    ds = 30 * u ** 2 * (1 - u) ** 2
    d2s = 60 * u * (1 - u) * (1 - 2 * u)
    return 1 - s, -ds, -d2s


def clamp_function(phi: SmoothFunction, k: float) -> SmoothFunction:
    """A bounded-derivative version ``phi_k`` equal to ``phi`` on ``|x| <= 2k``.

    ``phi_k = phi * chi(|x|)`` with chi falling smoothly from 1 at ``2k`` to
    0 at ``4k``.  Inside ``|x| <= 2k`` the values returned are those of phi
    itself, bit for bit.
    """
    inner, width = 2.0 * k, 2.0 * k

    def cutoff(x):
        r = np.linalg.norm(x, axis=-1)
        c, dc, d2c = _smoothstep((r - inner) / width)
        return r, c, dc / width, d2c / width ** 2

    def f(t, x):
        r, c, _, _ = cutoff(x)
        v = phi.value(t, x)
        return np.where(r <= inner, v, v * c)

    def dt(t, x):
        r, c, _, _ = cutoff(x)
        v = phi.dt(t, x)
        return np.where(r <= inner, v, v * c)

    def grad(t, x):
        r, c, dc, _ = cutoff(x)
        g = phi.grad(t, x)
        rs = np.where(r > 0, r, 1.0)[..., None]
        unit = x / rs
        outer = g * c[..., None] + phi.value(t, x)[..., None] * dc[..., None] * unit
        return np.where((r <= inner)[..., None], g, outer)

    def hess(t, x):
        r, c, dc, d2c = cutoff(x)
        v = phi.value(t, x)
        g = phi.grad(t, x)
        H = phi.hess(t, x)
        n = x.shape[-1]
        rs = np.where(r > 0, r, 1.0)
        unit = x / rs[..., None]
        uu = unit[..., :, None] * unit[..., None, :]
        dchi = dc[..., None] * unit
        d2chi = (d2c[..., None, None] * uu
                 + (dc / rs)[..., None, None] * (np.eye(n) - uu))
        outer = (H * c[..., None, None] + g[..., :, None] * dchi[..., None, :]
                 + dchi[..., :, None] * g[..., None, :] + v[..., None, None] * d2chi)
        return np.where((r <= inner)[..., None, None], H, outer)

    out = SmoothFunction(f, phi.dim, dt, grad, hess, phi.time_homogeneous, f"{phi.name}_k{k:g}")
    out._audited = {"derived_from": phi.name}
    return out


# -- semimartingales ----------------------------------------------------------


class StateCoefficient:
    """Coefficient depending on the current state: ``fn(t, x, b)`` at left points.

    ``x`` has shape ``(..., n)`` and ``b`` is the current B value.
    """

    def __init__(self, fn: Callable, name: str = "c(X)"):
        self.fn = fn
        self.name = name


def _as_components(c, n, label):
    if isinstance(c, (list, tuple)):
        if len(c) != n:
            raise ConfigurationError(f"{label} needs {n} components")
        return list(c)
    if n == 1:
        return [c]
    arr = np.asarray(c, dtype=float)
    if arr.ndim == 0:
        return [float(arr)] * n
    raise ConfigurationError(f"{label} needs {n} components")


class Semimartingale:
    """``X = X0 + int alpha ds + int eta d<B> + int beta dB`` in dimension ``n <= 4``.

    Each coefficient component is a constant, an adapted path process
    (GridProcess or SimpleProcess) or a :class:`StateCoefficient`.
    ``bounds`` (alpha, eta, beta) are enforced at evaluation when given.
    ``stop`` restricts all three integrals to ``[0, stop]``.
    """

    def __init__(self, x0, alpha=0.0, eta=0.0, beta=0.0, bounds=None,
                 stop: StoppingTime | None = None, name: str = "X"):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if x0.ndim != 1 or not 1 <= x0.size <= MAX_DIM:
            raise ConfigurationError(f"X0 must be a vector of length 1..{MAX_DIM}")
        self.x0 = x0
        self.dim = x0.size
        self.alpha = _as_components(alpha, self.dim, "alpha")
        self.eta = _as_components(eta, self.dim, "eta")
        self.beta = _as_components(beta, self.dim, "beta")
        self.bounds = bounds
        self.stop = stop
        self.name = name

    @classmethod
    def brownian(cls, x0: float = 0.0) -> "Semimartingale":
        return cls([x0], 0.0, 0.0, 1.0, name="B")

    def stopped(self, tau: StoppingTime) -> "Semimartingale":
        return Semimartingale(self.x0, self.alpha, self.eta, self.beta, self.bounds, tau,
                              f"{self.name}^{tau.name}")

    @property
    def state_dependent(self) -> bool:
        return any(isinstance(c, StateCoefficient) for c in self.alpha + self.eta + self.beta)


@dataclass(frozen=True, eq=False)
class Evolution:
    """Values of a semimartingale on the grid plus the left-point coefficients used.

    ``x`` has shape ``(..., N+1, n)``; ``alpha``, ``eta``, ``beta`` have
    shape ``(..., N, n)`` and already include any stopping indicator.
    """

    x: np.ndarray
    alpha: np.ndarray
    eta: np.ndarray
    beta: np.ndarray
    live: np.ndarray
    stop_index: np.ndarray | None = None

    def component(self, i: int = 0) -> np.ndarray:
        return self.x[..., i]


def _coef_array(c, paths, label):
    if isinstance(c, StateCoefficient):
        return None
    v = process_values(c, paths)
    return np.broadcast_to(v, paths.b.shape)[..., :-1]


def _check_finite(arr, label):
    bad = ~np.isfinite(arr)
    if np.any(bad):
        k = int(np.argwhere(bad)[0][-2 if arr.ndim > 1 else 0])
        raise EvaluationError(f"non-finite {label} at grid index {k}", index=k)


def evolve(X: Semimartingale, paths) -> Evolution:
    """Left-point Euler accumulation of the three integrals."""
    N, n = paths.n_steps, X.dim
    shape = paths.b.shape[:-1]
    dt, dqv, db = paths.dt, paths.dqv, paths.db
    if X.stop is not None:
        k_stop = np.asarray(X.stop.index(paths))
        j = np.arange(N)
        live = ((j < k_stop[..., None]) | (k_stop[..., None] == N)).astype(float)
        live = np.broadcast_to(live, shape + (N,))
    else:
        k_stop = None
        live = np.ones(shape + (N,))
    coefs = {}
    for label, comps in (("alpha", X.alpha), ("eta", X.eta), ("beta", X.beta)):
        coefs[label] = [_coef_array(c, paths, f"{label}[{i}]") for i, c in enumerate(comps)]

    def check_bounds(label, arr):
        if X.bounds is None:
            return
        bound = dict(zip(("alpha", "eta", "beta"), X.bounds))[label]
        if bound is not None and np.any(np.abs(arr) > bound):
            raise ContractError(f"{label} exceeds its declared bound {bound}")

    if not X.state_dependent:
        arrs = {}
        for label in ("alpha", "eta", "beta"):
            a = np.stack([np.broadcast_to(v, shape + (N,)) for v in coefs[label]], axis=-1)
            _check_finite(a, label)
            check_bounds(label, a)
            arrs[label] = a * live[..., None]
        incr = (arrs["alpha"] * dt[:, None] + arrs["eta"] * dqv[..., None]
                + arrs["beta"] * db[..., None])
        x = np.cumsum(np.concatenate([np.broadcast_to(X.x0, shape + (1, n)), incr], axis=-2),
                      axis=-2)
        return Evolution(x, arrs["alpha"], arrs["eta"], arrs["beta"], live, k_stop)

    x = np.empty(shape + (N + 1, n))
    x[..., 0, :] = X.x0
    arrs = {lab: np.empty(shape + (N, n)) for lab in ("alpha", "eta", "beta")}
    incr = np.empty(shape + (N, n))
    t = paths.t
    for k in range(N):
        xk = x[..., k, :]
        for label, comps in (("alpha", X.alpha), ("eta", X.eta), ("beta", X.beta)):
            for i, c in enumerate(comps):
                if isinstance(c, StateCoefficient):
                    val = np.broadcast_to(np.asarray(c.fn(t[k], xk, paths.b[..., k]),
                                                     dtype=float), shape)
                else:
                    val = coefs[label][i][..., k]
                if not np.all(np.isfinite(val)):
                    raise EvaluationError(f"non-finite {label}[{i}] at grid index {k}", index=k)
                arrs[label][..., k, i] = val * live[..., k]
        for label in arrs:
            check_bounds(label, arrs[label][..., k, :])
        incr[..., k, :] = (arrs["alpha"][..., k, :] * dt[k]
                           + arrs["eta"][..., k, :] * dqv[..., k, None]
                           + arrs["beta"][..., k, :] * db[..., k, None])
        x[..., k + 1, :] = xk + incr[..., k, :]
    return Evolution(x, arrs["alpha"], arrs["eta"], arrs["beta"], live, k_stop)


# -- both sides of the formula ------------------------------------------------


def _time_index(evo: Evolution, paths):
    """Grid time used by phi on the left-hand side: ``t ^ tau`` when stopped."""
    t = paths.t
    if evo.stop_index is None:
        return np.broadcast_to(t, evo.x.shape[:-1])
    j = np.arange(t.size)
    return t[np.minimum(j, evo.stop_index[..., None])]


def ito_lhs(phi: SmoothFunction, evo: Evolution, paths) -> np.ndarray:
    """Running ``phi(t, X_t) - phi(0, X_0)`` for every grid time."""
    tt = _time_index(evo, paths)
    v = phi.value(tt, evo.x)
    return v - v[..., :1]


def _rhs_increments(phi: SmoothFunction, evo: Evolution, paths):
    tk = np.broadcast_to(paths.t[:-1], evo.x.shape[:-2] + (paths.n_steps,))
    xk = evo.x[..., :-1, :]
    g = phi.grad(tk, xk)
    H = phi.hess(tk, xk)
    ft = phi.dt(tk, xk) * evo.live
    d_b = np.sum(g * evo.beta, axis=-1) * paths.db
    d_t = (ft + np.sum(g * evo.alpha, axis=-1)) * paths.dt
    quad = np.einsum("...i,...ij,...j->...", evo.beta, H, evo.beta)
    d_q = (np.sum(g * evo.eta, axis=-1) + 0.5 * quad) * paths.dqv
    return d_b, d_t, d_q


def ito_rhs(phi: SmoothFunction, X: Semimartingale | Evolution, paths) -> np.ndarray:
    """Running sum of the dB, du and d<B> integrals on the right-hand side."""
    phi.ensure_audited()
    evo = X if isinstance(X, Evolution) else evolve(X, paths)
    d_b, d_t, d_q = _rhs_increments(phi, evo, paths)
    step = d_b + d_t + d_q
    zeros = np.zeros(step.shape[:-1] + (1,))
    return np.concatenate([zeros, np.cumsum(step, axis=-1)], axis=-1)


def residual(phi: SmoothFunction, X: Semimartingale, paths) -> np.ndarray:
    """Per-path residual series ``LHS(t) - RHS(t)``."""
    evo = evolve(X, paths)
    return ito_lhs(phi, evo, paths) - ito_rhs(phi, evo, paths)


def residual_rows(phi, X, path):
    r = residual(phi, X, path)
    if r.ndim != 1:
        raise ValueError("residual CSV export is per path")
    return [("t", "residual")] + list(zip(path.t.tolist(), r.tolist()))


@dataclass
class ItoResidualReport:
    phi_name: str
    levels: list
    order_estimates: list
    series: dict = field(default_factory=dict, repr=False)

    def rms(self) -> list:
        return [lv["rms"] for lv in self.levels]

    def to_dict(self) -> dict:
        return {"phi": self.phi_name, "levels": self.levels,
                "order_estimates": self.order_estimates}


def _final_residuals(phi, X, paths):
    return residual(phi, X, paths)[..., -1]


def verify(phi: SmoothFunction, X: Semimartingale, ensemble, levels: Sequence[int],
           keep_series: bool = False) -> ItoResidualReport:
    """Residual statistics of the formula across nested grid refinements.

    ``ensemble`` is a PathEnsemble, or a ScenarioSet (any iterable of
    ensembles) on the finest grid; coarser levels are nested restrictions of
    the same paths.  Over several scenarios the mean square is the supremum.
    """
    levels = sorted(int(n) for n in levels)
    if len(levels) < 2:
        raise ConfigurationError("verify needs at least two refinement levels")
    for a, b in zip(levels, levels[1:]):
        if b % a:
            raise ConfigurationError(f"grid with {a} steps is not nested in {b} steps")
    phi.ensure_audited()
    single = isinstance(ensemble, (PathEnsemble, SamplePath))
    ms = {n: [] for n in levels}
    mx = dict.fromkeys(levels, 0.0)
    series = {}
    for e in ([ensemble] if single else ensemble):
        if e.n_steps % levels[-1]:
            raise ConfigurationError(
                f"finest level {levels[-1]} not nested in {e.n_steps}-step paths")
        for n_steps in levels:
            r = residual(phi, X, e.at_resolution(n_steps))
            ms[n_steps].append(float(np.mean(r[..., -1] ** 2)))
            mx[n_steps] = max(mx[n_steps], float(np.max(np.abs(r))))
            if keep_series:
                series.setdefault(n_steps, []).append(r)
    rows = [{"n_steps": n, "rms": math.sqrt(max(ms[n])), "max_abs": mx[n]} for n in levels]
    orders = []
    for lo, hi in zip(rows, rows[1:]):
        if lo["rms"] > 0 and hi["rms"] > 0:
            orders.append(math.log(lo["rms"] / hi["rms"])
                          / math.log(hi["n_steps"] / lo["n_steps"]))
        else:
            orders.append(None)
    return ItoResidualReport(phi.name, rows, orders, series)


# -- localization ------------------------------------------------------------


class LocalizationTime(StoppingTime):
    """``inf{t : gamma_t > k} ^ sigma_k`` with
    ``gamma_t = |X_t - X_0| + int_0^t (|beta|^2 + |alpha| + |eta|) du``."""

    def __init__(self, X: Semimartingale, k: float, sequence: LocalizationSequence | None = None):
        self.X, self.k, self.sequence = X, float(k), sequence
        self.name = f"loc({X.name},{self.k:g})"

    def gamma(self, paths) -> np.ndarray:
        evo = evolve(self.X, paths)
        dev = np.linalg.norm(evo.x - evo.x[..., :1, :], axis=-1)
        dens = (np.sum(evo.beta ** 2, axis=-1) + np.sum(np.abs(evo.alpha), axis=-1)
                + np.sum(np.abs(evo.eta), axis=-1))
        run = np.concatenate([np.zeros(dens.shape[:-1] + (1,)),
                              np.cumsum(dens * paths.dt, axis=-1)], axis=-1)
        return dev + run

    def index(self, paths):
        k = _first_true(self.gamma(paths) > self.k, paths.n_steps)
        if self.sequence is not None:
            k = np.minimum(k, self.sequence(int(math.ceil(self.k))).index(paths))
        return k


def localization_consistency(phi: SmoothFunction, X: Semimartingale, paths, k: float,
                             sequence: LocalizationSequence | None = None) -> dict:
    """Compare the stopped formula for phi with the clamped function phi_k.

    Returns the residual series of ``phi`` on ``X`` stopped at ``tau_k`` and
    of ``phi_k`` on ``X``, the mask of paths that never stop and stay in
    ``|x| <= 2k`` (where both must agree exactly), and the worst
    disagreement on that mask.  Also compares ``phi`` and ``phi_k`` on the
    stopped process where the stopped path stays in ``|x| <= 2k``.
    """
    tau = LocalizationTime(X, k, sequence)
    phik = clamp_function(phi, k)
    Xs = X.stopped(tau)
    r_stopped = residual(phi, Xs, paths)
    r_clamped = residual(phik, X, paths)
    r_stopped_clamped = residual(phik, Xs, paths)
    evo = evolve(X, paths)
    evo_s = evolve(Xs, paths)
    in_range = np.max(np.linalg.norm(evo.x, axis=-1), axis=-1) <= 2 * k
    never_stopped = np.asarray(tau.index(paths)) == paths.n_steps
    mask = in_range & never_stopped
    mask_s = np.max(np.linalg.norm(evo_s.x, axis=-1), axis=-1) <= 2 * k
    diff = np.abs(r_stopped - r_clamped)[mask]
    diff_s = np.abs(r_stopped - r_stopped_clamped)[mask_s]
    return {"tau": tau, "mask": mask, "stopped_mask": mask_s,
            "residual_stopped": r_stopped, "residual_clamped": r_clamped,
            "max_diff": float(diff.max()) if diff.size else 0.0,
            "max_diff_stopped": float(diff_s.max()) if diff_s.size else 0.0}


# -- second-order remainder diagnostics ----------------------------------------


ZETA_TERMS = ("dt_dt", "dqv_dqv", "dt_dqv", "dt_dB", "dqv_dB")


@dataclass(frozen=True, eq=False)
class RemainderTable:
    """Per-path decomposition of ``LHS - RHS`` on an N-step partition.

    ``eta[..., k]`` is the second-order Taylor remainder of step k,
    ``zeta[name]`` the cross-term sums, ``zeta_weights[name][..., k]`` the
    coefficient multiplying the product of increments, and ``mismatch``
    the quadratic-variation term ``1/2 sum beta'D^2 phi beta ((dB)^2 - d<B>)``.
    """

    n_steps: int
    eta: np.ndarray
    zeta: dict
    zeta_weights: dict
    envelopes: dict
    mismatch: np.ndarray

    @property
    def eta_sum(self) -> np.ndarray:
        return self.eta.sum(axis=-1)

    def total(self) -> np.ndarray:
        return 0.5 * self.eta_sum + sum(self.zeta.values()) + self.mismatch


def _bilinear(u, H, v):
    return np.einsum("...i,...ij,...j->...", u, H, v)


def appendix_remainders(phi: SmoothFunction, X: Semimartingale, paths, n_steps: int | None = None,
                        sigma_hi: float | None = None) -> RemainderTable:
    """Taylor remainders and cross terms of the partition scheme on ``n_steps`` steps."""
    if not phi.time_homogeneous:
        raise ConfigurationError("remainder diagnostics need a time-homogeneous phi")
    p = paths if n_steps is None else paths.at_resolution(n_steps)
    evo = evolve(X, p)
    N = p.n_steps
    tk = np.zeros(evo.x.shape[:-2] + (N,))
    xk = evo.x[..., :-1, :]
    dx = np.diff(evo.x, axis=-2)
    H0 = phi.hess(tk, xk)
    acc = np.zeros(H0.shape)
    for s, w in zip(_GL_S, _GL_W):
        acc = acc + w * (1.0 - s) * (phi.hess(tk, xk + s * dx) - H0)
    eta = 2.0 * _bilinear(dx, acc, dx)

    dt = p.dt
    A = evo.alpha * dt[:, None]
    Q = evo.eta * p.dqv[..., None]
    Bm = evo.beta * p.db[..., None]
    w = {
        "dt_dt": 0.5 * _bilinear(evo.alpha, H0, evo.alpha),
        "dqv_dqv": 0.5 * _bilinear(evo.eta, H0, evo.eta),
        "dt_dqv": _bilinear(evo.alpha, H0, evo.eta),
        "dt_dB": _bilinear(evo.alpha, H0, evo.beta),
        "dqv_dB": _bilinear(evo.eta, H0, evo.beta),
    }
    zeta = {
        "dt_dt": 0.5 * _bilinear(A, H0, A).sum(axis=-1),
        "dqv_dqv": 0.5 * _bilinear(Q, H0, Q).sum(axis=-1),
        "dt_dqv": _bilinear(A, H0, Q).sum(axis=-1),
        "dt_dB": _bilinear(A, H0, Bm).sum(axis=-1),
        "dqv_dB": _bilinear(Q, H0, Bm).sum(axis=-1),
    }
    s = sigma_hi if sigma_hi is not None else float(np.max(p.sigma)) if p.sigma.size else 0.0
    T = p.grid.horizon
    env = {
        "dt_dt": T * np.sum(w["dt_dt"] ** 2 * dt ** 3, axis=-1),
        "dqv_dqv": np.sum(w["dqv_dqv"] ** 2 * s ** 6 * dt ** 3, axis=-1),
        "dt_dqv": np.sum(w["dt_dqv"] ** 2 * s ** 4 * dt ** 3, axis=-1),
        "dt_dB": np.sum(w["dt_dB"] ** 2 * s ** 2 * dt ** 2, axis=-1),
        "dqv_dB": np.sum(w["dqv_dB"] ** 2 * s ** 4 * dt ** 2, axis=-1),
    }
    mismatch = 0.5 * np.sum(_bilinear(evo.beta, H0, evo.beta) * (p.db ** 2 - p.dqv), axis=-1)
    return RemainderTable(N, eta, zeta, w, env, mismatch)


def remainder_moments(phi: SmoothFunction, X: Semimartingale, scenarios,
                      levels: Sequence[int], sigma_hi: float | None = None) -> list:
    """Sublinear second moments of the remainder terms for each partition size.

    Each row holds estimates of ``E|sum_k eta_k|^2``, the envelope
    ``N sum_k E|eta_k|^2``, ``E|zeta_term|^2`` per cross term and
    ``E[envelope]`` per cross term.
    """
    if sigma_hi is None and isinstance(scenarios, ScenarioSet):
        sigma_hi = scenarios.band.sigma_hi
    levels = sorted(levels)
    ids, per_level = [], {n: [] for n in levels}
    for e in scenarios:
        ids.append(e.control_id)
        for n in levels:
            t = appendix_remainders(phi, X, e, n, sigma_hi=sigma_hi)
            per_level[n].append({
                "eta_sum2": t.eta_sum ** 2,
                "eta_k2": np.mean(t.eta ** 2, axis=0),
                "zeta2": {k: v ** 2 for k, v in t.zeta.items()},
                "env": t.envelopes,
            })
    rows = []
    for n in levels:
        tabs = per_level[n]
        per_k = np.max(np.stack([t["eta_k2"] for t in tabs]), axis=0)
        row = {"n_steps": n,
               "eta_sum_m2": reduce_samples(np.stack([t["eta_sum2"] for t in tabs]), ids),
               "eta_envelope": float(n * per_k.sum()), "zeta_m2": {}, "zeta_envelope": {}}
        for name in ZETA_TERMS:
            row["zeta_m2"][name] = reduce_samples(np.stack([t["zeta2"][name] for t in tabs]), ids)
            row["zeta_envelope"][name] = reduce_samples(
                np.stack([t["env"][name] for t in tabs]), ids).value
        rows.append(row)
    return rows
