"""Verification suites run by the CLI.

Each suite returns a :class:`SuiteReport`: a list of case records plus
two-column series for plotting.  Every case names an anchor from
``TRACEABILITY``, the table tying a check to the statement it exercises.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .config import ExperimentConfig
from .expectation import (ScenarioSet, gnormal_abs_moment, iter_ensembles, reduce_samples,
                          stream_samples)
from .integration import (GridProcess, adaptedness_audit, bochner_integral, inequality_suite,
                          ito_integral, process_values, random_simple_process, simple_ito_sum,
                          tail_process)
from .ito_formula import (Semimartingale, SmoothFunction, appendix_remainders,
                          localization_consistency, remainder_moments, residual, verify)
from .pde import McConfig, PdeGrid, cross_validate
from .scenarios import SeedPolicy, TimeGrid, VolatilityBand, default_controls
from .stopping import (Deterministic, HittingTime, LocalizationSequence, MinOf,
                       dyadic_l1_gap, dyadic_upper, localize, random_stopping_time,
                       stopped_identity_gap)

TRACEABILITY = {
    "sublinear expectation: monotonicity":
        "X <= Y pathwise implies E[X] <= E[Y]",
    "sublinear expectation: constant preservation":
        "E[c] = c for constants",
    "sublinear expectation: sub-additivity":
        "E[X + Y] <= E[X] + E[Y]",
    "sublinear expectation: positive homogeneity":
        "E[lambda X] = lambda E[X] for lambda >= 0",
    "G-normal distribution: absolute moments":
        "E|B_1|^p equals the moment of N(0, sigma_hi^2)",
    "simple integrands: zero mean of the integral":
        "E[int eta dB] = E[-int eta dB] = 0",
    "simple integrands: energy bound":
        "E[(int eta dB)^2] <= sigma_hi^2 E[int eta^2 dt]",
    "simple integrands: Doob-type maximal bound":
        "E[max_t (int_0^t eta dB)^2] <= 2 sigma_hi^2 E[int eta^2 dt]",
    "simple integrands: defining sum":
        "int eta dB is the sum of xi_j (B_{t_j+1} - B_{t_j})",
    "integrals: linearity":
        "int (a eta + b theta) dB = a int eta dB + b int theta dB",
    "quadratic variation: band sandwich":
        "sigma_lo^2 t <= <B>_t <= sigma_hi^2 t",
    "truncation: vanishing tails":
        "E[int |B|^2 1{|B| > n} dt] decreases to 0 as n grows",
    "stopped integrals: stopping the integral equals stopping the integrand":
        "int_0^{t ^ tau} eta dB = int_0^t 1[0,tau] eta dB",
    "stopping times: decidable from the past":
        "{tau <= t} depends only on the path up to t",
    "dyadic approximation: sandwich":
        "0 <= tau_n - tau <= 2^-n T",
    "dyadic approximation: indicator convergence":
        "E int |1[0,tau_n] - 1[0,tau]| dt <= 2^-n T",
    "localization: increasing stopping times":
        "the localizing times increase with the level",
    "Ito formula: residual convergence":
        "the residual of the formula vanishes as the partition is refined",
    "Ito formula: affine functions":
        "for linear phi the formula holds with no second-order term",
    "Ito formula: quadratic function":
        "for phi = x^2 the residual is sum (dB)^2 - <B>",
    "Ito formula: localization by clamping":
        "the stopped formula and the clamped function agree before the exit time",
    "Taylor remainders: quadratic phi":
        "the second-order remainder vanishes for quadratic phi",
    "Taylor remainders: decay":
        "E|sum_k eta_k|^2 decreases as the partition is refined",
    "cross terms: decay":
        "the dt dt, d<B> d<B>, dt d<B>, dt dB and d<B> dB sums decrease under refinement",
    "G-heat equation: Monte Carlo agreement":
        "E[phi(x + B_T)] equals u(T, x) for du/dt = G(u_xx)",
    "G-heat equation: closed form":
        "convex phi is priced at sigma_hi, concave phi at sigma_lo",
}

SCHEMA_VERSION = 1


def traceability_rows():
    return [("anchor", "statement")] + sorted(TRACEABILITY.items())


# -- function libraries --------------------------------------------------------


def _phi_library():
    def gauss(x):
        return np.exp(-x * x)

    return {
        "x2": SmoothFunction.univariate(lambda x: x * x, lambda x: 2 * x,
                                        lambda x: np.full_like(x, 2.0), name="x2"),
        "x3": SmoothFunction.univariate(lambda x: x ** 3, lambda x: 3 * x * x,
                                        lambda x: 6 * x, name="x3"),
        "sin": SmoothFunction.univariate(np.sin, np.cos, lambda x: -np.sin(x), name="sin"),
        "cos": SmoothFunction.univariate(np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x),
                                         name="cos"),
        "gauss": SmoothFunction.univariate(gauss, lambda x: -2 * x * gauss(x),
                                           lambda x: (4 * x * x - 2) * gauss(x), name="gauss"),
        # Power-of-two slope: every product in the formula is exact.
        "affine": SmoothFunction.univariate(lambda x: 2.0 * x, lambda x: np.full_like(x, 2.0),
                                            lambda x: np.zeros_like(x), name="affine"),
    }


PHIS = _phi_library()


def payoff_library(band: VolatilityBand, horizon: float) -> dict:
    """name -> (phi, closed form value at x = 0 or None, shape)."""
    lo, hi, T = band.sigma_lo, band.sigma_hi, horizon
    return {
        "square": (lambda x: x * x, hi * hi * T, "convex"),
        "neg_square": (lambda x: -x * x, -lo * lo * T, "concave"),
        "call": (lambda x: np.maximum(x, 0.0), hi * math.sqrt(T / (2 * math.pi)), "convex"),
        "constant": (lambda x: np.full_like(np.asarray(x, dtype=float), 1.5), 1.5, "convex"),
    }


# -- report plumbing ------------------------------------------------------------


@dataclass
class SuiteReport:
    suite: str
    seed: int
    cases: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def status(self) -> str:
        st = {c["status"] for c in self.cases}
        return "fail" if "fail" in st else "warn" if "warn" in st else "pass"

    def to_dict(self) -> dict:
        # wall-clock is kept out so that reports are reproducible byte for byte
        return {"suite": self.suite, "seed": self.seed, "status": self.status,
                "cases": self.cases, "series": self.series}

    def case(self, case_id):
        for c in self.cases:
            if c["case_id"] == case_id:
                return c
        raise KeyError(case_id)


class _Recorder:
    def __init__(self, report: SuiteReport, strict: bool):
        self.report = report
        self.strict = strict

    def add(self, case_id, anchor, kind, ok, observed, expected, tolerance, description=None):
        if anchor not in TRACEABILITY:
            raise KeyError(f"anchor {anchor!r} missing from the traceability table")
        if ok:
            status = "pass"
        elif kind == "statistical" and not self.strict:
            status = "warn"
        else:
            status = "fail"
        self.report.cases.append({
            "case_id": case_id, "description": description or TRACEABILITY[anchor],
            "anchor": anchor, "kind": kind, "status": status,
            "observed": observed, "expected": expected, "tolerance": tolerance,
        })

    def series(self, name, columns, rows, **meta):
        self.report.series[name] = {"columns": list(columns),
                                    "rows": [[float(a), float(b)] for a, b in rows],
                                    "meta": meta}


def _setup(cfg: ExperimentConfig):
    band = VolatilityBand(cfg.band.sigma_lo, cfg.band.sigma_hi)
    grid = TimeGrid.uniform(cfg.grid.horizon, cfg.grid.n_steps)
    controls = default_controls(band, cfg.controls.n_constant, cfg.controls.feedback)
    policy = SeedPolicy(cfg.seed.master_seed, cfg.seed.common_random_numbers)
    return band, grid, controls, policy


# -- axioms -------------------------------------------------------------------------

QUANT_BITS = 20
QUANT_CLIP = 256.0


def quantize(x):
    """Round onto the mesh ``2^-20 Z`` inside ``[-256, 256]``.

    With a power-of-two number of paths, every sum and mean of such values
    (and of their multiples by ``k / 16``, ``k <= 64``) is exact in double
    precision, so the axioms can be checked with zero tolerance.
    """
    s = 2.0 ** QUANT_BITS
    return np.round(np.clip(x, -QUANT_CLIP, QUANT_CLIP) * s) / s


def path_features(e) -> np.ndarray:
    """A few path functionals, shape (n_paths, n_features)."""
    b = e.b
    mid = b[:, e.n_steps // 2]
    cols = [b[:, -1], b.max(axis=1), b.min(axis=1), e.qv[:, -1], mid,
            np.sum(b[:, :-1] * e.dt, axis=1)]
    base = np.stack(cols, axis=1)
    return np.concatenate([base, base ** 2, np.sin(base), np.abs(base), np.exp(-base ** 2),
                           (base > 0).astype(float)], axis=1)


def random_functionals(rng, features: np.ndarray, n: int, density: float = 0.25):
    """``n`` quantized random combinations of the features: (n, n_scen, n_paths)."""
    nf = features.shape[-1]
    w = rng.uniform(-2, 2, size=(n, nf)) * (rng.random((n, nf)) < density)
    return quantize(np.einsum("spf,nf->nsp", features, w))


def check_axioms(scenarios: ScenarioSet, n_pairs: int, rng, batch: int = 500) -> dict:
    """Count axiom violations over ``n_pairs`` random functional pairs."""
    ids = scenarios.control_ids
    feats = np.stack([path_features(e) for e in scenarios])
    sup = lambda tab: reduce_samples(tab, ids).value
    bad = dict.fromkeys(("monotonicity", "constant", "subadditivity", "homogeneity"), 0)
    done = 0
    while done < n_pairs:
        m = min(batch, n_pairs - done)
        X = random_functionals(rng, feats, m)
        Y = random_functionals(rng, feats, m)
        lam = rng.integers(0, 65, size=m) / 16.0
        c = quantize(rng.uniform(-100, 100, size=m))
        for i in range(m):
            ex, ey = sup(X[i]), sup(Y[i])
            if sup(X[i] + np.abs(Y[i])) < ex:
                bad["monotonicity"] += 1
            if sup(np.full_like(X[i], c[i])) != c[i]:
                bad["constant"] += 1
            if sup(X[i] + Y[i]) > ex + ey:
                bad["subadditivity"] += 1
            if sup(lam[i] * X[i]) != lam[i] * ex:
                bad["homogeneity"] += 1
        done += m
    return bad


def run_axioms(cfg: ExperimentConfig, jobs: int = 1) -> SuiteReport:
    band, grid, controls, policy = _setup(cfg)
    rep = SuiteReport("axioms", cfg.seed.master_seed)
    rec = _Recorder(rep, cfg.strict_statistical)
    scen = ScenarioSet(controls, grid, band, cfg.axioms.n_paths, policy, jobs=jobs)
    rng = np.random.default_rng([cfg.seed.master_seed, 1])
    bad = check_axioms(scen, cfg.axioms.n_pairs, rng)
    n = cfg.axioms.n_pairs
    exact = cfg.axioms.n_paths & (cfg.axioms.n_paths - 1) == 0
    note = "" if exact else " (n_paths is not a power of two: means may round)"
    for key, anchor in (("monotonicity", "sublinear expectation: monotonicity"),
                        ("constant", "sublinear expectation: constant preservation"),
                        ("subadditivity", "sublinear expectation: sub-additivity"),
                        ("homogeneity", "sublinear expectation: positive homogeneity")):
        rec.add(f"axiom.{key}", anchor, "deterministic", bad[key] == 0,
                {"violations": bad[key], "pairs": n}, {"violations": 0}, 0,
                TRACEABILITY[anchor] + note)
    return rep


# -- integrals ----------------------------------------------------------------------


def gaussian_tail_oracle(n: float, sigma: float, grid: TimeGrid) -> float:
    """Left-point sum of ``E[X_t^2 1{|X_t| > n}]`` for ``X_t ~ N(0, sigma^2 t)``."""
    total = 0.0
    for t, dt in zip(grid.points[:-1], grid.dt):
        if t <= 0:
            continue
        s = sigma * math.sqrt(t)
        a = n / s
        total += dt * s * s * 2 * (a * norm.pdf(a) + norm.sf(a))
    return total


def run_integrals(cfg: ExperimentConfig, jobs: int = 1) -> SuiteReport:
    band, grid, controls, policy = _setup(cfg)
    p = cfg.integrals
    k = p.stat_k
    rep = SuiteReport("integrals", cfg.seed.master_seed)
    rec = _Recorder(rep, cfg.strict_statistical)

    # G-normal moments and truncation tails, streamed one scenario at a time
    T = grid.horizon
    pows = (1.0, 2.0, 4.0)
    fns = [lambda e, q=q: np.abs(e.b[:, -1]) ** q / T ** (q / 2) for q in pows]
    fns += [lambda e, n=n: bochner_integral(tail_process(GridProcess(lambda r: r.b), n), e).final
            for n in p.tail_levels]
    tabs, ids = stream_samples(fns, controls, grid, band, p.moment_paths, policy, jobs)
    rows = []
    for q, tab in zip(pows, tabs):
        est = reduce_samples(tab, ids)
        exact = gnormal_abs_moment(q, band)
        ok = abs(est.value - exact) <= k * est.std_error
        rec.add(f"moment.p{q:g}", "G-normal distribution: absolute moments", "statistical", ok,
                {"estimate": est.value, "std_error": est.std_error,
                 "argmax_control_id": est.argmax_control_id}, exact, f"{k:g} std errors")
        rows.append((q, est.value))
    rec.series("gnormal_moments", ("p", "estimate"), rows)

    tails, rows = [], []
    for n, tab in zip(p.tail_levels, tabs[len(pows):]):
        est = reduce_samples(tab, ids)
        oracle = gaussian_tail_oracle(n, band.sigma_hi, grid)
        tails.append(est)
        rows.append((n, est.value))
        rec.add(f"truncation.oracle_n{n:g}", "truncation: vanishing tails", "statistical",
                est.value >= oracle - k * est.std_error,
                {"estimate": est.value, "std_error": est.std_error}, oracle,
                f"estimate >= constant sigma_hi oracle - {k:g} std errors")
    decreasing = all(b.value <= a.value + k * max(a.std_error, b.std_error)
                     for a, b in zip(tails, tails[1:]))
    last = tails[-1].value
    rec.add("truncation.decreasing", "truncation: vanishing tails", "statistical", decreasing,
            [t.value for t in tails], "non-increasing in n", f"{k:g} std errors")
    rec.add("truncation.limit", "truncation: vanishing tails", "statistical",
            last < p.tail_limit, last, f"< {p.tail_limit:g}", p.tail_limit)
    rec.series("truncation_tail", ("n", "tail"), rows)
    del tabs

    scen = ScenarioSet(controls, grid, band, p.n_paths, policy, jobs=jobs)
    rng = np.random.default_rng([cfg.seed.master_seed, 2])
    procs = [random_simple_process(rng, grid, name=f"eta{i}") for i in range(p.n_processes)]
    records = inequality_suite(scen, procs, k)
    groups = {"zero_mean": ("simple integrands: zero mean of the integral",
                            ("zero_mean_upper", "zero_mean_lower")),
              "energy": ("simple integrands: energy bound", ("energy",)),
              "doob": ("simple integrands: Doob-type maximal bound", ("doob",))}
    for name, (anchor, prefixes) in groups.items():
        sel = [r for r in records if r["case_id"].split("[")[0] in prefixes]
        worst = min(sel, key=lambda r: r["margin_in_std_errors"])
        fails = [r["case_id"] for r in sel if not r["pass"]]
        rec.add(f"inequality.{name}", anchor, "statistical", not fails,
                {"checks": len(sel), "exceedances": fails,
                 "worst_case": worst["case_id"],
                 "worst_margin_std_errors": worst["margin_in_std_errors"]},
                "rhs - lhs >= -k pooled std errors", f"{k:g} std errors")

    # pathwise identities on one feedback scenario
    e = scen.ensembles[-1]
    defining = max(float(np.max(np.abs(simple_ito_sum(eta, e) - ito_integral(eta, e).final)))
                   for eta in procs[:20])
    rec.add("integral.defining_sum", "simple integrands: defining sum", "deterministic",
            defining <= p.exact_tol, defining, 0.0, p.exact_tol)

    lin = 0.0
    a, b = 1.25, -0.75
    for i in range(0, min(20, len(procs)) - 1, 2):
        eta, theta = procs[i], procs[i + 1]
        comb = GridProcess(lambda q, eta=eta, theta=theta:
                           a * process_values(eta, q) + b * process_values(theta, q))
        lhs = ito_integral(comb, e).final
        rhs = a * ito_integral(eta, e).final + b * ito_integral(theta, e).final
        lin = max(lin, float(np.max(np.abs(lhs - rhs))))
    rec.add("integral.linearity", "integrals: linearity", "deterministic",
            lin <= p.exact_tol, lin, 0.0, p.exact_tol)

    worst = 0.0
    for ens in scen:
        t = ens.t
        lo = band.sigma_lo ** 2 * t
        hi = band.sigma_hi ** 2 * t
        worst = max(worst, float(np.max(lo - ens.qv)), float(np.max(ens.qv - hi)))
    rel = 1e-12 * band.sigma_hi ** 2 * grid.horizon
    rec.add("qv.sandwich", "quadratic variation: band sandwich", "deterministic",
            worst <= rel, worst, 0.0, rel)

    return rep


# -- stopping -----------------------------------------------------------------------


def stopping_families(horizon: float, sigma_hi: float) -> list:
    s = sigma_hi * math.sqrt(horizon)
    return [
        HittingTime(0.5 * s, "abs_b"),
        HittingTime(-0.3 * s, "b", "down"),
        HittingTime(0.5 * sigma_hi ** 2 * horizon, "qv"),
        Deterministic(horizon / 3),
        Deterministic(0.3 * horizon),
        MinOf(HittingTime(0.8 * s, "b"), Deterministic(0.7 * horizon)),
    ]


def run_stopping(cfg: ExperimentConfig, jobs: int = 1) -> SuiteReport:
    band, grid, controls, policy = _setup(cfg)
    p = cfg.stopping
    k = p.stat_k
    T = grid.horizon
    rep = SuiteReport("stopping", cfg.seed.master_seed)
    rec = _Recorder(rep, cfg.strict_statistical)
    scen = ScenarioSet(controls, grid, band, p.n_paths, policy, jobs=jobs)
    rng = np.random.default_rng([cfg.seed.master_seed, 3])

    worst = 0.0
    for i in range(p.n_pairs):
        e = scen.ensembles[i % len(scen)]
        eta = random_simple_process(rng, grid)
        tau = random_stopping_time(rng, T, band.sigma_hi, eta)
        worst = max(worst, float(np.max(stopped_identity_gap(eta, tau, e))))
    rec.add("stopped_integral.identity",
            "stopped integrals: stopping the integral equals stopping the integrand",
            "deterministic", worst == 0.0,
            {"max_abs_diff": worst, "pairs": p.n_pairs, "paths": p.n_paths}, 0.0, 0.0)

    # dyadic checks on a finer grid that is off the dyadic mesh
    del scen
    grid = TimeGrid.uniform(T, p.n_steps)
    scen = ScenarioSet(controls, grid, band, p.n_paths, policy, jobs=jobs)
    fams = stopping_families(T, band.sigma_hi)
    decidable = True
    for j, tau in enumerate(fams):
        ind = GridProcess(lambda q, tau=tau: (np.asarray(tau.index(q))[..., None]
                                              <= np.arange(q.n_steps + 1)).astype(float))
        for kk in (0, grid.n_steps // 4, grid.n_steps // 2, grid.n_steps - 1):
            e, donor = scen.ensembles[j % len(scen)], scen.ensembles[(j + 1) % len(scen)]
            decidable &= adaptedness_audit(ind, e, kk, donor)
    rec.add("stopping.decidable", "stopping times: decidable from the past", "deterministic",
            decidable, decidable, True, 0)

    gap_rows, l1_rows = [], []
    sandwich_ok, l1_bad = True, []
    for n in p.dyadic_levels:
        bound = T / 2 ** n
        max_gap, min_gap = 0.0, math.inf
        worst_l1 = -math.inf
        for tau in fams:
            for e in scen:
                g = dyadic_upper(tau, n, e) - tau.evaluate(e)
                max_gap = max(max_gap, float(g.max()))
                min_gap = min(min_gap, float(g.min()))
            est = dyadic_l1_gap(tau, n, scen)
            worst_l1 = max(worst_l1, est.value)
            if est.value > bound + k * est.std_error:
                l1_bad.append(f"{tau.name}@n={n}")
        sandwich_ok &= min_gap >= 0 and max_gap <= bound
        gap_rows.append((n, max_gap))
        l1_rows.append((n, worst_l1))
    rec.add("dyadic.sandwich", "dyadic approximation: sandwich", "deterministic", sandwich_ok,
            {"max_gap_by_level": {str(int(n)): g for n, g in gap_rows}},
            "0 <= tau_n - tau <= 2^-n T", 0)
    rec.add("dyadic.l1_gap", "dyadic approximation: indicator convergence", "statistical",
            not l1_bad, {"exceedances": l1_bad}, "<= 2^-n T", f"{k:g} std errors")
    rec.series("dyadic_gap", ("n", "max_gap"), gap_rows, horizon=T)
    rec.series("dyadic_l1_gap", ("n", "l1_gap"), l1_rows, horizon=T)

    inc = True
    seq = LocalizationSequence.exit_times(0.5 * band.sigma_hi * math.sqrt(T))
    for e in scen.ensembles[:4]:
        inc &= seq.check_increasing(e, range(1, 9))
        eta = random_simple_process(rng, grid)
        idx = [localize(eta, "L2", n)[1].index(e) for n in range(1, 9)]
        inc &= all(bool(np.all(a <= b)) for a, b in zip(idx, idx[1:]))
    rec.add("localization.increasing", "localization: increasing stopping times",
            "deterministic", inc, inc, True, 0)
    return rep


# -- Ito formula ----------------------------------------------------------------------


def remainder_process() -> Semimartingale:
    """A semimartingale with all three coefficients non-zero."""
    return Semimartingale([0.3], alpha=0.5, eta=-0.3, beta=1.0, name="X")


def run_ito(cfg: ExperimentConfig, jobs: int = 1) -> SuiteReport:
    band, grid, controls, policy = _setup(cfg)
    p = cfg.ito
    k = p.stat_k
    T = grid.horizon
    rep = SuiteReport("ito", cfg.seed.master_seed)
    rec = _Recorder(rep, cfg.strict_statistical)
    finest = TimeGrid.uniform(T, p.levels[-1])
    ensembles = lambda g: iter_ensembles(controls, g, band, p.n_paths, policy, jobs)
    B = Semimartingale.brownian()

    for name in p.phis:
        r = verify(PHIS[name], B, ensembles(finest), p.levels)
        rms = r.rms()
        dec = all(b < a for a, b in zip(rms, rms[1:]))
        orders = [o for o in r.order_estimates if o is not None]
        fit = float(-np.polyfit(np.log(p.levels), np.log(rms), 1)[0]) if min(rms) > 0 else None
        lo, hi = p.order_range
        rec.add(f"ito.{name}.decreasing", "Ito formula: residual convergence", "statistical",
                dec, rms, "strictly decreasing", 0)
        rec.add(f"ito.{name}.order", "Ito formula: residual convergence", "statistical",
                fit is not None and lo <= fit <= hi,
                {"fitted_order": fit, "pairwise_orders": orders}, [lo, hi], "range")
        rec.series(f"convergence_{name}", ("n_steps", "rms_residual"),
                   [(lv["n_steps"], lv["rms"]) for lv in r.levels])

    coarse = TimeGrid.uniform(T, p.remainder_levels[-1])
    aff, quad, loc = 0.0, 0.0, 0.0
    loc_paths = 0
    for e in ensembles(coarse):
        aff = max(aff, float(np.max(np.abs(residual(PHIS["affine"], B, e)))))
        r2 = residual(PHIS["x2"], B, e)
        z = np.concatenate([np.zeros((e.n_paths, 1)), np.cumsum(e.db ** 2 - e.dqv, axis=1)],
                           axis=1)
        quad = max(quad, float(np.max(np.abs(r2 - z))))
        for name in p.phis:
            c = localization_consistency(PHIS[name], B, e, p.localization_level)
            loc = max(loc, c["max_diff"], c["max_diff_stopped"])
            loc_paths += int(c["mask"].sum())
    rec.add("ito.affine.exact", "Ito formula: affine functions", "deterministic", aff == 0.0,
            aff, 0.0, 0.0)
    rec.add("ito.x2.identity", "Ito formula: quadratic function", "deterministic",
            quad <= p.exact_tol, quad, 0.0, p.exact_tol)
    rec.add("ito.localization", "Ito formula: localization by clamping", "deterministic",
            loc == 0.0 and loc_paths > 0, {"max_abs_diff": loc, "in_range_paths": loc_paths},
            0.0, 0.0)

    X = remainder_process()
    eta_q = 0.0
    for e in ensembles(coarse):
        for n in p.remainder_levels:
            eta_q = max(eta_q, float(np.max(np.abs(appendix_remainders(PHIS["x2"], X, e, n).eta))))
    rec.add("remainder.quadratic_zero", "Taylor remainders: quadratic phi", "deterministic",
            eta_q == 0.0, eta_q, 0.0, 0.0)

    rows = remainder_moments(PHIS["sin"], X, ensembles(coarse), p.remainder_levels,
                             sigma_hi=band.sigma_hi)

    def monotone(ests):
        bad = []
        for a, b in zip(ests, ests[1:]):
            if b.value > a.value + k * math.hypot(a.std_error, b.std_error):
                bad.append((a.value, b.value))
        return bad

    eta_ests = [r["eta_sum_m2"] for r in rows]
    bad = monotone(eta_ests)
    rec.add("remainder.eta_decay", "Taylor remainders: decay", "statistical", not bad,
            [e.value for e in eta_ests], "non-increasing", f"{k:g} std errors")
    rec.series("remainder_eta", ("n_steps", "eta_sum_m2"),
               [(r["n_steps"], r["eta_sum_m2"].value) for r in rows])
    for term in rows[0]["zeta_m2"]:
        ests = [r["zeta_m2"][term] for r in rows]
        bad = monotone(ests)
        rec.add(f"remainder.zeta.{term}", "cross terms: decay", "statistical", not bad,
                [e.value for e in ests], "non-increasing", f"{k:g} std errors")
    return rep


# -- PDE ------------------------------------------------------------------------------


def run_pde(cfg: ExperimentConfig, jobs: int = 1) -> SuiteReport:
    band, grid, controls, policy = _setup(cfg)
    p = cfg.pde
    T = grid.horizon
    rep = SuiteReport("pde", cfg.seed.master_seed)
    rec = _Recorder(rep, cfg.strict_statistical)
    lib = payoff_library(band, T)
    pgrid = PdeGrid.for_band(band, T, dx=p.dx, buffer=p.buffer)
    mc = McConfig(p.n_paths, p.n_steps, cfg.seed.master_seed, controls, jobs)
    for name in p.payoffs:
        phi, closed, shape = lib[name]
        r = cross_validate(phi, band, mc, pgrid, scheme_tol=p.scheme_tol, k=p.stat_k)
        rec.add(f"pde.{name}.cross", "G-heat equation: Monte Carlo agreement", "statistical",
                r["pass"] and not r["boundary_warning"],
                {"mc": r["mc_value"], "mc_std_error": r["mc_std_error"], "pde": r["pde_value"],
                 "argmax_control_id": r["argmax_control_id"], "abs_gap": r["abs_gap"],
                 "boundary_warning": r["boundary_warning"]},
                r["pde_value"], r["allowed"])
        tol = p.closed_form_rtol * max(abs(closed), 1e-12)
        ok = abs(r["mc_value"] - closed) <= tol and abs(r["pde_value"] - closed) <= tol
        rec.add(f"pde.{name}.closed_form", "G-heat equation: closed form", "statistical", ok,
                {"mc": r["mc_value"], "pde": r["pde_value"], "shape": shape}, closed, tol)
    return rep


RUNNERS = {"axioms": run_axioms, "integrals": run_integrals, "stopping": run_stopping,
           "ito": run_ito, "pde": run_pde}


def run_suite(name: str, cfg: ExperimentConfig, jobs: int = 1) -> SuiteReport:
    t0 = time.perf_counter()
    rep = RUNNERS[name](cfg, jobs)
    rep.wall_clock = time.perf_counter() - t0
    return rep
