import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcalc.errors import ContractError
from gcalc.expectation import ScenarioSet
from gcalc.integration import (GridProcess, SimpleProcess, adaptedness_audit, bochner_integral,
                               inequality_suite, ito_integral, max_step_jump, mp_norm, product,
                               qv_integral, random_simple_process, simple_ito_sum, tail_process,
                               truncate)
from gcalc.scenarios import Constant, SeedPolicy, TimeGrid, VolatilityBand, generate_ensemble
from gcalc.suites import gaussian_tail_oracle


@pytest.fixture(scope="module")
def ens(band, grid):
    return generate_ensemble(Constant(1.5), grid, band, 200, SeedPolicy(21))


def test_integral_of_one_is_the_path(ens):
    np.testing.assert_allclose(ito_integral(GridProcess.constant(1.0), ens).values, ens.b,
                               atol=1e-14)
    np.testing.assert_allclose(qv_integral(1.0, ens).values, ens.qv, atol=1e-14)
    np.testing.assert_allclose(bochner_integral(3.0, ens).final, 3.0, rtol=1e-14)


def test_simple_sum_matches_grid_integral(ens, grid):
    rng = np.random.default_rng(0)
    for _ in range(20):
        eta = random_simple_process(rng, grid)
        np.testing.assert_allclose(simple_ito_sum(eta, ens), ito_integral(eta, ens).final,
                                   atol=1e-12)


def test_hand_built_simple_process(ens, grid):
    # xi_0 = 1 on [0, 1/2), xi_1 = sign(B_{1/2}) on [1/2, 1]
    eta = SimpleProcess([0.0, 0.5, 1.0], [lambda w: 1.0, lambda w: np.sign(w.b[..., -1])], 1.0)
    k = grid.index_of(0.5)
    expect = ens.b[:, k] + np.sign(ens.b[:, k]) * (ens.b[:, -1] - ens.b[:, k])
    np.testing.assert_allclose(simple_ito_sum(eta, ens), expect, atol=1e-14)


def test_bounds_are_enforced(ens, grid):
    wild = SimpleProcess([0.0, 1.0], [lambda w: 5.0], bound=1.0)
    with pytest.raises(ContractError):
        wild.values(ens)
    with pytest.raises(ContractError):
        GridProcess(lambda p: p.b, bound=0.1).values(ens)
    with pytest.raises(ContractError):
        product(GridProcess(lambda p: p.b), GridProcess.constant(1.0))


def test_truncation_clamps(ens):
    v = truncate(GridProcess(lambda p: p.b), 0.5).values(ens)
    assert np.all(np.abs(v) <= 0.5)


def test_adaptedness_audit(band, grid):
    a = generate_ensemble(Constant(1.0), grid, band, 8, SeedPolicy(1))
    d = generate_ensemble(Constant(2.0), grid, band, 8, SeedPolicy(2))
    running_max = GridProcess(lambda p: np.maximum.accumulate(p.b, axis=-1))
    peeks = GridProcess(lambda p: np.broadcast_to(p.b[:, -1:], p.b.shape))
    assert adaptedness_audit(running_max, a, 10, d)
    assert not adaptedness_audit(peeks, a, 10, d)


def test_isometry_for_deterministic_integrand(band):
    # oracle: for deterministic eta under constant sigma, int eta dB ~ N(0, sigma^2 int eta^2)
    g = TimeGrid.uniform(1.0, 16)
    e = generate_ensemble(Constant(2.0), g, band, 50_000, SeedPolicy(8))
    eta = GridProcess(lambda p: np.broadcast_to(np.cos(3 * p.t), p.b.shape))
    x = ito_integral(eta, e).final
    var = 4.0 * np.sum(np.cos(3 * g.points[:-1]) ** 2 * g.dt)
    assert abs(x.var() - var) < 4 * var * math.sqrt(2 / x.size)


def test_tail_oracle_matches_constant_control(band):
    # oracle: Gaussian tail integral, summed on the same left-point grid
    g = TimeGrid.uniform(1.0, 16)
    e = generate_ensemble(Constant(2.0), g, band, 100_000, SeedPolicy(12))
    for n in (1.0, 2.0):
        x = bochner_integral(tail_process(GridProcess(lambda p: p.b), n), e).final
        se = x.std() / math.sqrt(x.size)
        assert abs(x.mean() - gaussian_tail_oracle(n, 2.0, g)) < 4 * se


def test_tail_oracle_known_limits():
    g = TimeGrid.uniform(1.0, 64)
    # n = 0 recovers E int B^2 dt = sigma^2 sum t_k dt
    assert gaussian_tail_oracle(0.0, 2.0, g) == pytest.approx(4 * np.sum(g.points[:-1] * g.dt))
    assert gaussian_tail_oracle(8.0, 2.0, g) < 1e-3


def test_mp_norm_of_constant(band, grid):
    scen = ScenarioSet([Constant(1.0), Constant(2.0)], grid, band, 16, SeedPolicy())
    assert mp_norm(GridProcess.constant(3.0), 2, scen) == pytest.approx(3.0)


def test_step_jumps_shrink_with_refinement(band):
    g = TimeGrid.uniform(1.0, 1024)
    e = generate_ensemble(Constant(2.0), g, band, 64, SeedPolicy(3))
    one = GridProcess.constant(1.0)
    jumps = [np.mean(max_step_jump(one, e.at_resolution(n))) for n in (16, 64, 256, 1024)]
    assert all(b < a for a, b in zip(jumps, jumps[1:]))


def test_inequality_suite_records(small_scenarios, grid):
    rng = np.random.default_rng(5)
    procs = [random_simple_process(rng, grid) for _ in range(3)]
    recs = inequality_suite(small_scenarios, procs)
    assert len(recs) == 12
    assert {r["case_id"].split("[")[0] for r in recs} == {
        "zero_mean_upper", "zero_mean_lower", "energy", "doob"}
    assert all(r["pass"] for r in recs)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_simple_processes_respect_bound(seed):
    band = VolatilityBand(1.0, 2.0)
    g = TimeGrid.uniform(1.0, 32)
    e = generate_ensemble(Constant(2.0), g, band, 32, SeedPolicy(seed % 1000))
    eta = random_simple_process(np.random.default_rng(seed), g)
    v = eta.values(e)
    assert np.all(np.abs(v) <= eta.bound)
    # pathwise: int eta^2 d<B> <= sigma_hi^2 int eta^2 dt
    assert np.all(qv_integral(GridProcess(lambda p: v ** 2), e).final
                  <= 4.0 * bochner_integral(GridProcess(lambda p: v ** 2), e).final * (1 + 1e-12))
