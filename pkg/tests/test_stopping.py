import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcalc.errors import ConfigurationError
from gcalc.integration import GridProcess, ito_integral, random_simple_process
from gcalc.scenarios import (Constant, PathEnsemble, SeedPolicy, TimeGrid, VolatilityBand,
                             bang_bang, generate_ensemble)
from gcalc.stopping import (Deterministic, HittingTime, IntegralThreshold, LocalizationSequence,
                            MinOf, dyadic_l1_gap, dyadic_upper, finite_p_integral,
                            indicator_process, integral_of_stopped, localize,
                            random_stopping_time, stop_time_rows, stopped_identity_gap,
                            stopped_integral, stopped_process)


def _hand_path():
    g = TimeGrid.uniform(1.0, 4)
    db = np.array([[0.5, 0.5, -2.0, 0.25]])
    return PathEnsemble.from_increments(g, db, np.full((1, 4), 0.25))


def test_hitting_time_on_hand_built_path():
    p = _hand_path()  # B = 0, .5, 1, -1, -.75
    assert HittingTime(1.0).index(p)[0] == 2
    assert HittingTime(-0.9, "b", "down").index(p)[0] == 3
    assert HittingTime(5.0).index(p)[0] == 4  # never: tau = T
    assert HittingTime(0.0).index(p)[0] == 0
    assert HittingTime(0.5, "qv").evaluate(p)[0] == 0.5
    assert MinOf(HittingTime(1.0), Deterministic(0.25)).index(p)[0] == 1


def test_deterministic_time_snaps_up():
    p = _hand_path()
    assert Deterministic(0.3).evaluate(p)[0] == 0.5
    assert Deterministic(0.25).evaluate(p)[0] == 0.25
    assert Deterministic(7.0).evaluate(p)[0] == 1.0


def test_integral_threshold():
    p = _hand_path()
    tau = IntegralThreshold(GridProcess(lambda q: np.ones_like(q.b)), 0.6, "dt")
    assert tau.index(p)[0] == 3  # int_0^t 1 ds > 0.6 first at t = 0.75


def test_dyadic_example():
    g = TimeGrid.uniform(1.0, 10)
    p = PathEnsemble.from_increments(g, np.zeros((1, 10)), np.full((1, 10), 0.1))
    assert dyadic_upper(Deterministic(0.3), 2, p)[0] == 0.5
    assert dyadic_upper(Deterministic(0.5), 1, p)[0] == 0.5
    with pytest.raises(ValueError):
        dyadic_upper(Deterministic(0.3), 0, p)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 12), n_steps=st.sampled_from([7, 64, 100]))
def test_dyadic_sandwich(seed, n, n_steps):
    band = VolatilityBand(1.0, 2.0)
    g = TimeGrid.uniform(1.0, n_steps)
    e = generate_ensemble(bang_bang(band, "outside"), g, band, 64, SeedPolicy(seed))
    rng = np.random.default_rng(seed)
    tau = random_stopping_time(rng, 1.0, 2.0, random_simple_process(rng, g))
    gap = dyadic_upper(tau, n, e) - tau.evaluate(e)
    assert np.all(gap >= 0) and np.all(gap <= 2.0 ** -n)


def test_dyadic_l1_gap_bound(small_scenarios):
    tau = HittingTime(1.0, "abs_b")
    for n in (1, 3, 6):
        est = dyadic_l1_gap(tau, n, small_scenarios)
        assert 0 <= est.value <= 2.0 ** -n


def test_indicator_process():
    p = _hand_path()
    v = indicator_process(HittingTime(1.0)).values(p)
    np.testing.assert_array_equal(v[0], [1, 1, 0, 0, 0])
    np.testing.assert_array_equal(indicator_process(HittingTime(9.0)).values(p)[0], 1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_stopped_integral_identity_is_exact(seed):
    band = VolatilityBand(1.0, 2.0)
    g = TimeGrid.uniform(1.0, 40)
    e = generate_ensemble(bang_bang(band, "inside"), g, band, 50, SeedPolicy(seed))
    rng = np.random.default_rng(seed)
    eta = random_simple_process(rng, g)
    tau = random_stopping_time(rng, 1.0, 2.0, eta)
    assert np.max(stopped_identity_gap(eta, tau, e)) == 0.0
    for t in (0.0, 0.5, 1.0):
        assert np.array_equal(stopped_integral(eta, tau, t, e), integral_of_stopped(eta, tau, t, e))


def test_stopped_process_holds_value():
    p = _hand_path()
    x = stopped_process(GridProcess(lambda q: q.b), HittingTime(1.0)).values(p)
    np.testing.assert_array_equal(x[0], [0, 0.5, 1, 1, 1])


def test_localize(band, grid):
    e = generate_ensemble(Constant(2.0), grid, band, 100, SeedPolicy(2))
    eta = GridProcess(lambda q: q.b)
    for rule in ("L1", "L2"):
        taus = [localize(eta, rule, n)[1].index(e) for n in (1, 2, 4, 8)]
        assert all(np.all(a <= b) for a, b in zip(taus, taus[1:]))
    loc, tau = localize(eta, "L2", 1)
    v = loc.values(e)
    k = tau.index(e)
    j = np.arange(grid.n_steps + 1)
    stopped = (j >= k[:, None]) & (k[:, None] < grid.n_steps)
    assert stopped.any() and np.all(v[stopped] == 0)
    with pytest.raises(ConfigurationError):
        localize(eta, "L3", 1)
    with pytest.raises(ValueError):
        localize(eta, "L1", 0.5)


def test_localization_sequence(band, grid):
    e = generate_ensemble(Constant(2.0), grid, band, 100, SeedPolicy(2))
    assert LocalizationSequence.exit_times(0.5).check_increasing(e, range(1, 6))
    assert np.all(LocalizationSequence.horizon(1.0)(3).index(e) == grid.n_steps)
    assert np.all(finite_p_integral(GridProcess(lambda q: q.b), 2, e))


def test_stop_time_rows(band, grid):
    e = generate_ensemble(Constant(1.0), grid, band, 3, SeedPolicy())
    rows = stop_time_rows(HittingTime(0.5, "abs_b"), 3, e)
    assert rows[0] == ("path_id", "tau", "tau_dyadic_3") and len(rows) == 4
    assert all(0 <= d - t <= 1 / 8 for _, t, d in rows[1:])
