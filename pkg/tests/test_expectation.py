import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from gcalc.errors import ConfigurationError
from gcalc.expectation import (GFunction, PayoffFunctional, ScenarioSet, capacity_estimate,
                               g_eval, gnormal_abs_moment, iter_ensembles, reduce_samples,
                               stream_samples, sup_expectation)
from gcalc.scenarios import Constant, SeedPolicy, TimeGrid, VolatilityBand, default_controls
from gcalc.suites import check_axioms, path_features, quantize


@given(a=st.floats(-1e6, 1e6), lo=st.floats(0, 3), width=st.floats(0, 3))
def test_g_is_sup_over_band(a, lo, width):
    # oracle: G(a) = sup over sigma in the band of sigma^2 a / 2
    band = VolatilityBand(lo, lo + width + 1e-3)
    expect = max(0.5 * band.sigma_lo ** 2 * a, 0.5 * band.sigma_hi ** 2 * a)
    assert g_eval(GFunction(band), a) == pytest.approx(expect, rel=1e-12, abs=1e-300)


def test_g_vectorised():
    g = GFunction(VolatilityBand(1.0, 2.0))
    np.testing.assert_array_equal(g(np.array([-2.0, 0.0, 1.0])), [-1.0, 0.0, 2.0])


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, 4.0])
def test_gnormal_moment_against_quadrature(p):
    # oracle: numerical integral of |x|^p against the N(0, sigma_hi^2) density
    band = VolatilityBand(1.0, 2.0)
    val, _ = integrate.quad(lambda x: abs(x) ** p * norm.pdf(x, scale=2.0), -np.inf, np.inf)
    assert gnormal_abs_moment(p, band) == pytest.approx(val, rel=1e-9)


def test_gnormal_moment_known_values():
    band = VolatilityBand(1.0, 2.0)
    assert gnormal_abs_moment(1, band) == pytest.approx(2 * math.sqrt(2 / math.pi))
    assert gnormal_abs_moment(2, band) == pytest.approx(4.0)
    assert gnormal_abs_moment(4, band) == pytest.approx(48.0)
    with pytest.raises(ValueError):
        gnormal_abs_moment(0.5, band)


def test_reduce_samples_picks_largest_mean():
    tab = np.array([[1.0, 3.0], [5.0, 5.0], [0.0, 2.0]])
    up = reduce_samples(tab, ["a", "b", "c"])
    low = reduce_samples(tab, ["a", "b", "c"], "lower")
    assert (up.value, up.argmax_control_id) == (5.0, "b")
    assert (low.value, low.argmax_control_id) == (1.0, "c")
    assert json.loads(up.to_json())["argmax_control_id"] == "b"
    assert up.table_rows()[0] == ("control_id", "mean", "std_error")
    with pytest.raises(ConfigurationError):
        reduce_samples(np.zeros((0, 3)), [])


def test_second_moment_under_band(small_scenarios):
    est = small_scenarios.expectation(lambda e: e.b[:, -1] ** 2)
    low = small_scenarios.lower_expectation(lambda e: e.b[:, -1] ** 2)
    assert abs(est.value - 4.0) < 4 * est.std_error
    assert abs(low.value - 1.0) < 4 * low.std_error
    assert est.argmax_control_id == "const(2)"


def test_lower_is_minus_upper_of_negative(small_scenarios):
    X = lambda e: np.sin(e.b[:, -1]) + e.qv[:, -1]
    low = small_scenarios.lower_expectation(X)
    up = small_scenarios.expectation(lambda e: -X(e))
    assert low.value == -up.value
    assert low.value <= small_scenarios.expectation(X).value


def test_capacity_matches_gaussian_tail(band):
    # oracle: under sigma_hi, P(|B_1| > 2) = 2 (1 - Phi(1))
    g = TimeGrid.uniform(1.0, 4)
    est = capacity_estimate(lambda e: np.abs(e.b[:, -1]) > 2.0, default_controls(band), g, band,
                            20_000, SeedPolicy(4))
    assert abs(est.value - 2 * norm.sf(1.0)) < 4 * est.std_error
    assert 0.0 <= est.value <= 1.0


def test_streaming_matches_scenario_set(band, grid, small_scenarios):
    X = lambda e: np.maximum(e.b[:, -1], 0)
    a = small_scenarios.expectation(X)
    b = sup_expectation(X, default_controls(band), grid, band, 512, SeedPolicy(7))
    assert a.value == b.value and a.argmax_control_id == b.argmax_control_id
    (tab,), ids = stream_samples([X], default_controls(band), grid, band, 512, SeedPolicy(7))
    assert ids == small_scenarios.control_ids
    assert len(list(iter_ensembles(default_controls(band), grid, band, 8))) == 15


def test_payoff_functional_horizon(band):
    g = TimeGrid.uniform(1.0, 8)
    scen = ScenarioSet([Constant(1.0)], g, band, 16, SeedPolicy())
    e = scen.ensembles[0]
    X = PayoffFunctional.terminal(lambda x: x, horizon=0.5)
    np.testing.assert_array_equal(X(e), e.b[:, 4])
    Y = X + PayoffFunctional.terminal(lambda x: 2 * x)
    np.testing.assert_allclose(Y(e), e.b[:, 4] + 2 * e.b[:, -1])
    assert scen.expectation(PayoffFunctional.constant(3.0)).value == 3.0
    with pytest.raises(ConfigurationError):
        PayoffFunctional(lambda w: w.b[..., -1], horizon=2.0)(e)


# -- axioms, exactly --------------------------------------------------------------


@pytest.fixture(scope="module")
def features(small_scenarios):
    return np.stack([path_features(e) for e in small_scenarios])


def _sup(tab, ids):
    return reduce_samples(tab, ids).value


weights = st.lists(st.floats(-2, 2), min_size=36, max_size=36).map(np.array)


@settings(max_examples=60, deadline=None)
@given(wx=weights, wy=weights, k=st.integers(0, 64), c=st.floats(-100, 100))
def test_axioms_hold_exactly(small_scenarios, features, wx, wy, k, c):
    ids = small_scenarios.control_ids
    X = quantize(features @ wx)
    Y = quantize(features @ wy)
    lam = k / 16
    c = float(quantize(c))
    ex, ey = _sup(X, ids), _sup(Y, ids)
    assert _sup(X + np.abs(Y), ids) >= ex
    assert _sup(np.full_like(X, c), ids) == c
    assert _sup(X + Y, ids) <= ex + ey
    assert _sup(lam * X, ids) == lam * ex


def test_check_axioms_counts_zero(small_scenarios):
    bad = check_axioms(small_scenarios, 300, np.random.default_rng(0))
    assert bad == {"monotonicity": 0, "constant": 0, "subadditivity": 0, "homogeneity": 0}


def test_subadditivity_is_strict_for_opposite_bets(small_scenarios):
    # B_1^2 and -B_1^2 peak on different scenarios: E[X] + E[-X] > 0 = E[0]
    X = lambda e: e.b[:, -1] ** 2
    up = small_scenarios.expectation(X).value
    down = small_scenarios.expectation(lambda e: -X(e)).value
    assert up + down > 2.0
