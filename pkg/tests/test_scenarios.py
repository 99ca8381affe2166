import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcalc.errors import AlignmentError, BandViolationError, ConfigurationError
from gcalc.scenarios import (Constant, PathEnsemble, PiecewiseDeterministic, SeedPolicy,
                             StateFeedback, TimeGrid, VolatilityBand, bang_bang, default_controls,
                             generate_ensemble, generate_path)


def test_band_rejects_bad_order():
    with pytest.raises(ConfigurationError):
        VolatilityBand(2.0, 1.0)


def test_uniform_grid_endpoints():
    g = TimeGrid.uniform(1.5, 7)
    assert g.points[0] == 0.0 and g.points[-1] == 1.5
    assert g.n_steps == 7
    assert np.all(np.diff(g.points) > 0)


def test_index_of_requires_grid_point():
    g = TimeGrid.uniform(1.0, 8)
    assert g.index_of(0.25) == 2
    with pytest.raises(AlignmentError):
        g.index_of(0.3)


def test_subsample_nests():
    g = TimeGrid.uniform(1.0, 16)
    c = g.subsample(4)
    assert c.n_steps == 4 and g.nests(c)
    with pytest.raises(ConfigurationError):
        g.subsample(3)


def test_qv_at_horizon_is_exact_for_sigma_hi(band):
    # dyadic grid and horizon: every dqv is exact, so the sum is too
    g = TimeGrid.uniform(1.0, 64)
    e = generate_ensemble(Constant(2.0), g, band, 10, SeedPolicy(1))
    assert np.all(e.qv[:, -1] == 4.0)


def test_qv_within_band(band):
    g = TimeGrid.uniform(1.0, 50)
    for c in default_controls(band):
        e = generate_ensemble(c, g, band, 64, SeedPolicy(2))
        assert np.all(np.diff(e.qv, axis=1) >= 0)
        t = g.points
        assert np.all(e.qv <= band.sigma_hi ** 2 * t * (1 + 1e-12))
        assert np.all(e.qv >= band.sigma_lo ** 2 * t * (1 - 1e-12))


def test_control_outside_band_raises(band):
    with pytest.raises(BandViolationError):
        generate_ensemble(Constant(2.5), TimeGrid.uniform(1.0, 4), band, 4, SeedPolicy())
    rogue = StateFeedback(lambda t, x: np.where(x > 0.5, 3.0, 1.0), "rogue")
    with pytest.raises(BandViolationError):
        generate_ensemble(rogue, TimeGrid.uniform(1.0, 64), band, 256, SeedPolicy())


def test_paths_do_not_depend_on_ensemble_size_or_jobs(band, grid):
    ctrl = bang_bang(band, "positive")
    big = generate_ensemble(ctrl, grid, band, 700, SeedPolicy(11))
    small = generate_ensemble(ctrl, grid, band, 300, SeedPolicy(11))
    split = generate_ensemble(ctrl, grid, band, 700, SeedPolicy(11), jobs=3)
    assert np.array_equal(big.b[:300], small.b)
    assert np.array_equal(big.b, split.b)
    tail = generate_ensemble(ctrl, grid, band, 200, SeedPolicy(11), start=500)
    assert np.array_equal(big.b[500:], tail.b)


def test_single_path_matches_ensemble_row(band, grid):
    e = generate_ensemble(Constant(1.5), grid, band, 20, SeedPolicy(3))
    p = generate_path(Constant(1.5), grid, band, SeedPolicy(3), path_index=13)
    assert np.array_equal(p.b, e.b[13])


def test_common_random_numbers_share_normals(band, grid):
    a = generate_ensemble(Constant(1.0), grid, band, 50, SeedPolicy(5))
    b = generate_ensemble(Constant(2.0), grid, band, 50, SeedPolicy(5), control_index=3)
    np.testing.assert_allclose(b.db, 2.0 * a.db, rtol=1e-15)
    c = generate_ensemble(Constant(2.0), grid, band, 50, SeedPolicy(5, False), control_index=3)
    assert not np.allclose(c.db, b.db)


def test_piecewise_control_schedule(band):
    g = TimeGrid.uniform(1.0, 4)
    c = PiecewiseDeterministic([0.5], [1.0, 2.0])
    e = generate_ensemble(c, g, band, 3, SeedPolicy())
    assert np.array_equal(e.sigma[0], [1.0, 1.0, 2.0, 2.0])


def test_constant_control_variance(band):
    # oracle: B_1 ~ N(0, sigma^2) under a constant control
    g = TimeGrid.uniform(1.0, 8)
    e = generate_ensemble(Constant(1.5), g, band, 40_000, SeedPolicy(9))
    x = e.b[:, -1]
    se = math.sqrt(2 * 1.5 ** 4 / x.size)
    assert abs(x.var() - 2.25) < 4 * se
    assert abs(x.mean()) < 4 * 1.5 / math.sqrt(x.size)


@settings(max_examples=25, deadline=None)
@given(factor=st.sampled_from([1, 2, 4, 8]), seed=st.integers(0, 2**32))
def test_subsampled_paths_keep_values(factor, seed):
    band = VolatilityBand(1.0, 2.0)
    g = TimeGrid.uniform(1.0, 32)
    e = generate_ensemble(bang_bang(band, "negative"), g, band, 4, SeedPolicy(seed))
    c = e.subsample(factor)
    np.testing.assert_allclose(c.b, e.b[:, ::factor], atol=1e-12)
    np.testing.assert_allclose(c.qv, e.qv[:, ::factor], atol=1e-12)
    np.testing.assert_allclose(c.db.sum(axis=1), e.db.sum(axis=1), atol=1e-12)


def test_from_increments_roundtrip(band, grid):
    e = generate_ensemble(Constant(1.2), grid, band, 5, SeedPolicy())
    r = PathEnsemble.from_increments(grid, e.db, e.dqv)
    assert np.array_equal(r.b, e.b) and np.array_equal(r.qv, e.qv)


def test_path_csv_rows(band, grid):
    p = generate_path(Constant(1.0), grid, band, SeedPolicy())
    rows = p.to_csv_rows()
    assert rows[0] == ("t", "b", "qv") and len(rows) == grid.n_steps + 2


def test_seed_policy_rejects_negative():
    with pytest.raises(ConfigurationError):
        SeedPolicy(-1)
