import pytest

from gcalc.config import load_config, parse_config
from gcalc.errors import ConfigurationError


def test_defaults():
    cfg = parse_config("")
    assert cfg.selected_suites() == ["axioms", "integrals", "stopping", "ito", "pde"]
    assert cfg.band.sigma_hi == 2.0 and cfg.axioms.n_pairs == 10_000


def test_suite_selection_keeps_canonical_order():
    assert parse_config("suites: [pde, axioms]").selected_suites() == ["axioms", "pde"]


@pytest.mark.parametrize("text, needle", [
    ("suites: [bogus]", "unknown suite"),
    ("band:\n  sigma_lo: 3\n  sigma_hi: 2\n", "sigma_lo"),
    ("grid:\n  n_step: 5\n", "grid.n_step"),
    ("ito:\n  levels: [100, 128]\n", "nested"),
    ("ito:\n  phis: [tan]\n", "unknown phi"),
    ("pde:\n  scheme_tol: -1\n", "scheme_tol"),
    ("- 1\n- 2\n", "mapping"),
    ("band: [1\n", "line"),
])
def test_bad_configs(text, needle):
    with pytest.raises(ConfigurationError) as info:
        parse_config(text)
    assert needle in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.yaml")
