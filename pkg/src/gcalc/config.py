"""Experiment configuration: a YAML file validated against a closed schema.

Unknown keys are errors.  See ``README.md`` for the full key list.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError

SUITES = ("axioms", "integrals", "stopping", "ito", "pde")
PHI_NAMES = ("x2", "x3", "sin", "gauss", "affine", "cos")
PAYOFF_NAMES = ("square", "neg_square", "call", "constant")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BandSpec(_Strict):
    sigma_lo: float = 1.0
    sigma_hi: float = 2.0

    @model_validator(mode="after")
    def _ordered(self):
        if not (0 <= self.sigma_lo <= self.sigma_hi and self.sigma_hi > 0):
            raise ValueError("need 0 <= sigma_lo <= sigma_hi and sigma_hi > 0")
        return self


class GridSpec(_Strict):
    horizon: float = Field(1.0, gt=0)
    n_steps: int = Field(64, ge=1)


class ControlSpec(_Strict):
    n_constant: int = Field(11, ge=1)
    feedback: bool = True


class SeedSpec(_Strict):
    master_seed: int = Field(20240601, ge=0, lt=2**64)
    common_random_numbers: bool = True


class AxiomSuite(_Strict):
    n_paths: int = Field(256, ge=2)
    n_pairs: int = Field(10_000, ge=1)


class IntegralSuite(_Strict):
    n_paths: int = Field(10_000, ge=2)
    n_processes: int = Field(100, ge=1)
    moment_paths: int = Field(100_000, ge=2)
    tail_levels: List[float] = [1.0, 2.0, 4.0, 8.0]
    tail_limit: float = Field(1e-3, gt=0)
    stat_k: float = Field(3.0, gt=0)
    exact_tol: float = Field(1e-10, gt=0)


class StoppingSuite(_Strict):
    n_paths: int = Field(1000, ge=2)
    # Off the dyadic mesh on purpose, so every dyadic level has work to do.
    n_steps: int = Field(750, ge=1)
    n_pairs: int = Field(1000, ge=1)
    dyadic_levels: List[int] = list(range(1, 11))
    stat_k: float = Field(3.0, gt=0)


class ItoSuite(_Strict):
    n_paths: int = Field(800, ge=2)
    levels: List[int] = [128, 256, 512, 1024, 2048]
    phis: List[str] = ["x2", "x3", "sin", "gauss"]
    order_range: Tuple[float, float] = (0.35, 0.65)
    remainder_levels: List[int] = [32, 64, 128, 256, 512]
    localization_level: float = Field(2.0, gt=0)
    exact_tol: float = Field(1e-10, gt=0)
    stat_k: float = Field(3.0, gt=0)

    @field_validator("phis")
    @classmethod
    def _known_phis(cls, v):
        bad = [p for p in v if p not in PHI_NAMES]
        if bad:
            raise ValueError(f"unknown phi {bad}; choose from {list(PHI_NAMES)}")
        return v

    @field_validator("levels", "remainder_levels")
    @classmethod
    def _nested(cls, v):
        v = sorted(v)
        if len(v) < 2 or any(b % a for a, b in zip(v, v[1:])):
            raise ValueError("need at least two nested levels (each divides the next)")
        return v

    @field_validator("order_range")
    @classmethod
    def _range(cls, v):
        if not v[0] < v[1]:
            raise ValueError("order_range must be (low, high) with low < high")
        return v


class PdeSuite(_Strict):
    n_paths: int = Field(100_000, ge=2)
    n_steps: int = Field(32, ge=1)
    payoffs: List[str] = ["square", "neg_square", "call"]
    dx: float = Field(0.02, gt=0)
    buffer: float = Field(6.0, gt=0)
    scheme_tol: float = Field(2e-3, gt=0)
    closed_form_rtol: float = Field(0.01, gt=0)
    stat_k: float = Field(3.0, gt=0)

    @field_validator("payoffs")
    @classmethod
    def _known(cls, v):
        bad = [p for p in v if p not in PAYOFF_NAMES]
        if bad:
            raise ValueError(f"unknown payoff {bad}; choose from {list(PAYOFF_NAMES)}")
        return v


class ExperimentConfig(_Strict):
    band: BandSpec = BandSpec()
    grid: GridSpec = GridSpec()
    controls: ControlSpec = ControlSpec()
    seed: SeedSpec = SeedSpec()
    suites: List[str] = ["all"]
    strict_statistical: bool = False
    output_dir: Optional[str] = None
    axioms: AxiomSuite = AxiomSuite()
    integrals: IntegralSuite = IntegralSuite()
    stopping: StoppingSuite = StoppingSuite()
    ito: ItoSuite = ItoSuite()
    pde: PdeSuite = PdeSuite()

    @field_validator("suites")
    @classmethod
    def _known_suites(cls, v):
        allowed = set(SUITES) | {"all"}
        bad = [s for s in v if s not in allowed]
        if bad:
            raise ValueError(f"unknown suite {bad}; choose from {sorted(allowed)}")
        if not v:
            raise ValueError("select at least one suite")
        return v

    def selected_suites(self) -> list:
        if "all" in self.suites:
            return list(SUITES)
        return [s for s in SUITES if s in self.suites]


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        lines.append(f"{loc or '<root>'}: {e['msg']}")
    return "; ".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigurationError(f"malformed config: {where}{exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid config: {_format_errors(exc)}") from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
