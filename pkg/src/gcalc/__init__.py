"""Monte Carlo toolkit for stochastic calculus under G-Brownian motion.

Scenario paths with volatility in a band, sublinear expectations as
suprema over scenarios, Itô integrals, stopping times, the Itô formula
residual and a G-heat equation solver used as an oracle.
"""

from .errors import (AlignmentError, BandViolationError, ConfigurationError, ContractError,
                     EvaluationError, GCalcError)
from .expectation import (ExpectationEstimate, GFunction, PayoffFunctional, ScenarioSet,
                          capacity_estimate, g_eval, gnormal_abs_moment, lower_expectation,
                          sup_expectation)
from .integration import (GridProcess, SimpleProcess, bochner_integral, ito_integral, mp_norm,
                          qv_integral, truncate)
from .ito_formula import SmoothFunction, Semimartingale, residual, verify
from .pde import PdeGrid, cross_validate, solve
from .scenarios import (Constant, PiecewiseDeterministic, SeedPolicy, StateFeedback, TimeGrid,
                        VolatilityBand, default_controls, generate_ensemble, generate_path)
from .stopping import (Deterministic, HittingTime, IntegralThreshold, dyadic_upper, localize,
                       stopped_integral)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BandViolationError",
    "ConfigurationError",
    "Constant",
    "ContractError",
    "Deterministic",
    "EvaluationError",
    "ExpectationEstimate",
    "GCalcError",
    "GFunction",
    "GridProcess",
    "HittingTime",
    "IntegralThreshold",
    "PayoffFunctional",
    "PdeGrid",
    "PiecewiseDeterministic",
    "ScenarioSet",
    "SeedPolicy",
    "Semimartingale",
    "SimpleProcess",
    "SmoothFunction",
    "StateFeedback",
    "TimeGrid",
    "VolatilityBand",
    "bochner_integral",
    "capacity_estimate",
    "cross_validate",
    "default_controls",
    "dyadic_upper",
    "g_eval",
    "generate_ensemble",
    "generate_path",
    "gnormal_abs_moment",
    "ito_integral",
    "localize",
    "lower_expectation",
    "mp_norm",
    "qv_integral",
    "residual",
    "solve",
    "stopped_integral",
    "sup_expectation",
    "truncate",
    "verify",
]
