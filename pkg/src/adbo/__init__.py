"""Asynchronous distributed bilevel optimization with cutting-plane lower-level constraints."""

import logging

from .cpbo import CpboConfig, CpboSteps, run_cpbo, simulate_cpbo
from .cutplane import CuttingPlane, Polytope
from .engine import DelayModel, RunConfig, RunResult, TraceRow, run_adbo, run_sdbo, simulate_adbo, simulate_sdbo
from .estimators import HyperCleaningClassifier, RegCoefClassifier
from .exceptions import ConfigError, DatasetFormatError, DivergenceError
from .lower_level import LowerConfig, h_eval, h_gradient, h_value, phi_estimate
from .problems import (
    BilevelProblem,
    Dataset,
    HyperCleaning,
    ProblemDims,
    QuadraticToy,
    RegCoef,
    make_hypercleaning,
    make_quadratic_toy,
    make_regcoef,
)
from .saddle import STEP_SIZE_TABLE, PrimalDualState, RegSchedule, StepSizes

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "BilevelProblem",
    "ConfigError",
    "CpboConfig",
    "CpboSteps",
    "CuttingPlane",
    "Dataset",
    "DatasetFormatError",
    "DelayModel",
    "DivergenceError",
    "HyperCleaning",
    "HyperCleaningClassifier",
    "LowerConfig",
    "Polytope",
    "PrimalDualState",
    "ProblemDims",
    "QuadraticToy",
    "RegCoef",
    "RegCoefClassifier",
    "RegSchedule",
    "RunConfig",
    "RunResult",
    "STEP_SIZE_TABLE",
    "StepSizes",
    "TraceRow",
    "h_eval",
    "h_gradient",
    "h_value",
    "make_hypercleaning",
    "make_quadratic_toy",
    "make_regcoef",
    "phi_estimate",
    "run_adbo",
    "run_cpbo",
    "run_sdbo",
    "simulate_adbo",
    "simulate_cpbo",
    "simulate_sdbo",
]
