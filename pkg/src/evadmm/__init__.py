"""Distributed EV fleet charging via an exchange ADMM loop.

An aggregator and N vehicles each solve a small local (MI)QP per iteration;
a coordinator averages their power profiles, prices the mismatch through a
dual variable, and stops on primal/dual residual tolerances.
"""

from .scenario import (
    TimeGrid, EvSpec, Tariff, AggregatorSpec, Scenario, AdmmConfig, Schedule,
    Objective, UpdateMode, ConstraintModel, default_scenario_params,
    default_tariff, validate, feasibility_check, energy_trajectory,
)
from .qp import QpProblem, QpSolution, QpStatus, solve_qp
from .miqp import MiqpProblem, MiqpSolution, MiqpStatus, solve_miqp, enumerate_binaries

__version__ = "0.1.0"
