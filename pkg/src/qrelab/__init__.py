"""Logit-equilibrium solvers, replicator dynamics, and diagnostics for
finite Markov games, with continuous-action samplers and rationality
calibration on top."""

__version__ = "0.1.0"

from .games import (DivergenceError, GameValidationError, JointPolicy,
                    MarkovGame, QEstimate, SoftValueParams, evaluate_joint_q)
from .dynamics import (EvoQREConfig, TemperatureSchedule, TwoTimescaleSchedule,
                       integrate_errd, run_evoqre)
from .oracle import (LogitBRConfig, QRESolution, nash_pure_enumeration,
                     solve_qre_fixed_point, trace_qre_homotopy)

__all__ = [
    "__version__",
    "DivergenceError", "GameValidationError", "JointPolicy", "MarkovGame",
    "QEstimate", "SoftValueParams", "evaluate_joint_q",
    "EvoQREConfig", "TemperatureSchedule", "TwoTimescaleSchedule",
    "integrate_errd", "run_evoqre",
    "LogitBRConfig", "QRESolution", "nash_pure_enumeration",
    "solve_qre_fixed_point", "trace_qre_homotopy",
]
