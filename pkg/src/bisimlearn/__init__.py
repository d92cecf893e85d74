"""Learning stutter-insensitive bisimulation quotients of integer transition systems.

The package synthesises finite quotients of non-deterministic, possibly
infinite-state transition systems over integer vectors by a
counterexample-guided learner/verifier loop over an external SMT solver,
and model checks CTL*-without-next properties on the resulting quotient.
"""

from bisimlearn.core import (
    Pred,
    State,
    SymbolicSystem,
    SystemDefinitionError,
    Term,
    eval_pred,
    eval_term,
)
from bisimlearn.dsl import DslSyntaxError, UnboundedBranchingError, load_system, loads_system
from bisimlearn.smt import Sat, SmtBackend, SmtFormula, SolverBackendError, Unknown, Unsat
from bisimlearn.templates import ClassifierTemplate, ParamAssignment, RankingTemplate
from bisimlearn.cegis import CegisConfig, FailureReport, LearnedBisimulation, run
from bisimlearn.quotient import Quotient, extract
from bisimlearn.checker import Verdict, check, lift, parse_property
from bisimlearn.oracle import ExplicitSystem, Partition, check_partition, coarsest_partition

__version__ = "0.1.0"

__all__ = [
    "CegisConfig",
    "ClassifierTemplate",
    "DslSyntaxError",
    "ExplicitSystem",
    "FailureReport",
    "LearnedBisimulation",
    "ParamAssignment",
    "Partition",
    "Pred",
    "Quotient",
    "RankingTemplate",
    "Sat",
    "SmtBackend",
    "SmtFormula",
    "SolverBackendError",
    "State",
    "SymbolicSystem",
    "SystemDefinitionError",
    "Term",
    "Unknown",
    "Unsat",
    "UnboundedBranchingError",
    "Verdict",
    "check",
    "check_partition",
    "coarsest_partition",
    "eval_pred",
    "eval_term",
    "extract",
    "lift",
    "load_system",
    "loads_system",
    "parse_property",
    "run",
]
