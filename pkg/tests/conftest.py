"""Shared fixtures: solver discovery and cached learning runs.

Solver-dependent tests are meant to really run; if no SMT solver can be
found the session fails loudly instead of skipping, unless the caller
explicitly opts out by exporting BISIM_ALLOW_NO_SOLVER=1.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest

from bisimlearn.cegis import CegisConfig, LearnedBisimulation, run
from bisimlearn.dsl import load_system
from bisimlearn.quotient import Quotient, extract
from bisimlearn.smt import SmtBackend, SolverBackendError, resolve_solver_command

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"
_SHIM = REPO / "tools" / "z3smt" / "target" / "release" / "z3smt"


def _ensure_solver() -> None:
    if os.environ.get("BISIM_SOLVER"):
        return
    try:
        resolve_solver_command()
    except SolverBackendError:
        if _SHIM.exists():
            os.environ["BISIM_SOLVER"] = str(_SHIM)


_ensure_solver()


@pytest.fixture(scope="session")
def solver_command() -> list[str]:
    try:
        return resolve_solver_command()
    except SolverBackendError as err:
        if os.environ.get("BISIM_ALLOW_NO_SOLVER") == "1":
            pytest.skip(f"no SMT solver available: {err}")
        pytest.fail(
            f"no SMT solver available ({err}); build tools/z3smt or set "
            "BISIM_SOLVER, or export BISIM_ALLOW_NO_SOLVER=1 to skip"
        )


@pytest.fixture()
def backend(solver_command) -> SmtBackend:
    return SmtBackend(solver_command)


@pytest.fixture(scope="session")
def session_backend(solver_command) -> SmtBackend:
    return SmtBackend(solver_command)


@pytest.fixture(scope="session")
def fig5a_system():
    return load_system(FIXTURES / "fig5a.bsys")


@pytest.fixture(scope="session")
def fig5a_learned(fig5a_system, session_backend) -> LearnedBisimulation:
    outcome = run(fig5a_system, CegisConfig(seed=0), session_backend)
    assert isinstance(outcome, LearnedBisimulation), getattr(outcome, "detail", outcome)
    return outcome


@pytest.fixture(scope="session")
def fig5a_quotient(fig5a_system, fig5a_learned, session_backend) -> Quotient:
    return extract(
        fig5a_system,
        fig5a_learned.template,
        fig5a_learned.assignment,
        backend=session_backend,
    )
