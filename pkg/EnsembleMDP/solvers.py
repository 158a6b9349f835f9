from logging import getLogger
from typing import Optional

from . import general_solver, ls_solver
from .core import (
    PenaltyVariant,
    Problem,
    Solution,
    objective_value,
    propagate_trajectory,
)
from .exceptions import InvalidConfigError
from .general_solver import LambdaSolveConfig

logger = getLogger(__name__)

SOLVERS = ("linear", "normalized", "general")

_BY_VARIANT = {
    PenaltyVariant.UNIFORM: "linear",
    PenaltyVariant.PER_SOURCE: "normalized",
    PenaltyVariant.FULL: "general",
}


def solver_for(prob: Problem) -> str:
    """
    Name of the cheapest backward pass able to solve the problem.
    """
    return _BY_VARIANT[prob.penalty.variant]


def solve(
        prob: Problem,
        solver: Optional[str] = None,
        lambda_config: Optional[LambdaSolveConfig] = None) -> Solution:
    """
    Solve a problem with the chosen or the variant-matching solver.

    Parameters
    ----------
    prob: Problem
        The problem.
    solver: str, optional
        "linear", "normalized" or "general". If omitted, the solver is
        chosen by the penalty variant.
    lambda_config: LambdaSolveConfig, optional
        Multiplier solve settings of the general solver.

    Returns
    -------
    Solution
        The solution.

    Notes
    -----
    - Forcing "linear" or "normalized" on a penalty they can not handle
      raises PenaltyVariantError.
    """
    if solver is None:
        solver = solver_for(prob)

    if solver not in SOLVERS:
        raise InvalidConfigError(
            "Unknown solver '{}'; expected one of {}.".format(
                solver, list(SOLVERS)))

    logger.debug("Solving n={} T={} with the {} solver.".format(
        prob.n, prob.T, solver))
    if solver == "general":
        return general_solver.solve(prob, lambda_config)

    if solver == solver_for(prob):
        return ls_solver.solve(prob)

    # forced: normalized on a uniform penalty, or linear that rejects it
    if solver == "linear":
        p_traj, _, phi = ls_solver.backward_linear(prob)
    else:
        p_traj, phi = ls_solver.backward_normalized(prob)

    rho = propagate_trajectory(prob.rho0, p_traj)
    return Solution(
        p_traj=p_traj,
        rho_traj=rho,
        phi_traj=phi,
        objective=objective_value(prob, p_traj),
        solver=solver)
