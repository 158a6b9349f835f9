"""
Energy tracking: minimize the welfare penalty subject to

    sum_alpha epsilon_alpha rho_alpha(t) = s(t),   t = 1..T.

The constraint is dualized with multipliers xi(t). For fixed xi the inner
problem is the penalized problem with U_alpha(t) = xi(t) epsilon_alpha,
and the outer loop adjusts xi until the ensemble consumption matches s.
"""
from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from . import solvers
from .core import (
    CostSchedule,
    Problem,
    Solution,
    propagate_trajectory,
)
from .exceptions import DimensionError, InfeasibleTargetError, InvalidConfigError
from .general_solver import LambdaSolveConfig

logger = getLogger(__name__)


class OuterMethod(Enum):
    QUASI_NEWTON = "quasi_newton"
    ASCENT = "ascent"


@dataclass(frozen=True)
class TrackerConfig:
    """
    Settings of the outer (dual) loop.

    Parameters
    ----------
    outer_tol: float, optional [1e-6]
        Allowed max_t |consumption(t) - s(t)|.
    max_outer: int, optional [500]
        Budget of outer iterations (inner solves after the first one).
    step: float, optional [0.5]
        Initial step of the "ascent" method, halved whenever the
        max residual increases.
    method: OuterMethod or str, optional ["quasi_newton"]
        "quasi_newton": L-BFGS on the concave dual function.
        "ascent": damped dual gradient ascent
        xi(t) <- xi(t) + step * (consumption(t) - s(t)).
    solver: str, optional
        Inner solver name, see ``solvers.solve``.
    lambda_config: LambdaSolveConfig, optional
        Multiplier solve settings of the general inner solver.
    """

    outer_tol: float = 1e-6
    max_outer: int = 500
    step: float = 0.5
    method: OuterMethod = OuterMethod.QUASI_NEWTON
    solver: Optional[str] = None
    lambda_config: Optional[LambdaSolveConfig] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "method", OuterMethod(self.method))
        except ValueError:
            raise InvalidConfigError(
                "Unknown outer method '{}'; expected one of {}.".format(
                    self.method, [m.value for m in OuterMethod]))

        if not self.outer_tol > 0:
            raise InvalidConfigError("outer_tol must be positive.")

        if self.max_outer < 0:
            raise InvalidConfigError("max_outer must not be negative.")

        if not self.step > 0:
            raise InvalidConfigError("step must be positive.")


@dataclass(frozen=True, eq=False)
class TrackingProblem:
    """
    Tracking problem built on a base problem whose costs are ignored.

    Parameters
    ----------
    base: Problem
        Natural matrix, penalty and initial state.
    epsilon: array_like
        Energy consumed per unit time slot in each state.
    target: array_like
        Requested consumption s(t) for t = 1..T.
    """

    base: Problem
    epsilon: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        epsilon = np.array(self.epsilon, dtype=float)
        target = np.array(self.target, dtype=float)
        if epsilon.shape != (self.base.n,):
            raise DimensionError(
                f"epsilon must have length {self.base.n}, "
                f"got shape {epsilon.shape}.")

        if target.shape != (self.base.T,):
            raise DimensionError(
                f"target must have length {self.base.T}, "
                f"got shape {target.shape}.")

        if not np.all(np.isfinite(epsilon)) or np.any(epsilon < 0.0):
            raise InvalidConfigError(
                "epsilon must be finite and nonnegative.")

        if not np.all(np.isfinite(target)):
            raise InvalidConfigError("target must be finite.")

        epsilon.setflags(write=False)
        target.setflags(write=False)
        object.__setattr__(self, "epsilon", epsilon)
        object.__setattr__(self, "target", target)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def T(self) -> int:
        return self.base.T

    def check_feasibility(self, tol: float = 1e-12) -> None:
        """
        Raise InfeasibleTargetError unless min(epsilon) <= s(t) <= max(epsilon).

        Notes
        -----
        - This is only necessary: consumption is a convex combination of
          epsilon, but not every such combination is reachable.
        """
        lo, hi = float(self.epsilon.min()), float(self.epsilon.max())
        for t, value in enumerate(self.target, start=1):
            if value > hi + tol:
                raise InfeasibleTargetError(
                    f"s({t}) = {value} exceeds max epsilon {hi}.",
                    t=t, value=float(value), bound=hi)

            if value < lo - tol:
                raise InfeasibleTargetError(
                    f"s({t}) = {value} is below min epsilon {lo}.",
                    t=t, value=float(value), bound=lo)


@dataclass(frozen=True, eq=False)
class TrackingResult:
    """
    Outcome of the outer loop.

    Attributes
    ----------
    solution: Solution
        Inner solution at xi_traj.
    xi_traj: ndarray
        Multipliers xi(t), t = 1..T.
    tracking_residuals: ndarray
        |consumption(t) - s(t)|, t = 1..T.
    outer_iterations: int
        Inner solves performed after the initial one.
    converged: bool
        True when every residual is within the outer tolerance.
    residual_history: tuple of float
        Max residual of every inner solve, in order.
    """

    solution: Solution
    xi_traj: np.ndarray
    tracking_residuals: np.ndarray
    outer_iterations: int
    converged: bool
    residual_history: Tuple[float, ...] = ()

    @property
    def max_residual(self) -> float:
        return float(np.max(self.tracking_residuals))


def consumption(rho_traj, epsilon) -> np.ndarray:
    """
    Ensemble consumption sum_alpha epsilon_alpha rho_alpha(t), t = 1..T.
    """
    rho = np.asarray(rho_traj, dtype=float)
    eps = np.asarray(epsilon, dtype=float)
    if rho.ndim != 2 or rho.shape[1] != eps.shape[0]:
        raise DimensionError(
            f"rho_traj {rho.shape} does not match epsilon {eps.shape}.")

    return rho[1:] @ eps


def costs_from_xi(xi_traj, epsilon) -> CostSchedule:
    """
    Cost schedule U_alpha(t) = xi(t) epsilon_alpha, t = 1..T.
    """
    return CostSchedule(np.outer(
        np.asarray(xi_traj, dtype=float), np.asarray(epsilon, dtype=float)))


def _natural_trajectory(tp: TrackingProblem) -> np.ndarray:
    base = tp.base
    P = base.pbar.entries
    return propagate_trajectory(base.rho0, np.repeat(P[None], base.T, 0))


def initial_xi(tp: TrackingProblem) -> np.ndarray:
    """
    First guess of the multipliers from the natural chain.

    Notes
    -----
    - Around xi = 0 a cost xi(t) epsilon changes consumption at t by
      -kappa(t) xi(t), kappa(t) being the rho(t-1)-weighted variance of
      epsilon over the transition columns (weights pbar / gamma). Each
      xi(t) is fitted independently; xi(t) = 0 where kappa(t) vanishes.
    """
    base = tp.base
    P = base.pbar.entries
    natural = _natural_trajectory(tp)
    gap = consumption(natural, tp.epsilon) - tp.target
    weights = P[None] / base.penalty.full_values(base.n)
    mass = weights.sum(axis=1)
    mean = np.einsum("a,tab->tb", tp.epsilon, weights) / mass
    second = np.einsum("a,tab->tb", tp.epsilon ** 2, weights) / mass
    variance = np.clip(second - mean ** 2, 0.0, None)
    kappa = np.einsum("tb,tb->t", natural[:-1], mass * variance)
    xi = np.zeros(base.T)
    usable = kappa > 1e-12
    xi[usable] = gap[usable] / kappa[usable]
    return xi


class _Evaluator(object):
    """
    Runs inner solves and remembers the best iterate.
    """

    def __init__(self, tp: TrackingProblem, config: TrackerConfig,
                 callback: Optional[Callable] = None):
        self.tp = tp
        self.config = config
        self.callback = callback
        self.history: List[float] = []
        self.best = None

    def __call__(self, xi: np.ndarray) -> Tuple[Solution, np.ndarray]:
        prob = self.tp.base.with_costs(costs_from_xi(xi, self.tp.epsilon))
        solution = solvers.solve(
            prob, self.config.solver, self.config.lambda_config)
        residual = consumption(solution.rho_traj, self.tp.epsilon) - \
            self.tp.target
        worst = float(np.max(np.abs(residual)))
        iteration = len(self.history)
        self.history.append(worst)
        logger.debug("Outer iteration {}: max residual {:.3e}".format(
            iteration, worst))
        if self.callback is not None:
            self.callback(iteration, xi.copy(), residual.copy())

        if self.best is None or worst < self.best[0]:
            self.best = (worst, xi.copy(), solution, residual)

        return solution, residual

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    @property
    def converged(self) -> bool:
        return self.best[0] <= self.config.outer_tol


def _ascent(evaluate: _Evaluator) -> None:
    config = evaluate.config
    step = config.step
    worst, xi, _, residual = evaluate.best
    while not evaluate.converged and evaluate.iterations < config.max_outer:
        xi = xi + step * residual
        _, residual = evaluate(xi)
        new_worst = float(np.max(np.abs(residual)))
        if new_worst > worst:
            step *= 0.5
            logger.warning("Residual increased; step halved to {}.".format(
                step))

        worst = new_worst


def _quasi_newton(evaluate: _Evaluator) -> None:
    config = evaluate.config
    target = evaluate.tp.target

    def negative_dual(xi):
        solution, residual = evaluate(xi)
        # dual D(xi) = J*(xi) - xi . s with gradient consumption - s
        return -(solution.objective - xi @ target), -residual

    while not evaluate.converged and evaluate.iterations < config.max_outer:
        start = evaluate.best[0]
        budget = config.max_outer - evaluate.iterations
        result = minimize(
            negative_dual,
            evaluate.best[1],
            jac=True,
            method="L-BFGS-B",
            options={
                "maxiter": budget,
                "maxfun": budget,
                "gtol": config.outer_tol,
                "ftol": np.finfo(float).eps,
                "maxcor": 20,
            })
        logger.debug("L-BFGS stopped: {}".format(result.message))
        if evaluate.best[0] >= start:
            break


def track(
        tp: TrackingProblem,
        config: Optional[TrackerConfig] = None,
        callback: Optional[Callable] = None) -> TrackingResult:
    """
    Find the least-penalized policy whose consumption follows the target.

    Parameters
    ----------
    tp: TrackingProblem
        The tracking problem.
    config: TrackerConfig, optional
        Outer loop settings.
    callback: Callable, optional
        Called as ``callback(iteration, xi, residuals)`` after every
        inner solve.

    Returns
    -------
    TrackingResult
        Best iterate found. Non-convergence is reported through
        ``converged`` rather than raised.

    Notes
    -----
    - InfeasibleTargetError is raised before iterating when s(t) is
      outside [min epsilon, max epsilon].
    - The initial multipliers come from ``initial_xi``. With a uniform or
      per-source penalty a target equal to the natural consumption is
      accepted without outer iterations.
    - ``config.method`` selects the outer update. ``ascent`` is the damped
      dual ascent xi(t) <- xi(t) + step (s_hat(t) - s(t)), with the step
      halved whenever the residual grows. The default ``quasi_newton``
      maximizes the same dual with L-BFGS and needs far fewer inner
      solves; ascent may exhaust max_outer on hard targets.
    """
    config = config or TrackerConfig()
    tp.check_feasibility()
    evaluate = _Evaluator(tp, config, callback)
    xi = initial_xi(tp)
    evaluate(xi)
    natural_gap = np.max(np.abs(
        consumption(_natural_trajectory(tp), tp.epsilon) - tp.target))
    if not evaluate.converged and np.any(xi) and \
            evaluate.best[0] > natural_gap and \
            evaluate.iterations < config.max_outer:
        logger.debug("Initial multipliers rejected; restarting from zero.")
        evaluate(np.zeros(tp.T))

    if not evaluate.converged:
        if config.method is OuterMethod.ASCENT:
            _ascent(evaluate)
        else:
            _quasi_newton(evaluate)

    worst, xi, solution, residual = evaluate.best
    if evaluate.converged:
        logger.debug("Tracking converged after {} iterations.".format(
            evaluate.iterations))
    else:
        logger.warning(
            "Tracking stopped after {} iterations with max residual "
            "{:.3e}.".format(evaluate.iterations, worst))

    return TrackingResult(
        solution=solution,
        xi_traj=xi,
        tracking_residuals=np.abs(residual),
        outer_iterations=evaluate.iterations,
        converged=evaluate.converged,
        residual_history=tuple(evaluate.history))
