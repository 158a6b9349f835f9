"""
Backward-forward solvers for the analytically normalizable penalties.

- UNIFORM gamma(t): the linearly solvable case, solved with the linear
  recursion of the desirability u = exp(-phi / gamma).
- PER_SOURCE gamma(t, source): explicit normalization of every column,
  solved with a log-sum-exp recursion of the value function.
"""
from dataclasses import dataclass
from logging import DEBUG, getLogger
from typing import Tuple

import numpy as np
from scipy.special import logsumexp

from .core import (
    PenaltyVariant,
    Problem,
    Solution,
    objective_value,
    propagate_trajectory,
)
from .exceptions import PenaltyVariantError

logger = getLogger(__name__)

# Largest n * T for which solve() cross-checks the linear recursion
# against the log-sum-exp recursion when DEBUG logging is enabled.
DEBUG_CHECK_SIZE = 2000


@dataclass(frozen=True, eq=False)
class DesirabilityTrajectory:
    """
    Desirability u_alpha(tau) = exp(-phi_alpha(tau) / gamma(tau)).

    Attributes
    ----------
    log_u: ndarray
        (T + 1, n) logarithms of the desirability, always finite.

    Notes
    -----
    - gamma(T) is taken to be gamma(T - 1).
    - ``values`` underflows for long horizons or small gamma, and so
      can ``scaled`` when a row spans more than the float range;
      ``log_values`` stays exact.
    """

    log_u: np.ndarray

    @property
    def log_scale(self) -> np.ndarray:
        return self.log_u.max(axis=1)

    @property
    def scaled(self) -> np.ndarray:
        """
        Rows divided by their maximum, which becomes 1.
        """
        return np.exp(self.log_u - self.log_scale[:, None])

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_u)

    def log_values(self) -> np.ndarray:
        return self.log_u.copy()


def desirability_step(u_next, pbar, U_t, gamma_t: float) -> np.ndarray:
    """
    One backward step of the linear recursion.

    Parameters
    ----------
    u_next: array_like
        Desirability u(tau + 1).
    pbar: StochasticMatrix or array_like
        Natural transition matrix.
    U_t: array_like
        Cost vector U(., tau).
    gamma_t: float
        Penalty weight gamma(tau).

    Returns
    -------
    ndarray
        u_alpha(tau) = exp(-U_alpha / gamma) sum_beta u_beta pbar(beta, alpha).
    """
    P = np.asarray(pbar, dtype=float)
    return np.exp(-np.asarray(U_t, dtype=float) / gamma_t) * \
        (P.T @ np.asarray(u_next, dtype=float))


def _normalized_step(
        phi_next: np.ndarray,
        U_t: np.ndarray,
        gamma_src: np.ndarray,
        P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # exponent[beta, alpha] = -phi_beta(tau + 1) / gamma_alpha(tau)
    exponent = -phi_next[:, None] / gamma_src[None, :]
    log_z = logsumexp(exponent, axis=0, b=P)
    with np.errstate(divide="ignore"):
        log_P = np.log(P)

    # zeros of P stay exact zeros even where the exponent overflows
    p_t = np.exp(log_P + exponent - log_z[None, :])
    phi_t = -gamma_src * log_z + U_t
    return p_t, phi_t


def backward_linear(
        prob: Problem,
) -> Tuple[np.ndarray, DesirabilityTrajectory, np.ndarray]:
    """
    Backward pass of the linearly solvable problem (uniform gamma).

    Parameters
    ----------
    prob: Problem
        Problem with a UNIFORM penalty schedule.

    Returns
    -------
    (ndarray, DesirabilityTrajectory, ndarray)
        p_traj (T, n, n), the desirability trajectory and phi (T + 1, n).

    Notes
    -----
    - log u is stored, and each linear step works on u divided by its
      maximum. p is a ratio of desirabilities so it is unchanged by the
      rescaling, and phi = -gamma log u stays exact.
    - When gamma changes between steps, u(tau + 1) is re-expressed in
      units of gamma(tau) before the linear step.
    """
    if prob.penalty.variant is not PenaltyVariant.UNIFORM:
        raise PenaltyVariantError(
            "backward_linear needs a uniform penalty, got {}.".format(
                prob.penalty.variant.value))

    gamma = prob.penalty.uniform_values()
    P = prob.pbar.entries
    T, n = prob.T, prob.n
    p_traj = np.empty((T, n, n))
    phi = np.empty((T + 1, n))
    log_u = np.empty((T + 1, n))

    phi[T] = prob.costs.at(T)
    log_u[T] = -phi[T] / gamma[T - 1]

    for tau in range(T - 1, -1, -1):
        g = gamma[tau]
        U_t = prob.costs.at(tau)
        if g == gamma[min(tau + 1, T - 1)]:
            log_w = log_u[tau + 1]
        else:
            log_w = -phi[tau + 1] / g

        shift = log_w.max()
        w = np.exp(log_w - shift)

        z = P.T @ w
        if np.any(z <= 0.0):
            logger.warning(
                "Desirability underflow at tau={}; "
                "using the log-sum-exp step.".format(tau))
            p_traj[tau], phi[tau] = _normalized_step(
                phi[tau + 1], U_t, np.full(n, g), P)
            log_u[tau] = -phi[tau] / g
        else:
            p_traj[tau] = P * w[:, None] / z[None, :]
            # log of desirability_step(w, P, U_t, g), shifted back
            log_u[tau] = np.log(z) - U_t / g + shift
            phi[tau] = -g * log_u[tau]

    return p_traj, DesirabilityTrajectory(log_u), phi


def backward_normalized(prob: Problem) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backward pass for gamma depending on the source state only.

    Parameters
    ----------
    prob: Problem
        Problem with a PER_SOURCE (or UNIFORM) penalty schedule.

    Returns
    -------
    (ndarray, ndarray)
        p_traj (T, n, n) and phi (T + 1, n).

    Notes
    -----
    - phi_alpha(tau) = -gamma_alpha log(sum_beta exp(-phi_beta(tau + 1)
      / gamma_alpha) pbar(beta, alpha)) + U_alpha(tau), evaluated with
      a log-sum-exp per column.
    """
    if prob.penalty.variant is PenaltyVariant.FULL:
        raise PenaltyVariantError(
            "backward_normalized can not handle a full penalty; "
            "use general_solver.solve.")

    gamma = prob.penalty.per_source_values(prob.n)
    P = prob.pbar.entries
    T, n = prob.T, prob.n
    p_traj = np.empty((T, n, n))
    phi = np.empty((T + 1, n))
    phi[T] = prob.costs.at(T)
    for tau in range(T - 1, -1, -1):
        p_traj[tau], phi[tau] = _normalized_step(
            phi[tau + 1], prob.costs.at(tau), gamma[tau], P)

    return p_traj, phi


def solve(prob: Problem) -> Solution:
    """
    Solve a problem with a UNIFORM or PER_SOURCE penalty.

    Parameters
    ----------
    prob: Problem
        The problem.

    Returns
    -------
    Solution
        Optimal trajectories; lambda_traj is not set.

    Notes
    -----
    - FULL penalties raise PenaltyVariantError, use general_solver.solve.
    """
    variant = prob.penalty.variant
    if variant is PenaltyVariant.UNIFORM:
        p_traj, _, phi = backward_linear(prob)
        name = "linear"
        if logger.isEnabledFor(DEBUG) and \
                prob.n * prob.T <= DEBUG_CHECK_SIZE:
            _, phi_check = backward_normalized(prob)
            gap = float(np.max(np.abs(phi - phi_check)))
            logger.debug(
                "Linear vs log-sum-exp recursion: max |dphi| = {:.3e}".format(
                    gap))
            assert np.allclose(phi, phi_check, rtol=1e-9, atol=1e-9), gap

    elif variant is PenaltyVariant.PER_SOURCE:
        p_traj, phi = backward_normalized(prob)
        name = "normalized"
    else:
        raise PenaltyVariantError(
            "ls_solver can not handle a full penalty; "
            "use general_solver.solve.")

    rho = propagate_trajectory(prob.rho0, p_traj)
    return Solution(
        p_traj=p_traj,
        rho_traj=rho,
        phi_traj=phi,
        objective=objective_value(prob, p_traj),
        solver=name)
