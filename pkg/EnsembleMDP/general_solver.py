"""
Backward-forward solver for the general transition-weighted penalty.

Every source column alpha of p(tau) solves

    min_p  sum_beta phi_beta(tau + 1) p_beta
           + sum_beta gamma_beta p_beta log(p_beta / pbar_beta)
    s.t.   sum_beta p_beta = 1,

whose KKT solution is p_beta = pbar_beta exp(-1 - (phi_beta - lambda) / gamma_beta)
with the multiplier lambda fixed by the normalization.
"""
from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp, rel_entr

from .core import (
    Problem,
    Solution,
    kl_column_cost,
    objective_value,
    propagate_trajectory,
)
from .exceptions import (
    ConvergenceError,
    DimensionError,
    InvalidConfigError,
    SupportViolationError,
)

logger = getLogger(__name__)


class LambdaMethod(Enum):
    BISECTION_NEWTON = "bisection_newton"
    GRADIENT_DESCENT = "gradient_descent"
    DIRECT_CONVEX = "direct_convex"


@dataclass(frozen=True)
class LambdaSolveConfig:
    """
    Settings of the per-column multiplier solve.

    Parameters
    ----------
    method: LambdaMethod or str, optional ["bisection_newton"]
        - "bisection_newton": safeguarded Newton inside a bisection bracket.
        - "gradient_descent": fixed-step iteration
          lambda <- lambda - step * (sum_beta p_beta(lambda) - 1).
        - "direct_convex": mirror descent on the column objective.
    tol: float, optional [1e-10]
        Allowed |sum_beta p_beta - 1|.
    max_iter: int, optional [10000]
        Iteration budget per column.
    step: float, optional [0.1]
        Step of the gradient_descent method.
    """

    method: LambdaMethod = LambdaMethod.BISECTION_NEWTON
    tol: float = 1e-10
    max_iter: int = 10_000
    step: float = 0.1

    def __post_init__(self):
        try:
            object.__setattr__(self, "method", LambdaMethod(self.method))
        except ValueError:
            raise InvalidConfigError(
                "Unknown lambda method '{}'; expected one of {}.".format(
                    self.method, [m.value for m in LambdaMethod]))

        if not self.tol > 0:
            raise InvalidConfigError("tol must be positive.")

        if self.max_iter < 1:
            raise InvalidConfigError("max_iter must be at least 1.")

        if not self.step > 0:
            raise InvalidConfigError("step must be positive.")


def _on_support(phi_next, gamma_col, pbar_col):
    pbar = np.asarray(pbar_col, dtype=float)
    phi = np.asarray(phi_next, dtype=float)
    if pbar.ndim != 1 or phi.shape != pbar.shape:
        raise DimensionError(
            f"phi_next {phi.shape} and pbar_col {pbar.shape} "
            "must be vectors of the same length.")

    gamma = np.broadcast_to(np.asarray(gamma_col, dtype=float), pbar.shape)
    support = pbar > 0.0
    if not support.any():
        raise SupportViolationError("The natural column has empty support.")

    if np.any(gamma[support] <= 0.0):
        raise InvalidConfigError(
            "gamma must be positive on the support of pbar.")

    return support, phi[support], gamma[support], pbar[support]


def _initial_lambda(phi, gamma, pbar) -> float:
    # exact when gamma is constant over the column
    g = gamma.mean()
    return float(g * (1.0 - logsumexp(-phi / g, b=pbar)))


def _log_normalization(lam, phi, gamma, log_pbar) -> Tuple[float, float]:
    # h(lambda) = log sum_beta p_beta(lambda), increasing and convex
    a = log_pbar - 1.0 - (phi - lam) / gamma
    h = logsumexp(a)
    dh = float(np.sum(np.exp(a - h) / gamma))
    return float(h), dh


def kkt_transition_column(phi_next, lam: float, gamma_col, pbar_col) -> np.ndarray:
    """
    Transition column given by the KKT conditions for a multiplier.

    Parameters
    ----------
    phi_next: array_like
        Value function phi(tau + 1) over destinations.
    lam: float
        Lagrange multiplier of the column.
    gamma_col: array_like or float
        Penalty weights over destinations.
    pbar_col: array_like
        Natural distribution over destinations.

    Returns
    -------
    ndarray
        pbar_beta exp(-1 - (phi_beta - lam) / gamma_beta), zero off the
        support of pbar_col. Sums to 1 only for the right multiplier.
    """
    support, phi, gamma, pbar = _on_support(phi_next, gamma_col, pbar_col)
    p = np.zeros(support.shape)
    p[support] = pbar * np.exp(-1.0 - (phi - lam) / gamma)
    return p


def _lambda_newton(phi, gamma, pbar, cfg: LambdaSolveConfig):
    log_pbar = np.log(pbar)
    lam = _initial_lambda(phi, gamma, pbar)
    h, dh = _log_normalization(lam, phi, gamma, log_pbar)
    if abs(np.expm1(h)) <= cfg.tol:
        return lam, 0

    # Bracket the root by doubling away from the initial guess.
    width = float(gamma.max())
    lo = hi = lam
    if h > 0:
        while True:
            lo -= width
            width *= 2.0
            if _log_normalization(lo, phi, gamma, log_pbar)[0] < 0:
                break
    else:
        while True:
            hi += width
            width *= 2.0
            if _log_normalization(hi, phi, gamma, log_pbar)[0] > 0:
                break

    for iteration in range(1, cfg.max_iter + 1):
        candidate = lam - h / dh
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)

        lam = candidate
        h, dh = _log_normalization(lam, phi, gamma, log_pbar)
        if abs(np.expm1(h)) <= cfg.tol:
            return lam, iteration

        if h > 0:
            hi = lam
        else:
            lo = lam

        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(lam)):
            break

    raise ConvergenceError(
        "Newton/bisection stopped with residual {:.3e}.".format(
            float(np.expm1(h))),
        residual=float(np.expm1(h)), iterations=iteration)


def _lambda_gradient(phi, gamma, pbar, cfg: LambdaSolveConfig):
    log_pbar = np.log(pbar)
    lam = _initial_lambda(phi, gamma, pbar)
    residual = np.nan
    for iteration in range(cfg.max_iter + 1):
        residual = float(np.expm1(
            _log_normalization(lam, phi, gamma, log_pbar)[0]))
        if not np.isfinite(residual):
            break

        if abs(residual) <= cfg.tol:
            return lam, iteration

        lam -= cfg.step * residual

    raise ConvergenceError(
        "Gradient iteration (step {}) stopped with residual {:.3e}.".format(
            cfg.step, residual),
        residual=residual, iterations=iteration)


def _column_objective(p, phi, gamma, pbar) -> float:
    return float(p @ phi + np.sum(gamma * rel_entr(p, pbar)))


def _newton_polish(
        x, lam, phi, gamma, log_pbar, tol: float, max_iter: int = 50):
    # Newton on the stationarity system in (log p, lam) restricted to the
    # support: phi + gamma (1 + x - log pbar) - lam = 0, sum exp(x) = 1.
    floor = 16.0 * np.finfo(float).eps * max(
        1.0, abs(lam), float(np.max(np.abs(phi))), float(np.max(gamma)))
    tol = max(tol, floor)
    for iteration in range(1, max_iter + 1):
        F = phi + gamma * (1.0 + x - log_pbar) - lam
        p = np.exp(x)
        G = p.sum() - 1.0
        if np.max(np.abs(F)) <= tol and abs(G) <= tol:
            return x, lam, iteration - 1

        w = p / gamma
        dlam = (np.sum(w * F) - G) / w.sum()
        x = x + (dlam - F) / gamma
        lam += dlam

    F = phi + gamma * (1.0 + x - log_pbar) - lam
    residual = max(
        float(np.max(np.abs(F))), abs(float(np.exp(x).sum() - 1.0)))
    raise ConvergenceError(
        "Newton refinement stopped with stationarity residual {:.3e}.".format(
            residual),
        residual=residual, iterations=max_iter)


def _mirror_descent(phi, gamma, pbar, tol: float, max_iter: int):
    """
    Exponentiated-gradient minimization of the column objective.

    The descent runs until the stationarity residual is below a coarse
    threshold, then a few Newton steps on the stationarity system bring
    it below ``tol``. Returns (p, lam, iterations) on the support, where
    lam is the multiplier of the stationarity condition.
    """
    if phi.shape[0] == 1:
        p = np.ones(1)
        return p, float(phi[0] + gamma[0] * (1.0 - np.log(pbar[0]))), 0

    tiny = np.finfo(float).tiny
    coarse = max(tol, 1e-4 * float(gamma.min()))
    p = pbar.copy()
    f = _column_objective(p, phi, gamma, pbar)
    step = 1.0 / gamma.max()
    step_cap = 1.0 / gamma.min()
    stationarity = np.inf
    for iteration in range(max_iter + 1):
        grad = phi + gamma * (1.0 + np.log(p / pbar))
        lam = float(p @ grad)
        stationarity = float(np.max(np.abs(grad - lam)))
        if stationarity <= coarse:
            break

        # Armijo backtracking on the relative-smoothness bound.
        while True:
            log_q = np.log(p) - step * grad
            q = np.maximum(np.exp(log_q - logsumexp(log_q)), tiny)
            q /= q.sum()
            f_q = _column_objective(q, phi, gamma, pbar)
            bound = f + grad @ (q - p) + np.sum(rel_entr(q, p)) / step
            if f_q <= bound + 1e-15 * max(1.0, abs(f)) or step < 1e-14:
                break

            step *= 0.5

        p, f = q, f_q
        step = min(2.0 * step, step_cap)
    else:
        raise ConvergenceError(
            "Mirror descent stopped with stationarity residual {:.3e}.".format(
                stationarity),
            residual=stationarity, iterations=max_iter)

    x, lam, polish = _newton_polish(
        np.log(p), lam, phi, gamma, np.log(pbar), tol)
    p = np.exp(x)
    return p / p.sum(), lam, iteration + polish


def solve_lambda(
        phi_next,
        gamma_col,
        pbar_col,
        cfg: Optional[LambdaSolveConfig] = None) -> Tuple[float, int]:
    """
    Find the multiplier that normalizes a KKT transition column.

    Parameters
    ----------
    phi_next: array_like
        Value function phi(tau + 1).
    gamma_col: array_like or float
        Penalty weights over destinations.
    pbar_col: array_like
        Natural distribution over destinations.
    cfg: LambdaSolveConfig, optional
        Method and tolerances.

    Returns
    -------
    (float, int)
        The multiplier and the number of iterations.

    Notes
    -----
    - sum_beta pbar_beta exp(-1 - (phi_beta - lam) / gamma_beta) - 1 is
      strictly increasing in lam, so the root is unique.
    - The initial guess is the closed form for column-constant gamma,
      using the mean of gamma over the support.
    """
    cfg = cfg or LambdaSolveConfig()
    _, phi, gamma, pbar = _on_support(phi_next, gamma_col, pbar_col)
    if cfg.method is LambdaMethod.BISECTION_NEWTON:
        return _lambda_newton(phi, gamma, pbar, cfg)

    if cfg.method is LambdaMethod.GRADIENT_DESCENT:
        return _lambda_gradient(phi, gamma, pbar, cfg)

    _, lam, iterations = _mirror_descent(
        phi, gamma, pbar, 0.5 * cfg.tol * gamma.min(), cfg.max_iter)
    return lam, iterations


def minimize_column_direct(
        phi_next,
        U_alpha: float,
        gamma_col,
        pbar_col,
        tol: float = 1e-10,
        max_iter: int = 10_000) -> Tuple[np.ndarray, float]:
    """
    Minimize the column objective directly over the simplex.

    Parameters
    ----------
    phi_next: array_like
        Value function phi(tau + 1).
    U_alpha: float
        Cost of the source state at tau.
    gamma_col: array_like or float
        Penalty weights over destinations.
    pbar_col: array_like
        Natural distribution over destinations.
    tol: float, optional [1e-10]
        KKT stationarity residual.
    max_iter: int, optional [10000]
        Iteration budget.

    Returns
    -------
    (ndarray, float)
        The optimal column and phi_alpha(tau), the minimized objective
        plus U_alpha.

    Notes
    -----
    - Exponentiated-gradient (entropic mirror) descent restricted to the
      support of pbar_col, with backtracking. It does not use the KKT
      formula and serves as an independent check of backward_step.
    """
    support, phi, gamma, pbar = _on_support(phi_next, gamma_col, pbar_col)
    p_s, _, _ = _mirror_descent(phi, gamma, pbar, tol, max_iter)
    p = np.zeros(support.shape)
    p[support] = p_s
    return p, _column_objective(p_s, phi, gamma, pbar) + float(U_alpha)


def backward_step(
        phi_next,
        U_t,
        gamma_t,
        pbar,
        cfg: Optional[LambdaSolveConfig] = None,
        tau: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One step of the backward sweep.

    Parameters
    ----------
    phi_next: array_like
        Value function phi(tau + 1).
    U_t: array_like
        Cost vector U(., tau).
    gamma_t: array_like
        n x n weights gamma(destination, source) at tau.
    pbar: StochasticMatrix or array_like
        Natural transition matrix.
    cfg: LambdaSolveConfig, optional
        Multiplier solve settings.
    tau: int, optional
        Time step, reported in convergence errors.

    Returns
    -------
    (ndarray, ndarray, ndarray)
        p(tau), phi(tau) and lambda(tau).
    """
    cfg = cfg or LambdaSolveConfig()
    P = np.asarray(pbar, dtype=float)
    n = P.shape[0]
    phi_next = np.asarray(phi_next, dtype=float)
    U_t = np.asarray(U_t, dtype=float)
    gamma_t = np.broadcast_to(np.asarray(gamma_t, dtype=float), (n, n))
    if phi_next.shape != (n,) or U_t.shape != (n,):
        raise DimensionError(
            f"phi_next {phi_next.shape} and U_t {U_t.shape} must have "
            f"length {n}.")

    p_t = np.zeros((n, n))
    phi_t = np.empty(n)
    lambda_t = np.empty(n)
    total_iterations = 0
    for alpha in range(n):
        pbar_col = P[:, alpha]
        gamma_col = gamma_t[:, alpha]
        try:
            if cfg.method is LambdaMethod.DIRECT_CONVEX:
                support, phi_s, gamma_s, pbar_s = _on_support(
                    phi_next, gamma_col, pbar_col)
                p_s, lam, iterations = _mirror_descent(
                    phi_s, gamma_s, pbar_s,
                    0.5 * cfg.tol * gamma_s.min(), cfg.max_iter)
                p_col = np.zeros(n)
                p_col[support] = p_s
            else:
                lam, iterations = solve_lambda(
                    phi_next, gamma_col, pbar_col, cfg)
                p_col = kkt_transition_column(
                    phi_next, lam, gamma_col, pbar_col)
                p_col /= p_col.sum()

        except ConvergenceError as e:
            raise ConvergenceError(
                "Column alpha={} at tau={} did not converge: {}".format(
                    alpha, tau, e),
                residual=e.residual, iterations=e.iterations,
                tau=tau, alpha=alpha) from e

        total_iterations += iterations
        p_t[:, alpha] = p_col
        lambda_t[alpha] = lam
        phi_t[alpha] = p_col @ phi_next + \
            kl_column_cost(p_col, pbar_col, gamma_col) + U_t[alpha]

    logger.debug("tau={}: {} iterations ({}).".format(
        tau, total_iterations, cfg.method.value))
    return p_t, phi_t, lambda_t


def solve(
        prob: Problem,
        cfg: Optional[LambdaSolveConfig] = None) -> Solution:
    """
    Solve a problem with any penalty variant.

    Parameters
    ----------
    prob: Problem
        The problem; UNIFORM and PER_SOURCE weights are broadcast to the
        full form and solved by the same sweep.
    cfg: LambdaSolveConfig, optional
        Multiplier solve settings.

    Returns
    -------
    Solution
        Optimal trajectories including lambda_traj.

    Notes
    -----
    - phi(T) = U(T); the sweep runs tau = T-1..0, then rho is propagated
      forward from rho0.
    """
    cfg = cfg or LambdaSolveConfig()
    gamma = prob.penalty.full_values(prob.n)
    P = prob.pbar.entries
    T, n = prob.T, prob.n
    p_traj = np.empty((T, n, n))
    phi = np.empty((T + 1, n))
    lam = np.empty((T, n))
    phi[T] = prob.costs.at(T)
    for tau in range(T - 1, -1, -1):
        p_traj[tau], phi[tau], lam[tau] = backward_step(
            phi[tau + 1], prob.costs.at(tau), gamma[tau], P, cfg, tau=tau)

    rho = propagate_trajectory(prob.rho0, p_traj)
    return Solution(
        p_traj=p_traj,
        rho_traj=rho,
        phi_traj=phi,
        objective=objective_value(prob, p_traj),
        lambda_traj=lam,
        solver="general")
