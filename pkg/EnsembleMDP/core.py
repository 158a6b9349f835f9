"""
Domain types and the operations shared by every solver.

Orientation convention: a transition matrix ``p`` is column-stochastic,
``p[alpha, beta]`` is the probability to move FROM source ``beta``
TO destination ``alpha`` in one time step, so ``sum(p[:, beta]) == 1``.
"""
from dataclasses import dataclass, replace
from enum import Enum
from logging import getLogger
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.special import entr, rel_entr

from .exceptions import (
    DimensionError,
    InvalidConfigError,
    NonUniqueSteadyStateError,
    PenaltyVariantError,
    StochasticityError,
    SupportViolationError,
)

logger = getLogger(__name__)

STOCHASTIC_TOL = 1e-12
FIXED_POINT_TOL = 1e-10


def _readonly(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError(
            f"'{name}' must be {ndim}-dimensional, got shape {arr.shape}.")

    arr.setflags(write=False)
    return arr


def _as_square(m) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(
            f"A square matrix is required, got shape {arr.shape}.")

    return arr


def _as_vector(v, n: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(
            f"A vector is required, got shape {arr.shape}.")

    if n is not None and arr.shape[0] != n:
        raise DimensionError(
            f"A vector of length {n} is required, got {arr.shape[0]}.")

    return arr


def as_trajectory(p_traj) -> np.ndarray:
    """
    Stack a sequence of transition matrices into a (T, n, n) array.
    """
    arr = np.stack([np.asarray(p, dtype=float) for p in p_traj])
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise DimensionError(
            f"A (T, n, n) trajectory is required, got shape {arr.shape}.")

    return arr


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """
    Square transition matrix with columns indexing the source state.

    Parameters
    ----------
    entries: array_like
        n x n matrix, ``entries[alpha, beta]`` is the probability of the
        transition beta -> alpha.

    Notes
    -----
    - Construction only checks the shape; stochasticity is checked by
      ``validate_stochastic`` so that invalid matrices can be reported.
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = _readonly(self.entries, 2, "entries")
        if entries.shape[0] != entries.shape[1]:
            raise DimensionError(
                f"Transition matrix must be square, got {entries.shape}.")

        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def column(self, beta: int) -> np.ndarray:
        """
        Distribution over destinations for a device in state ``beta``.
        """
        return self.entries[:, beta]

    def __array__(self, dtype=None, copy=None):
        if copy:
            return np.array(self.entries, dtype=dtype)

        return np.asarray(self.entries, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, StochasticMatrix):
            return NotImplemented

        return np.array_equal(self.entries, other.entries)


@dataclass(frozen=True, eq=False)
class EnsembleState:
    """
    Probability vector rho over the n states of a device.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values, 1, "values"))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        if copy:
            return np.array(self.values, dtype=dtype)

        return np.asarray(self.values, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, EnsembleState):
            return NotImplemented

        return np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class CostSchedule:
    """
    Electricity cost U(alpha, t) for t = 1..T.

    Parameters
    ----------
    values: array_like
        (T, n) array, row ``t - 1`` holds U(., t).

    Notes
    -----
    - U(., 0) is identically 0. With this convention the value function
      at t = 0 reproduces the objective exactly.
    """

    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values, 2, "costs")
        if not np.all(np.isfinite(values)):
            raise InvalidConfigError("Cost schedule has non-finite entries.")

        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, T: int, n: int) -> "CostSchedule":
        return cls(np.zeros((T, n)))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def at(self, t: int) -> np.ndarray:
        """
        Cost vector U(., t) for t = 0..T.
        """
        if t == 0:
            return np.zeros(self.n)

        return self.values[t - 1]

    def padded(self) -> np.ndarray:
        """
        (T + 1, n) array with the zero row for t = 0 prepended.
        """
        return np.vstack([np.zeros((1, self.n)), self.values])

    def __eq__(self, other):
        if not isinstance(other, CostSchedule):
            return NotImplemented

        return np.array_equal(self.values, other.values)


class PenaltyVariant(Enum):
    UNIFORM = "uniform"
    PER_SOURCE = "per_source"
    FULL = "full"


_VARIANT_NDIM = {
    PenaltyVariant.UNIFORM: 1,
    PenaltyVariant.PER_SOURCE: 2,
    PenaltyVariant.FULL: 3,
}


@dataclass(frozen=True, eq=False)
class PenaltySchedule:
    """
    Weights gamma of the welfare (KL) penalty.

    Parameters
    ----------
    variant: PenaltyVariant
        UNIFORM: gamma[t]; PER_SOURCE: gamma[t, source];
        FULL: gamma[t, destination, source].
    gamma: array_like
        Strictly positive weights for t = 0..T-1.

    Notes
    -----
    - Use the ``uniform``, ``per_source`` and ``full`` constructors to
      broadcast time-independent weights over the horizon.
    """

    variant: PenaltyVariant
    gamma: np.ndarray

    def __post_init__(self):
        variant = PenaltyVariant(self.variant)
        gamma = _readonly(self.gamma, _VARIANT_NDIM[variant], "gamma")
        if variant is PenaltyVariant.FULL and gamma.shape[1] != gamma.shape[2]:
            raise DimensionError(
                f"Full penalty must be (T, n, n), got {gamma.shape}.")

        if gamma.shape[0] < 1:
            raise DimensionError("Penalty schedule has an empty horizon.")

        if not np.all(np.isfinite(gamma)) or np.any(gamma <= 0.0):
            raise InvalidConfigError(
                "Penalty weights must be finite and strictly positive.")

        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "gamma", gamma)

    @staticmethod
    def _over_horizon(gamma, ndim: int, T: Optional[int]) -> np.ndarray:
        arr = np.asarray(gamma, dtype=float)
        if arr.ndim == ndim - 1:
            if T is None:
                raise DimensionError(
                    "A horizon T is required to broadcast "
                    "time-independent weights.")

            return np.broadcast_to(arr, (T,) + arr.shape).copy()

        if T is not None and arr.shape[0] != T:
            raise DimensionError(
                f"Penalty schedule covers {arr.shape[0]} steps, expected {T}.")

        return arr

    @classmethod
    def uniform(cls, gamma, T: Optional[int] = None) -> "PenaltySchedule":
        return cls(PenaltyVariant.UNIFORM, cls._over_horizon(gamma, 1, T))

    @classmethod
    def per_source(cls, gamma, T: Optional[int] = None) -> "PenaltySchedule":
        return cls(PenaltyVariant.PER_SOURCE, cls._over_horizon(gamma, 2, T))

    @classmethod
    def full(cls, gamma, T: Optional[int] = None) -> "PenaltySchedule":
        return cls(PenaltyVariant.FULL, cls._over_horizon(gamma, 3, T))

    @property
    def T(self) -> int:
        return self.gamma.shape[0]

    @property
    def n(self) -> Optional[int]:
        """
        Number of states, or None for the UNIFORM variant.
        """
        if self.variant is PenaltyVariant.UNIFORM:
            return None

        return self.gamma.shape[-1]

    def uniform_values(self) -> np.ndarray:
        """
        gamma(t) as a (T,) array; only for the UNIFORM variant.
        """
        if self.variant is not PenaltyVariant.UNIFORM:
            raise PenaltyVariantError(
                f"Uniform weights requested from a {self.variant.value} "
                "penalty schedule.")

        return self.gamma

    def per_source_values(self, n: int) -> np.ndarray:
        """
        gamma(t, source) as a (T, n) array; UNIFORM is broadcast.
        """
        if self.variant is PenaltyVariant.UNIFORM:
            return np.repeat(self.gamma[:, None], n, axis=1)

        if self.variant is PenaltyVariant.PER_SOURCE:
            return self.gamma

        raise PenaltyVariantError(
            "Per-source weights requested from a full penalty schedule.")

    def full_values(self, n: int) -> np.ndarray:
        """
        gamma(t, destination, source) as a (T, n, n) array for any variant.
        """
        if self.variant is PenaltyVariant.UNIFORM:
            return np.broadcast_to(
                self.gamma[:, None, None], (self.T, n, n)).copy()

        if self.variant is PenaltyVariant.PER_SOURCE:
            return np.broadcast_to(
                self.gamma[:, None, :], (self.T, n, n)).copy()

        return self.gamma

    def reduced(self, support=None) -> "PenaltySchedule":
        """
        Return the most specific equivalent penalty schedule.

        Parameters
        ----------
        support: array_like of bool, optional
            n x n mask of allowed transitions. Weights off the support
            never enter the objective and are ignored when comparing.

        Returns
        -------
        PenaltySchedule
            FULL weights constant over destinations become PER_SOURCE,
            PER_SOURCE weights constant over sources become UNIFORM.
        """
        if self.variant is PenaltyVariant.FULL:
            n = self.gamma.shape[1]
            mask = np.ones((n, n), dtype=bool) if support is None \
                else np.asarray(support, dtype=bool)
            hi = np.where(mask[None], self.gamma, -np.inf).max(axis=1)
            lo = np.where(mask[None], self.gamma, np.inf).min(axis=1)
            if np.array_equal(hi, lo):
                return PenaltySchedule.per_source(hi).reduced()

            return self

        if self.variant is PenaltyVariant.PER_SOURCE:
            if np.all(self.gamma == self.gamma[:, :1]):
                return PenaltySchedule.uniform(self.gamma[:, 0])

        return self

    def __eq__(self, other):
        if not isinstance(other, PenaltySchedule):
            return NotImplemented

        return self.variant is other.variant and \
            np.array_equal(self.gamma, other.gamma)


@dataclass(frozen=True, eq=False)
class StochasticityReport:
    """
    Result of ``validate_stochastic``.

    Attributes
    ----------
    ok: bool
        True when every column is a probability vector within tolerance.
    column_sums: ndarray
        Sum of each source column.
    offending_columns: tuple of int
        Columns with a bad sum, a negative entry or a non-finite entry.
    min_entry: float
        The smallest entry of the matrix.
    """

    ok: bool
    column_sums: np.ndarray
    offending_columns: Tuple[int, ...]
    min_entry: float

    def __bool__(self):
        return bool(self.ok)

    def describe(self) -> str:
        if self.ok:
            return "ok"

        return "columns {} violate stochasticity (sums {})".format(
            list(self.offending_columns),
            [float(self.column_sums[c]) for c in self.offending_columns])


@dataclass(frozen=True, eq=False)
class Problem:
    """
    Finite-horizon KL-regularized ensemble control problem.

    Parameters
    ----------
    pbar: StochasticMatrix
        Natural (target) transition matrix, constant in time.
    costs: CostSchedule
        U(alpha, t) for t = 1..T.
    penalty: PenaltySchedule
        Welfare penalty weights for t = 0..T-1.
    rho0: EnsembleState
        Initial distribution of the ensemble.
    tol: float, optional [1e-12]
        Tolerance used to validate pbar and rho0.

    Notes
    -----
    - Arrays are accepted for every field and wrapped in the domain types.
    - Irreducibility of pbar is not required.
    """

    pbar: StochasticMatrix
    costs: CostSchedule
    penalty: PenaltySchedule
    rho0: EnsembleState
    tol: float = STOCHASTIC_TOL

    def __post_init__(self):
        if not isinstance(self.pbar, StochasticMatrix):
            object.__setattr__(self, "pbar", StochasticMatrix(self.pbar))

        if not isinstance(self.costs, CostSchedule):
            object.__setattr__(self, "costs", CostSchedule(self.costs))

        if not isinstance(self.rho0, EnsembleState):
            object.__setattr__(self, "rho0", EnsembleState(self.rho0))

        n = self.pbar.n
        if self.rho0.n != n or self.costs.n != n:
            raise DimensionError(
                f"pbar has {n} states, rho0 {self.rho0.n}, "
                f"costs {self.costs.n}.")

        if self.penalty.T != self.costs.T:
            raise DimensionError(
                f"Penalty covers {self.penalty.T} steps, "
                f"costs cover {self.costs.T}.")

        if self.penalty.n is not None and self.penalty.n != n:
            raise DimensionError(
                f"Penalty is defined on {self.penalty.n} states, "
                f"expected {n}.")

        report = validate_stochastic(self.pbar, self.tol)
        if not report:
            raise StochasticityError(
                "pbar is not stochastic: " + report.describe(), report)

        report = validate_state(self.rho0, self.tol)
        if not report:
            raise StochasticityError(
                "rho0 is not a probability vector (sum {}).".format(
                    float(report.column_sums[0])), report)

    @property
    def n(self) -> int:
        return self.pbar.n

    @property
    def T(self) -> int:
        return self.costs.T

    @property
    def support(self) -> np.ndarray:
        """
        Boolean mask of the transitions allowed by pbar.
        """
        return self.pbar.entries > 0.0

    def with_costs(self, costs) -> "Problem":
        """
        Derive the same problem with another cost schedule.
        """
        if not isinstance(costs, CostSchedule):
            costs = CostSchedule(costs)

        return replace(self, costs=costs)

    def __eq__(self, other):
        if not isinstance(other, Problem):
            return NotImplemented

        return self.pbar == other.pbar and self.costs == other.costs and \
            self.penalty == other.penalty and self.rho0 == other.rho0


@dataclass(frozen=True, eq=False)
class Solution:
    """
    Optimal trajectories of a solved problem.

    Attributes
    ----------
    p_traj: ndarray
        (T, n, n) optimal transition matrices p(t), t = 0..T-1.
    rho_traj: ndarray
        (T + 1, n) ensemble states rho(t), t = 0..T.
    phi_traj: ndarray
        (T + 1, n) value function phi(t), t = 0..T.
    objective: float
        Objective value of p_traj.
    lambda_traj: ndarray, optional
        (T, n) Lagrange multipliers; only set by the general solver.
    solver: str
        Name of the backward pass that produced the solution.
    """

    p_traj: np.ndarray
    rho_traj: np.ndarray
    phi_traj: np.ndarray
    objective: float
    lambda_traj: Optional[np.ndarray] = None
    solver: str = ""

    def __post_init__(self):
        p_traj = _readonly(self.p_traj, 3, "p_traj")
        T, n = p_traj.shape[0], p_traj.shape[1]
        rho_traj = _readonly(self.rho_traj, 2, "rho_traj")
        phi_traj = _readonly(self.phi_traj, 2, "phi_traj")
        if rho_traj.shape != (T + 1, n) or phi_traj.shape != (T + 1, n):
            raise DimensionError(
                f"Trajectories must be ({T + 1}, {n}), got rho "
                f"{rho_traj.shape} and phi {phi_traj.shape}.")

        object.__setattr__(self, "p_traj", p_traj)
        object.__setattr__(self, "rho_traj", rho_traj)
        object.__setattr__(self, "phi_traj", phi_traj)
        object.__setattr__(self, "objective", float(self.objective))
        if self.lambda_traj is not None:
            lambda_traj = _readonly(self.lambda_traj, 2, "lambda_traj")
            if lambda_traj.shape != (T, n):
                raise DimensionError(
                    f"lambda_traj must be ({T}, {n}), "
                    f"got {lambda_traj.shape}.")

            object.__setattr__(self, "lambda_traj", lambda_traj)

    @property
    def T(self) -> int:
        return self.p_traj.shape[0]

    @property
    def n(self) -> int:
        return self.p_traj.shape[1]

    def transition(self, t: int) -> StochasticMatrix:
        return StochasticMatrix(self.p_traj[t])

    def state(self, t: int) -> EnsembleState:
        return EnsembleState(self.rho_traj[t])

    def initial_value(self) -> float:
        """
        sum_alpha phi_alpha(0) rho_alpha(0), equal to the objective.
        """
        return float(self.phi_traj[0] @ self.rho_traj[0])


def validate_stochastic(m, tol: float = STOCHASTIC_TOL) -> StochasticityReport:
    """
    Check that a matrix is column-stochastic.

    Parameters
    ----------
    m: StochasticMatrix or array_like
        Square matrix to check.
    tol: float, optional [1e-12]
        Allowed deviation of column sums from 1 and of entries below 0.

    Returns
    -------
    StochasticityReport
        Truthy when the matrix is stochastic.
    """
    entries = _as_square(m)
    sums = entries.sum(axis=0)
    bad = ~np.all(np.isfinite(entries), axis=0)
    bad |= np.any(entries < -tol, axis=0)
    bad |= ~(np.abs(sums - 1.0) <= tol)
    return StochasticityReport(
        ok=not bool(bad.any()),
        column_sums=sums,
        offending_columns=tuple(int(c) for c in np.flatnonzero(bad)),
        min_entry=float(entries.min()))


def validate_state(rho, tol: float = STOCHASTIC_TOL) -> StochasticityReport:
    """
    Check that a vector is a probability vector.
    """
    values = _as_vector(rho)
    total = values.sum()
    ok = bool(np.all(np.isfinite(values))) and \
        bool(np.all(values >= -tol)) and bool(abs(total - 1.0) <= tol)
    return StochasticityReport(
        ok=ok,
        column_sums=np.array([total]),
        offending_columns=() if ok else (0,),
        min_entry=float(values.min()))


def propagate(rho, p) -> EnsembleState:
    """
    Advance the ensemble one step with the master equation.

    Parameters
    ----------
    rho: EnsembleState or array_like
        Current distribution.
    p: StochasticMatrix or array_like
        Transition matrix of the step.

    Returns
    -------
    EnsembleState
        rho'(alpha) = sum_beta p(alpha, beta) rho(beta).
    """
    p_arr = _as_square(p)
    rho_arr = _as_vector(rho, p_arr.shape[0])
    return EnsembleState(p_arr @ rho_arr)


def propagate_trajectory(rho0, p_traj) -> np.ndarray:
    """
    Run the master equation forward from rho0.

    Returns
    -------
    ndarray
        (T + 1, n) array whose row t is rho(t).
    """
    p = as_trajectory(p_traj)
    rho = np.empty((p.shape[0] + 1, p.shape[1]))
    rho[0] = _as_vector(rho0, p.shape[1])
    for t in range(p.shape[0]):
        rho[t + 1] = p[t] @ rho[t]

    return rho


def steady_state(pbar, tol: float = FIXED_POINT_TOL) -> EnsembleState:
    """
    Stationary distribution of the natural chain.

    Parameters
    ----------
    pbar: StochasticMatrix or array_like
        Column-stochastic matrix.
    tol: float, optional [1e-10]
        Allowed fixed-point residual.

    Returns
    -------
    EnsembleState
        rho with pbar @ rho == rho.

    Notes
    -----
    - The linear system (I - pbar) rho = 0 is solved with the
      normalization row appended. Power iteration is not used as it
      does not converge on periodic chains such as pure cycles.
    """
    P = _as_square(pbar)
    n = P.shape[0]
    A = np.eye(n) - P
    dimension = null_space(A).shape[1]
    if dimension > 1:
        raise NonUniqueSteadyStateError(
            f"The chain has {dimension} independent stationary "
            "distributions.", dimension)

    system = np.vstack([A, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    rho = np.linalg.lstsq(system, rhs, rcond=None)[0]
    rho = np.clip(rho, 0.0, None)
    rho /= rho.sum()

    residual = np.max(np.abs(P @ rho - rho))
    if residual >= tol:
        logger.warning(
            "Steady state residual {:.3e} exceeds {:.1e}.".format(
                residual, tol))

    return EnsembleState(rho)


def kl_column_cost(p_col, pbar_col, gamma_col) -> float:
    """
    Weighted KL welfare penalty of one source column.

    Parameters
    ----------
    p_col: array_like
        Controlled distribution over destinations.
    pbar_col: array_like
        Natural distribution over destinations.
    gamma_col: array_like or float
        Positive weights per destination.

    Returns
    -------
    float
        sum_beta gamma_beta p_beta log(p_beta / pbar_beta),
        with 0 log(0 / 0) = 0.
    """
    p = _as_vector(p_col)
    pbar = _as_vector(pbar_col, p.shape[0])
    gamma = np.broadcast_to(np.asarray(gamma_col, dtype=float), p.shape)
    forbidden = np.flatnonzero((pbar <= 0.0) & (p > 0.0))
    if forbidden.size > 0:
        raise SupportViolationError(
            "Transitions to {} are forbidden by the natural matrix "
            "but have probabilities {}.".format(
                forbidden.tolist(), p[forbidden].tolist()))

    return float(np.sum(gamma * rel_entr(p, pbar)))


def objective_breakdown(
        prob: Problem,
        p_traj) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-step electricity cost and welfare penalty of a policy.

    Parameters
    ----------
    prob: Problem
        The problem.
    p_traj: sequence of StochasticMatrix or ndarray
        Transition matrices for t = 0..T-1.

    Returns
    -------
    (ndarray, ndarray)
        cost[t] = sum_beta rho_beta(t) sum_alpha p(alpha, beta, t) U(alpha, t+1)
        and penalty[t] = sum_beta rho_beta(t) kl_column_cost(column beta).
    """
    p = as_trajectory(p_traj)
    if p.shape != (prob.T, prob.n, prob.n):
        raise DimensionError(
            f"p_traj must be ({prob.T}, {prob.n}, {prob.n}), "
            f"got {p.shape}.")

    rho = propagate_trajectory(prob.rho0, p)
    gamma = prob.penalty.full_values(prob.n)
    pbar = prob.pbar.entries
    cost = np.empty(prob.T)
    penalty = np.empty(prob.T)
    for t in range(prob.T):
        cost[t] = rho[t] @ (prob.costs.at(t + 1) @ p[t])
        columns = [
            kl_column_cost(p[t][:, beta], pbar[:, beta], gamma[t][:, beta])
            for beta in range(prob.n)
        ]
        penalty[t] = rho[t] @ np.array(columns)

    return cost, penalty


def objective_value(prob: Problem, p_traj: Sequence) -> float:
    """
    Total objective: expected electricity cost plus welfare penalty.
    """
    cost, penalty = objective_breakdown(prob, p_traj)
    return float(cost.sum() + penalty.sum())


def ensemble_entropy(rho_traj) -> np.ndarray:
    """
    Shannon entropy (nats) of each ensemble state of a trajectory.
    """
    rho = np.asarray(rho_traj, dtype=float)
    return np.sum(entr(rho), axis=-1)
