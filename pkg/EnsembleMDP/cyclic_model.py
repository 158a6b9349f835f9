"""
Generator of the cyclic thermostatically controlled load model.

Devices cycle through n states, the first half "on" (consuming) and the
second half "off". In one time slot a device advances to the next state
of the cycle with probability q or stays where it is.
"""
from dataclasses import asdict, dataclass, field
from logging import getLogger
from typing import Optional, Tuple

import numpy as np

from .core import (
    CostSchedule,
    PenaltySchedule,
    PenaltyVariant,
    Problem,
    StochasticMatrix,
    steady_state,
)
from .exceptions import InvalidConfigError

logger = getLogger(__name__)


@dataclass(frozen=True)
class CyclicModelSpec:
    """
    Parameters of the cyclic load model.

    Parameters
    ----------
    n_states: int, optional [8]
        Number of states, even.
    advance_prob: float, optional [0.8]
        Probability q to advance along the cycle in one time slot.
    horizon: int, optional [50]
        Number of time slots T.
    on_states: tuple of int, optional
        Consuming states; the first half of the cycle if omitted.
    cost_base: float, optional [1.0]
        Cost of an on-state before the random part is added.
    gamma_off_cycle: float, optional [10.0]
        Penalty weight of every transition not along the cycle.
    gamma_on_cycle: float, optional [1.0]
        Penalty weight of the transitions along the cycle.
    epsilon_on: float, optional [1.0]
        Energy consumed per slot in an on-state.
    epsilon_off: float, optional [0.0]
        Energy consumed per slot in an off-state.
    uniform_gamma: bool, optional [False]
        Use gamma_on_cycle for every transition (no extra penalty).
    penalize_wrap: bool, optional [False]
        Penalize the wrap transition n-1 -> 0 as off-cycle.
    """

    n_states: int = 8
    advance_prob: float = 0.8
    horizon: int = 50
    on_states: Optional[Tuple[int, ...]] = field(default=None)
    cost_base: float = 1.0
    gamma_off_cycle: float = 10.0
    gamma_on_cycle: float = 1.0
    epsilon_on: float = 1.0
    epsilon_off: float = 0.0
    uniform_gamma: bool = False
    penalize_wrap: bool = False

    def __post_init__(self):
        if self.n_states < 2 or self.n_states % 2:
            raise InvalidConfigError(
                f"n_states must be even and at least 2, got {self.n_states}.")

        if not 0.0 < self.advance_prob <= 1.0:
            raise InvalidConfigError(
                f"advance_prob must be in (0, 1], got {self.advance_prob}.")

        if self.horizon < 1:
            raise InvalidConfigError(
                f"horizon must be at least 1, got {self.horizon}.")

        if self.on_states is None:
            on_states = tuple(range(self.n_states // 2))
        else:
            on_states = tuple(sorted(int(s) for s in self.on_states))

        if len(set(on_states)) != len(on_states) or \
                any(not 0 <= s < self.n_states for s in on_states):
            raise InvalidConfigError(
                f"on_states {list(on_states)} must be distinct states "
                f"in 0..{self.n_states - 1}.")

        object.__setattr__(self, "on_states", on_states)

        if not (self.gamma_off_cycle > 0 and self.gamma_on_cycle > 0):
            raise InvalidConfigError("Penalty weights must be positive.")

        if self.epsilon_on < 0 or self.epsilon_off < 0:
            raise InvalidConfigError("Consumptions must be nonnegative.")

    @property
    def state_names(self) -> Tuple[str, ...]:
        names = []
        on_count = off_count = 0
        for s in range(self.n_states):
            if s in self.on_states:
                on_count += 1
                names.append(f"on{on_count}")
            else:
                off_count += 1
                names.append(f"off{off_count}")

        return tuple(names)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["on_states"] = list(self.on_states)
        return d


def build_pbar(spec: CyclicModelSpec) -> StochasticMatrix:
    """
    Natural matrix: beta -> beta + 1 (mod n) with q, beta -> beta with 1 - q.
    """
    n, q = spec.n_states, spec.advance_prob
    P = np.zeros((n, n))
    for beta in range(n):
        P[(beta + 1) % n, beta] += q
        P[beta, beta] += 1.0 - q

    return StochasticMatrix(P)


def build_penalty(spec: CyclicModelSpec) -> PenaltySchedule:
    """
    Time-independent penalty weights of the model.

    Returns
    -------
    PenaltySchedule
        UNIFORM gamma_on_cycle when ``uniform_gamma`` is set, otherwise a
        FULL schedule with gamma_on_cycle on the advancing transitions and
        gamma_off_cycle elsewhere.
    """
    if spec.uniform_gamma:
        return PenaltySchedule.uniform(spec.gamma_on_cycle, T=spec.horizon)

    n = spec.n_states
    gamma = np.full((n, n), float(spec.gamma_off_cycle))
    last = n - 1 if spec.penalize_wrap else n
    for beta in range(last):
        gamma[(beta + 1) % n, beta] = spec.gamma_on_cycle

    return PenaltySchedule.full(gamma, T=spec.horizon)


def build_epsilon(spec: CyclicModelSpec) -> np.ndarray:
    eps = np.full(spec.n_states, float(spec.epsilon_off))
    eps[list(spec.on_states)] = spec.epsilon_on
    return eps


def random_on_state_costs(
        T: int,
        n: int,
        on_states,
        base: float,
        seed: int) -> CostSchedule:
    """
    Cost base + r(t) in the on-states and 0 elsewhere.

    Notes
    -----
    - r(t) is drawn uniformly from [0, 1) once per time slot and shared
      by every on-state.
    """
    noise = np.random.default_rng(seed).random(T)
    values = np.zeros((T, n))
    values[:, list(on_states)] = (base + noise)[:, None]
    return CostSchedule(values)


def generate(spec: CyclicModelSpec, seed: int = 0) -> dict:
    """
    Build a problem document of the model.

    Parameters
    ----------
    spec: CyclicModelSpec
        Model parameters.
    seed: int, optional [0]
        Seed of the random costs.

    Returns
    -------
    dict
        JSON-ready problem document with explicit costs, the initial
        state "steady", the consumption vector and the model parameters.
    """
    pbar = build_pbar(spec)
    penalty = build_penalty(spec)
    costs = random_on_state_costs(
        spec.horizon, spec.n_states, spec.on_states, spec.cost_base, seed)
    if penalty.variant is PenaltyVariant.UNIFORM:
        penalty_doc = {"uniform": float(spec.gamma_on_cycle)}
    else:
        penalty_doc = {"full": penalty.gamma[0].tolist()}

    logger.debug("Generated cyclic model n={} q={} T={} seed={}.".format(
        spec.n_states, spec.advance_prob, spec.horizon, seed))
    return {
        "n": spec.n_states,
        "T": spec.horizon,
        "states": list(spec.state_names),
        "pbar": pbar.entries.tolist(),
        "rho0": "steady",
        "costs": costs.values.tolist(),
        "penalty": penalty_doc,
        "epsilon": build_epsilon(spec).tolist(),
        "seed": seed,
        "model": spec.to_dict(),
    }


def build_problem(spec: CyclicModelSpec, seed: int = 0) -> Problem:
    """
    The model as a Problem starting from the steady state of pbar.
    """
    pbar = build_pbar(spec)
    return Problem(
        pbar=pbar,
        costs=random_on_state_costs(
            spec.horizon, spec.n_states, spec.on_states, spec.cost_base, seed),
        penalty=build_penalty(spec),
        rho0=steady_state(pbar))
