"""
Monte Carlo realization of an ensemble of independent devices.

Devices are split in blocks of ``BLOCK_SIZE``. Every block owns a
Philox stream derived from ``(seed, block index)``, so a run depends on
the seed only and not on the number of worker threads.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from logging import getLogger
from typing import Optional

import numpy as np

from .core import as_trajectory, validate_state, validate_stochastic
from .exceptions import DimensionError, InvalidConfigError, StochasticityError

logger = getLogger(__name__)

BLOCK_SIZE = 1024


@dataclass(frozen=True, eq=False)
class SimulationRun:
    """
    Occupation counts of a sampled ensemble.

    Attributes
    ----------
    n_devices: int
        Number of devices N.
    seed: int
        Seed of the run.
    counts: ndarray
        (T + 1, n) integer array, ``counts[t, alpha]`` devices are in
        state alpha at time t.
    """

    n_devices: int
    seed: int
    counts: np.ndarray

    @property
    def T(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def n(self) -> int:
        return self.counts.shape[1]

    @property
    def empirical_rho(self) -> np.ndarray:
        """
        (T + 1, n) occupation fractions.
        """
        return self.counts / self.n_devices

    def consumption(self, epsilon) -> np.ndarray:
        return empirical_consumption(self, epsilon)

    def __eq__(self, other):
        if not isinstance(other, SimulationRun):
            return NotImplemented

        return self.n_devices == other.n_devices and \
            self.seed == other.seed and \
            np.array_equal(self.counts, other.counts)


def _block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(block,))))


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray, last: np.ndarray) -> np.ndarray:
    # cdf[:, k] is the cumulative distribution drawn from by device k;
    # ties at a bin edge go to the lower index.
    index = np.sum(cdf < u[None, :], axis=0)
    return np.minimum(index, last)


def _last_positive(columns: np.ndarray) -> np.ndarray:
    # Highest state with positive mass in each column; guards u against
    # rounding of the cumulative sum below 1.
    n = columns.shape[0]
    positive = columns > 0.0
    return n - 1 - np.argmax(positive[::-1], axis=0)


def _sample_block(p, rho0, size: int, seed: int, block: int) -> np.ndarray:
    rng = _block_generator(seed, block)
    T, n = p.shape[0], p.shape[1]
    counts = np.empty((T + 1, n), dtype=np.int64)

    cdf0 = np.cumsum(rho0)[:, None]
    last0 = _last_positive(rho0[:, None])
    states = _inverse_cdf(
        np.broadcast_to(cdf0, (n, size)),
        1.0 - rng.random(size),
        np.broadcast_to(last0, (size,)))
    counts[0] = np.bincount(states, minlength=n)

    for t in range(T):
        cdf = np.cumsum(p[t], axis=0)
        last = _last_positive(p[t])
        states = _inverse_cdf(
            cdf[:, states], 1.0 - rng.random(size), last[states])
        counts[t + 1] = np.bincount(states, minlength=n)

    return counts


def sample(
        p_traj,
        rho0,
        n_devices: int,
        seed: int,
        workers: Optional[int] = 1,
        tol: float = 1e-10) -> SimulationRun:
    """
    Sample N independent devices following a transition trajectory.

    Parameters
    ----------
    p_traj: sequence of StochasticMatrix or ndarray
        Column-stochastic transition matrices for t = 0..T-1.
    rho0: EnsembleState or array_like
        Initial distribution of each device.
    n_devices: int
        Number of devices N, at least 1.
    seed: int
        Nonnegative seed; the same seed gives the same run.
    workers: int, optional [1]
        Threads sampling device blocks. None lets the executor decide.
    tol: float, optional [1e-10]
        Tolerance of the stochasticity checks.

    Returns
    -------
    SimulationRun
        Occupation counts for t = 0..T.
    """
    if n_devices < 1:
        raise InvalidConfigError("At least one device is required.")

    if seed < 0:
        raise InvalidConfigError("The seed must be nonnegative.")

    p = as_trajectory(p_traj)
    rho = np.asarray(rho0, dtype=float)
    if rho.shape != (p.shape[1],):
        raise DimensionError(
            f"rho0 {rho.shape} does not match p_traj {p.shape}.")

    for t in range(p.shape[0]):
        report = validate_stochastic(p[t], tol)
        if not report:
            raise StochasticityError(
                f"p({t}) is not stochastic: " + report.describe(), report)

    report = validate_state(rho, tol)
    if not report:
        raise StochasticityError("rho0 is not a probability vector.", report)

    sizes = [BLOCK_SIZE] * (n_devices // BLOCK_SIZE)
    if n_devices % BLOCK_SIZE:
        sizes.append(n_devices % BLOCK_SIZE)

    logger.debug("Sampling {} devices in {} blocks, seed {}.".format(
        n_devices, len(sizes), seed))
    if workers == 1 or len(sizes) == 1:
        blocks = [
            _sample_block(p, rho, size, seed, block)
            for block, size in enumerate(sizes)
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(_sample_block, p, rho, size, seed, block)
                for block, size in enumerate(sizes)
            ]
            blocks = [f.result() for f in futures]

    counts = np.sum(blocks, axis=0)
    counts.setflags(write=False)
    return SimulationRun(n_devices=n_devices, seed=seed, counts=counts)


def empirical_consumption(run: SimulationRun, epsilon) -> np.ndarray:
    """
    Empirical consumption sum_alpha epsilon_alpha rho_emp(alpha, t), t = 1..T.
    """
    eps = np.asarray(epsilon, dtype=float)
    if eps.shape != (run.n,):
        raise DimensionError(
            f"epsilon must have length {run.n}, got shape {eps.shape}.")

    return run.empirical_rho[1:] @ eps
