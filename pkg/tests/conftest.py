# content of conftest.py

import numpy as np
import pytest

from EnsembleMDP.core import (
    CostSchedule,
    PenaltySchedule,
    Problem,
    validate_stochastic,
)


def pytest_configure(config):
    """
    Register the markers used by the suite.
    """
    config.addinivalue_line(
        "markers",
        "slow: long Monte Carlo and tracking runs "
        "(deselect with '-m \"not slow\"')")


class InstanceFactory(object):
    """
    Random problem instances drawn from a seeded generator.
    """

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def stochastic(self, n: int, zero_fraction: float = 0.0) -> np.ndarray:
        m = self.rng.uniform(0.05, 1.0, (n, n))
        if zero_fraction > 0.0:
            mask = self.rng.random((n, n)) < zero_fraction
            # keep at least one allowed destination per column
            mask[self.rng.integers(n, size=n), np.arange(n)] = False
            m[mask] = 0.0

        return m / m.sum(axis=0)

    def state(self, n: int) -> np.ndarray:
        r = self.rng.uniform(0.05, 1.0, n)
        return r / r.sum()

    def penalty(
            self,
            variant: str,
            T: int,
            n: int,
            low: float = 0.5,
            high: float = 3.0,
            column_constant: bool = False) -> PenaltySchedule:
        if variant == "uniform":
            return PenaltySchedule.uniform(self.rng.uniform(low, high, T))

        if variant == "per_source":
            return PenaltySchedule.per_source(
                self.rng.uniform(low, high, (T, n)))

        if column_constant:
            per_source = self.rng.uniform(low, high, (T, 1, n))
            return PenaltySchedule.full(np.repeat(per_source, n, axis=1))

        return PenaltySchedule.full(self.rng.uniform(low, high, (T, n, n)))

    def problem(
            self,
            n: int,
            T: int,
            variant: str = "uniform",
            zero_costs: bool = False,
            zero_fraction: float = 0.3,
            cost_scale: float = 1.0,
            column_constant: bool = False) -> Problem:
        if zero_costs:
            costs = CostSchedule.zeros(T, n)
        else:
            costs = CostSchedule(
                cost_scale * self.rng.uniform(-1.0, 1.0, (T, n)))

        return Problem(
            pbar=self.stochastic(n, zero_fraction),
            costs=costs,
            penalty=self.penalty(
                variant, T, n, column_constant=column_constant),
            rho0=self.state(n))


@pytest.fixture
def instances():
    return InstanceFactory(20240611)


def assert_valid_policy(p_traj, pbar, tol: float = 1e-10) -> None:
    """
    Every p(t) is stochastic at tol and keeps the zero pattern of pbar.
    """
    forbidden = np.asarray(pbar) == 0.0
    for t, p in enumerate(np.asarray(p_traj)):
        report = validate_stochastic(p, tol)
        assert report.ok, f"p({t}): {report.describe()}"
        assert np.all(p[forbidden] == 0.0), f"p({t}) leaves the support"


@pytest.fixture
def check_policy():
    return assert_valid_policy
