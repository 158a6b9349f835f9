import math

import numpy as np
import pytest

from EnsembleMDP.core import (
    CostSchedule,
    EnsembleState,
    PenaltySchedule,
    PenaltyVariant,
    Problem,
    Solution,
    StochasticMatrix,
    ensemble_entropy,
    kl_column_cost,
    objective_breakdown,
    objective_value,
    propagate,
    propagate_trajectory,
    steady_state,
    validate_state,
    validate_stochastic,
)
from EnsembleMDP.exceptions import (
    DimensionError,
    InvalidConfigError,
    NonUniqueSteadyStateError,
    PenaltyVariantError,
    StochasticityError,
    SupportViolationError,
)

SWAP = [[0.0, 1.0], [1.0, 0.0]]
MIXING = [[0.9, 0.2], [0.1, 0.8]]


def straightforward_objective(prob, p_traj):
    # Double sum written out with plain loops.
    rho = list(prob.rho0.values)
    gamma = prob.penalty.full_values(prob.n)
    pbar = prob.pbar.entries
    total = 0.0
    for t in range(prob.T):
        p = p_traj[t]
        for beta in range(prob.n):
            column = 0.0
            for alpha in range(prob.n):
                if p[alpha, beta] > 0.0:
                    column += p[alpha, beta] * prob.costs.values[t, alpha]
                    column += gamma[t, alpha, beta] * p[alpha, beta] * \
                        math.log(p[alpha, beta] / pbar[alpha, beta])

            total += rho[beta] * column

        rho = [
            sum(p[alpha, beta] * rho[beta] for beta in range(prob.n))
            for alpha in range(prob.n)
        ]

    return total


class TestValidation:

    def test_identity_is_stochastic(self):
        report = validate_stochastic(np.eye(2), 1e-12)
        assert report.ok
        assert bool(report)
        assert report.describe() == "ok"

    def test_doubly_stochastic(self):
        assert validate_stochastic([[0.5, 0.5], [0.5, 0.5]])

    def test_bad_column_sum_is_reported(self):
        report = validate_stochastic([[0.6, 0.5], [0.5, 0.5]])
        assert not report
        assert report.offending_columns == (0,)
        assert report.column_sums[0] == pytest.approx(1.1)

    def test_negative_entry_is_reported(self):
        report = validate_stochastic([[1.1, 0.0], [-0.1, 1.0]])
        assert report.offending_columns == (0,)
        assert report.min_entry == pytest.approx(-0.1)

    def test_non_square_matrix(self):
        with pytest.raises(DimensionError):
            validate_stochastic(np.ones((2, 3)) / 2)

        with pytest.raises(DimensionError):
            StochasticMatrix(np.ones((2, 3)))

    def test_state(self):
        assert validate_state([0.3, 0.7])
        assert not validate_state([0.3, 0.6])
        assert not validate_state([1.2, -0.2])

    def test_state_report_is_plain_bool(self):
        report = validate_state(np.array([0.3, 0.7]))
        assert type(report.ok) is bool
        assert type(bool(validate_stochastic(MIXING))) is bool


class TestPropagate:

    def test_identity(self):
        rho = propagate([0.3, 0.7], np.eye(2))
        assert isinstance(rho, EnsembleState)
        np.testing.assert_allclose(rho.values, [0.3, 0.7])

    def test_swap(self):
        np.testing.assert_allclose(
            propagate([0.3, 0.7], SWAP).values, [0.7, 0.3])

    def test_point_mass_reads_a_column(self):
        p = [[0.2, 0.5], [0.8, 0.5]]
        np.testing.assert_allclose(
            propagate(EnsembleState([1.0, 0.0]), StochasticMatrix(p)).values,
            [0.2, 0.8])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            propagate([0.2, 0.3, 0.5], np.eye(2))

    def test_preserves_normalization(self, instances):
        for n in range(2, 9):
            p = instances.stochastic(n, zero_fraction=0.4)
            rho = propagate(instances.state(n), p).values
            assert np.all(rho >= 0.0)
            assert abs(rho.sum() - 1.0) <= 1e-12

    def test_trajectory(self, instances):
        p = np.stack([instances.stochastic(4) for _ in range(5)])
        rho0 = instances.state(4)
        rho = propagate_trajectory(rho0, p)
        assert rho.shape == (6, 4)
        np.testing.assert_array_equal(rho[0], rho0)
        np.testing.assert_allclose(rho[3], p[2] @ (p[1] @ (p[0] @ rho0)))


class TestSteadyState:

    def test_swap(self):
        np.testing.assert_allclose(steady_state(SWAP).values, [0.5, 0.5])

    def test_identity_is_not_unique(self):
        with pytest.raises(NonUniqueSteadyStateError) as e:
            steady_state(np.eye(2))

        assert e.value.dimension == 2

    def test_mixing_chain(self):
        np.testing.assert_allclose(
            steady_state(MIXING).values, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_pure_cycle(self):
        cycle = np.roll(np.eye(6), 1, axis=0)
        np.testing.assert_allclose(
            steady_state(cycle).values, np.full(6, 1.0 / 6.0), atol=1e-12)

    def test_fixed_point(self, instances):
        for n in range(2, 9):
            p = instances.stochastic(n)
            rho = steady_state(p).values
            assert np.max(np.abs(p @ rho - rho)) < 1e-10
            assert np.all(rho >= 0.0)


class TestKLColumnCost:

    def test_zero_at_pbar(self):
        pbar = [0.2, 0.3, 0.5]
        assert kl_column_cost(pbar, pbar, [3.0, 0.5, 1.0]) == 0.0

    def test_point_mass(self):
        assert kl_column_cost([1.0, 0.0], [0.5, 0.5], [1.0, 1.0]) == \
            pytest.approx(math.log(2.0))

    def test_weighted(self):
        expected = 10 * 0.7 * math.log(1.4) + 0.3 * math.log(0.6)
        assert kl_column_cost([0.7, 0.3], [0.5, 0.5], [10.0, 1.0]) == \
            pytest.approx(expected, rel=1e-12)

    def test_zero_over_zero(self):
        assert kl_column_cost([1.0, 0.0], [1.0, 0.0], 2.0) == 0.0

    def test_support_violation(self):
        with pytest.raises(SupportViolationError):
            kl_column_cost([0.5, 0.5], [1.0, 0.0], 1.0)

    def test_gibbs_inequality(self, instances):
        for _ in range(20):
            p = instances.state(5)
            pbar = instances.state(5)
            assert kl_column_cost(p, pbar, 2.0) > 0.0


class TestSchedules:

    def test_cost_schedule(self):
        costs = CostSchedule([[1.0, 2.0], [3.0, 4.0]])
        assert (costs.T, costs.n) == (2, 2)
        np.testing.assert_array_equal(costs.at(0), [0.0, 0.0])
        np.testing.assert_array_equal(costs.at(2), [3.0, 4.0])
        assert costs.padded().shape == (3, 2)
        assert CostSchedule.zeros(2, 2) == CostSchedule(np.zeros((2, 2)))

    def test_cost_schedule_rejects_nan(self):
        with pytest.raises(InvalidConfigError):
            CostSchedule([[np.nan, 0.0]])

    def test_uniform_broadcast(self):
        penalty = PenaltySchedule.uniform(2.0, T=3)
        assert penalty.variant is PenaltyVariant.UNIFORM
        np.testing.assert_array_equal(penalty.gamma, [2.0, 2.0, 2.0])
        assert penalty.n is None

    def test_per_source_and_full_values(self):
        penalty = PenaltySchedule.per_source([1.0, 2.0], T=2)
        full = penalty.full_values(2)
        assert full.shape == (2, 2, 2)
        np.testing.assert_array_equal(full[1], [[1.0, 2.0], [1.0, 2.0]])
        with pytest.raises(PenaltyVariantError):
            penalty.uniform_values()

    def test_horizon_required(self):
        with pytest.raises(DimensionError):
            PenaltySchedule.uniform(2.0)

        with pytest.raises(DimensionError):
            PenaltySchedule.uniform([1.0, 2.0], T=3)

    def test_positive_weights(self):
        with pytest.raises(InvalidConfigError):
            PenaltySchedule.uniform([1.0, 0.0])

    def test_reduced(self):
        full = PenaltySchedule.full(np.full((2, 3, 3), 2.0))
        assert full.reduced() == PenaltySchedule.uniform([2.0, 2.0])

        gamma = np.array([[1.0, 5.0], [1.0, 5.0]])
        per_source = PenaltySchedule.full(gamma, T=1).reduced()
        assert per_source.variant is PenaltyVariant.PER_SOURCE
        np.testing.assert_array_equal(per_source.gamma, [[1.0, 5.0]])

    def test_reduced_ignores_forbidden_entries(self):
        gamma = np.array([[1.0, 7.0], [9.0, 7.0]])
        support = np.array([[True, True], [False, True]])
        reduced = PenaltySchedule.full(gamma, T=1).reduced(support)
        assert reduced.variant is PenaltyVariant.PER_SOURCE
        assert PenaltySchedule.full(gamma, T=1).reduced().variant is \
            PenaltyVariant.FULL


class TestProblem:

    def make(self, **kwargs):
        fields = dict(
            pbar=MIXING,
            costs=np.zeros((2, 2)),
            penalty=PenaltySchedule.uniform(1.0, T=2),
            rho0=[0.5, 0.5])
        fields.update(kwargs)
        return Problem(**fields)

    def test_wraps_arrays(self):
        prob = self.make()
        assert isinstance(prob.pbar, StochasticMatrix)
        assert isinstance(prob.rho0, EnsembleState)
        assert (prob.n, prob.T) == (2, 2)
        assert prob.support.all()

    def test_single_step_problem(self):
        prob = Problem(
            pbar=[[0.5, 0.5], [0.5, 0.5]],
            costs=CostSchedule.zeros(1, 2),
            penalty=PenaltySchedule.uniform(1.0, T=1),
            rho0=[0.3, 0.7])
        assert (prob.n, prob.T) == (2, 1)
        np.testing.assert_array_equal(prob.rho0.values, [0.3, 0.7])

    def test_rejects_non_stochastic_pbar(self):
        with pytest.raises(StochasticityError) as e:
            self.make(pbar=[[0.6, 0.5], [0.5, 0.5]])

        assert e.value.report.offending_columns == (0,)

    def test_rejects_bad_state(self):
        with pytest.raises(StochasticityError):
            self.make(rho0=[0.5, 0.6])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            self.make(rho0=[0.2, 0.3, 0.5])

        with pytest.raises(DimensionError):
            self.make(penalty=PenaltySchedule.uniform(1.0, T=3))

        with pytest.raises(DimensionError):
            self.make(penalty=PenaltySchedule.per_source(np.ones((2, 3))))

    def test_with_costs(self):
        prob = self.make()
        other = prob.with_costs(np.ones((2, 2)))
        assert other.costs == CostSchedule(np.ones((2, 2)))
        assert other.pbar == prob.pbar
        assert other != prob
        assert prob == self.make()


class TestObjective:

    def test_natural_policy_costs_nothing(self, instances):
        prob = instances.problem(5, 4, "full", zero_costs=True)
        p = np.repeat(prob.pbar.entries[None], 4, axis=0)
        assert objective_value(prob, p) == 0.0

    def test_expected_cost_only(self):
        prob = Problem(
            pbar=[[0.5, 0.5], [0.5, 0.5]],
            costs=[[1.0, 2.0]],
            penalty=PenaltySchedule.uniform(1.0, T=1),
            rho0=[1.0, 0.0])
        p = [[[0.5, 0.5], [0.5, 0.5]]]
        assert objective_value(prob, p) == pytest.approx(1.5)

    def test_against_double_sum(self, instances):
        for variant in ("uniform", "per_source", "full"):
            prob = instances.problem(3, 4, variant, zero_fraction=0.3)
            p = np.stack([
                # random policies on the support of pbar
                instances.stochastic(3) * prob.support for _ in range(4)])
            p /= p.sum(axis=1, keepdims=True)
            assert objective_value(prob, p) == pytest.approx(
                straightforward_objective(prob, p), rel=1e-12, abs=1e-14)

    def test_breakdown(self, instances):
        prob = instances.problem(4, 3, "per_source")
        p = np.repeat(prob.pbar.entries[None], 3, axis=0)
        cost, penalty = objective_breakdown(prob, p)
        np.testing.assert_allclose(penalty, 0.0, atol=1e-15)
        rho = propagate_trajectory(prob.rho0, p)
        np.testing.assert_allclose(
            cost, np.sum(rho[1:] * prob.costs.values, axis=1), atol=1e-14)

    def test_support_violation(self):
        prob = Problem(
            pbar=[[1.0, 0.5], [0.0, 0.5]],
            costs=[[0.0, 0.0]],
            penalty=PenaltySchedule.uniform(1.0, T=1),
            rho0=[0.5, 0.5])
        with pytest.raises(SupportViolationError):
            objective_value(prob, [[[0.5, 0.5], [0.5, 0.5]]])


class TestSolution:

    def test_shapes(self):
        with pytest.raises(DimensionError):
            Solution(
                p_traj=np.zeros((2, 2, 2)),
                rho_traj=np.zeros((2, 2)),
                phi_traj=np.zeros((3, 2)),
                objective=0.0)

        with pytest.raises(DimensionError):
            Solution(
                p_traj=np.zeros((2, 2, 2)),
                rho_traj=np.zeros((3, 2)),
                phi_traj=np.zeros((3, 2)),
                objective=0.0,
                lambda_traj=np.zeros((3, 2)))

    def test_accessors(self):
        p = np.repeat(np.array(MIXING)[None], 2, axis=0)
        rho = propagate_trajectory([1.0, 0.0], p)
        solution = Solution(
            p_traj=p, rho_traj=rho, phi_traj=np.ones((3, 2)), objective=1)
        assert (solution.T, solution.n) == (2, 2)
        assert solution.transition(1) == StochasticMatrix(MIXING)
        assert solution.state(0) == EnsembleState([1.0, 0.0])
        assert solution.initial_value() == 1.0
        assert isinstance(solution.objective, float)


def test_ensemble_entropy():
    rho = np.array([[0.25] * 4, [1.0, 0.0, 0.0, 0.0]])
    np.testing.assert_allclose(
        ensemble_entropy(rho), [math.log(4.0), 0.0], atol=1e-15)
