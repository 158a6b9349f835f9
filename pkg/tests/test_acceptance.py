"""
Property checks over many random instances and the cyclic load model.
"""
import numpy as np
import pytest
from scipy.optimize import minimize, minimize_scalar
from scipy.special import rel_entr

from EnsembleMDP import cyclic_model, general_solver, simulator
from EnsembleMDP.core import (
    ensemble_entropy,
    propagate_trajectory,
    steady_state,
)
from EnsembleMDP.general_solver import (
    LambdaMethod,
    LambdaSolveConfig,
    kkt_transition_column,
    minimize_column_direct,
    solve_lambda,
)
from EnsembleMDP.solvers import solve
from EnsembleMDP.tracker import TrackingProblem, track

VARIANTS = ["uniform", "per_source", "full"]


def test_zero_costs_keep_natural_policy(instances, check_policy):
    for k in range(50):
        variant = VARIANTS[k % 3]
        n = int(instances.rng.integers(2, 9))
        T = int(instances.rng.integers(1, 21))
        prob = instances.problem(
            n, T, variant, zero_costs=True, column_constant=True)
        solution = solve(prob)
        check_policy(solution.p_traj, prob.pbar)
        assert np.max(np.abs(solution.p_traj - prob.pbar.entries)) <= 1e-10
        assert abs(solution.objective) <= 1e-12


def test_solver_equivalence(instances, check_policy):
    for _ in range(50):
        n = int(instances.rng.integers(2, 9))
        T = int(instances.rng.integers(1, 21))
        prob = instances.problem(n, T, "uniform")
        linear = solve(prob, "linear")
        normalized = solve(prob, "normalized")
        general = solve(prob, "general")
        for other in (normalized, general):
            check_policy(other.p_traj, prob.pbar)
            np.testing.assert_allclose(
                other.p_traj, linear.p_traj, rtol=0.0, atol=1e-8)
            assert other.objective == pytest.approx(
                linear.objective, rel=0.0, abs=1e-9)


def _refined_min(f, x0, lo=0.0, hi=1.0):
    result = minimize_scalar(
        f, bounds=(max(lo, x0 - 1e-3), min(hi, x0 + 1e-3)), method="bounded",
        options={"xatol": 1e-12})
    return min(f(x0), float(result.fun))


def grid_search_objective(prob):
    # Exhaustive search over both transition columns of both steps, n = 2.
    grid = np.linspace(0.0, 1.0, 1001)
    pbar = prob.pbar.entries
    gamma = prob.penalty.full_values(2)
    U1, U2 = prob.costs.values
    rho0 = prob.rho0.values

    def column_cost(x, t, beta, U):
        return x * U[0] + (1.0 - x) * U[1] + \
            gamma[t, 0, beta] * rel_entr(x, pbar[0, beta]) + \
            gamma[t, 1, beta] * rel_entr(1.0 - x, pbar[1, beta])

    # last step: every column on its own, weighted by rho(1) >= 0
    c_last = np.empty(2)
    for beta in range(2):
        values = column_cost(grid, 1, beta, U2)
        x0 = grid[np.argmin(values)]
        c_last[beta] = _refined_min(
            lambda x: float(column_cost(x, 1, beta, U2)), x0)

    def first_step(a0, a1):
        total = 0.0
        for beta, a in enumerate((a0, a1)):
            cont = a * c_last[0] + (1.0 - a) * c_last[1]
            total = total + rho0[beta] * (column_cost(a, 0, beta, U1) + cont)

        return total

    A0, A1 = np.meshgrid(grid, grid, indexing="ij")
    values = first_step(A0, A1)
    i, j = np.unravel_index(np.argmin(values), values.shape)
    refined = minimize(
        lambda a: float(first_step(a[0], a[1])),
        [grid[i], grid[j]], method="L-BFGS-B", bounds=[(0.0, 1.0)] * 2,
        options={"ftol": 1e-15, "gtol": 1e-12})
    return min(float(values[i, j]), float(refined.fun))


def test_grid_search_oracle(instances):
    for k in range(20):
        prob = instances.problem(
            2, 2, VARIANTS[k % 3], zero_fraction=0.0, cost_scale=2.0)
        solution = general_solver.solve(prob)
        assert solution.objective == pytest.approx(
            grid_search_objective(prob), abs=1e-4)


@pytest.mark.parametrize("variant", VARIANTS)
def test_value_identity(instances, variant):
    for _ in range(10):
        n = int(instances.rng.integers(2, 9))
        T = int(instances.rng.integers(1, 21))
        solution = solve(instances.problem(n, T, variant))
        assert solution.initial_value() == pytest.approx(
            solution.objective, rel=0.0, abs=1e-9)


def test_lambda_methods_agree(instances):
    rng = instances.rng
    for _ in range(100):
        n = int(rng.integers(2, 9))
        pbar = instances.stochastic(n, zero_fraction=0.3)[:, 0]
        phi = rng.uniform(-1.0, 1.0, n)
        gamma = rng.uniform(0.5, 3.0, n)
        columns = []
        for method in LambdaMethod:
            lam, _ = solve_lambda(
                phi, gamma, pbar, LambdaSolveConfig(method=method))
            p = kkt_transition_column(phi, lam, gamma, pbar)
            columns.append(p / p.sum())

        columns.append(minimize_column_direct(phi, 0.0, gamma, pbar)[0])
        for p in columns[1:]:
            np.testing.assert_allclose(p, columns[0], rtol=0.0, atol=1e-6)


def test_penalty_homogenizes_ensemble():
    for seed in range(10):
        entropies = []
        for uniform_gamma in (False, True):
            spec = cyclic_model.CyclicModelSpec(uniform_gamma=uniform_gamma)
            solution = solve(cyclic_model.build_problem(spec, seed))
            entropies.append(np.mean(ensemble_entropy(solution.rho_traj)))

        assert entropies[0] > entropies[1], seed


def perturbed_chain_target(spec, epsilon, rng):
    # same support as the natural cycle, advance probability per state
    rho = steady_state(cyclic_model.build_pbar(spec)).values
    target = np.empty(spec.horizon)
    for t in range(spec.horizon):
        q = rng.uniform(0.6, 0.95, spec.n_states)
        P = np.roll(np.eye(spec.n_states), 1, axis=0) * q[None, :] + \
            np.eye(spec.n_states) * (1.0 - q)[None, :]
        rho = P @ rho
        target[t] = epsilon @ rho

    return target


@pytest.mark.slow
def test_tracking_reachable_targets(check_policy):
    rng = np.random.default_rng(40)
    spec = cyclic_model.CyclicModelSpec(horizon=40, uniform_gamma=True)
    base = cyclic_model.build_problem(spec)
    epsilon = cyclic_model.build_epsilon(spec)
    for _ in range(10):
        target = perturbed_chain_target(spec, epsilon, rng)
        assert np.max(np.abs(target - 0.5)) > 1e-3
        result = track(TrackingProblem(base, epsilon, target))
        assert result.converged
        assert result.outer_iterations > 0
        assert result.max_residual <= 1e-6
        assert result.outer_iterations <= 500
        check_policy(result.solution.p_traj, base.pbar)


@pytest.mark.slow
def test_monte_carlo_consistency():
    spec = cyclic_model.CyclicModelSpec()
    prob = cyclic_model.build_problem(spec, seed=0)
    solution = solve(prob)
    rho = solution.rho_traj

    def errors(n_devices, seeds):
        return [
            np.max(np.abs(simulator.sample(
                solution.p_traj, prob.rho0, n_devices, seed, workers=4,
            ).empirical_rho - rho))
            for seed in seeds
        ]

    n_devices = 100_000
    large = errors(n_devices, range(20))
    assert max(large) <= 5.0 / np.sqrt(n_devices)

    sizes = [1_000, 10_000, 100_000]
    mean_errors = [np.mean(errors(n, range(100, 120))) for n in sizes[:-1]]
    mean_errors.append(np.mean(large))
    slope = np.polyfit(np.log(sizes), np.log(mean_errors), 1)[0]
    assert -0.6 <= slope <= -0.4


def test_policies_stay_stochastic(instances, check_policy):
    for k in range(30):
        variant = VARIANTS[k % 3]
        n = int(instances.rng.integers(2, 9))
        T = int(instances.rng.integers(1, 21))
        prob = instances.problem(n, T, variant, zero_fraction=0.5)
        solution = solve(prob)
        check_policy(solution.p_traj, prob.pbar)
        np.testing.assert_allclose(
            solution.rho_traj, propagate_trajectory(prob.rho0, solution.p_traj))
