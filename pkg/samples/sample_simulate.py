import numpy as np

from EnsembleMDP import solve
from EnsembleMDP.cyclic_model import CyclicModelSpec, build_problem
from EnsembleMDP.simulator import sample


if __name__ == '__main__':
    prob = build_problem(CyclicModelSpec(), seed=0)
    solution = solve(prob)
    for n_devices in (1_000, 10_000, 100_000):
        run = sample(solution.p_traj, prob.rho0, n_devices, seed=7, workers=4)
        error = np.abs(run.empirical_rho - solution.rho_traj).max()
        print(f"N={n_devices:>7d}: max |rho_emp - rho| = {error:.2e}, "
              f"sqrt(N) * error = {np.sqrt(n_devices) * error:.2f}")
