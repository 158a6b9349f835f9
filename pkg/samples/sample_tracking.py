import numpy as np

from EnsembleMDP import TrackingProblem, track
from EnsembleMDP.cyclic_model import (
    CyclicModelSpec,
    build_epsilon,
    build_problem,
)


if __name__ == '__main__':
    spec = CyclicModelSpec(horizon=40)
    base = build_problem(spec)
    epsilon = build_epsilon(spec)

    # steady consumption is 0.5; ask for a slow oscillation around it
    t = np.arange(1, spec.horizon + 1)
    target = 0.5 + 0.1 * np.sin(2 * np.pi * t / spec.horizon)

    def report(iteration, xi, residual):
        print(f"[{iteration:03d}] max residual {np.abs(residual).max():.3e}")

    result = track(TrackingProblem(base, epsilon, target), callback=report)
    print("converged:", result.converged)
    print("xi:", np.round(result.xi_traj, 4))
