from EnsembleMDP import solve
from EnsembleMDP.archive import TrajectoryArchive
from EnsembleMDP.core import ensemble_entropy
from EnsembleMDP.cyclic_model import CyclicModelSpec, build_problem


for uniform_gamma in (False, True):
    spec = CyclicModelSpec(uniform_gamma=uniform_gamma)
    solution = solve(build_problem(spec, seed=1))
    print("uniform_gamma={}: solver={} objective={:.6f} "
          "mean entropy={:.4f}".format(
              uniform_gamma, solution.solver, solution.objective,
              ensemble_entropy(solution.rho_traj).mean()))


archive = TrajectoryArchive("./archive")
archive.write_solution(solution)
for step in archive.retrieve_steps(limit=5, as_dict=True):
    print(step["t"], step["rho"])
