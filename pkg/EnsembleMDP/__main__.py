import logging
from pathlib import Path
import sys
import time
from typing import Optional

from docopt import docopt
import numpy as np

import EnsembleMDP
from EnsembleMDP import cyclic_model, problem_file, simulator, solvers, tracker
from EnsembleMDP.archive import TrajectoryArchive
from EnsembleMDP.core import (
    Solution,
    ensemble_entropy,
    objective_breakdown,
)
from EnsembleMDP.exceptions import (
    ConvergenceError,
    DimensionError,
    EnsembleMDPError,
    InfeasibleTargetError,
    ProblemFileError,
)
from EnsembleMDP.general_solver import LambdaSolveConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CONVERGENCE = 3
EXIT_INVALID = 4
EXIT_NOT_TRACKED = 5

HELP = r"""
'EnsembleMDP' solves finite-horizon KL-regularized control problems
of large ensembles of cycling loads.

Usage:
  {p} -h
  {p} -v
  {p} gen-model [--seed=<seed>] [--states=<n>] [--advance=<q>] [--horizon=<T>] [--uniform-gamma] [--strict-paper-gamma | --penalize-wrap] [--verbose] <out_path>
  {p} solve [--tol=<tol>] [--seed=<seed>] [--out-dir=<dir>] [--solver=<name>] [--lambda-method=<m>] [--archive] [--verbose] <problem>
  {p} track [--tol=<tol>] [--seed=<seed>] [--out-dir=<dir>] [--solver=<name>] [--outer-tol=<tol>] [--max-outer=<k>] [--step=<eta>] [--method=<m>] [--verbose] <problem> <signal>
  {p} simulate [--tol=<tol>] [--seed=<seed>] [--out-dir=<dir>] [--workers=<w>] [--verbose] <problem> <p_traj> <N>

Options:
  -h --help              Show this help.
  -v --version           Show version number.
  --tol=<tol>            Tolerance of the inner solves. [default: 1e-10]
  --seed=<seed>          Seed of generated costs and of sampling. [default: 0]
  --out-dir=<dir>        Directory of the result files. [default: .]
  --solver=<name>        Force "linear", "normalized" or "general".
  --lambda-method=<m>    Multiplier solve of the general solver,
                         "bisection_newton", "gradient_descent" or
                         "direct_convex". [default: bisection_newton]
  --archive              Also write the solution as a Cap'n Proto
                         archive in <dir>/archive.
  --states=<n>           Number of states of the cyclic model. [default: 8]
  --advance=<q>          Probability to advance along the cycle. [default: 0.8]
  --horizon=<T>          Number of time slots. [default: 50]
  --uniform-gamma        Penalize every transition with the same weight.
  --strict-paper-gamma   Penalize the wrap transition as off-cycle.
  --penalize-wrap        Same as --strict-paper-gamma.
  --outer-tol=<tol>      Tracking tolerance on the consumption. [default: 1e-6]
  --max-outer=<k>        Budget of outer iterations. [default: 500]
  --step=<eta>           Initial step of the "ascent" method. [default: 0.5]
  --method=<m>           Outer method, "quasi_newton" or "ascent".
                         [default: quasi_newton]
  --workers=<w>          Threads sampling device blocks. [default: 1]
  --verbose              Show debug messages.

Exit status:
  0 success, 2 unreadable input file, 3 solver did not converge,
  4 invalid or infeasible input, 5 target not tracked within budget.

Examples:

- Generate the 8-state cyclic model and solve it.

  {p} gen-model --seed=1 model.json
  {p} solve --out-dir=out model.json

- Track a consumption signal (CSV with the columns t,s).

  {p} track --out-dir=out model.json signal.csv

- Sample 100000 devices following the solved policy.

  {p} simulate --out-dir=out model.json out/p_traj.json 100000

""".format(p='ensemblemdp')  # noqa: E501


def cmd_gen_model(
        spec: cyclic_model.CyclicModelSpec,
        out_path,
        seed: int = 0) -> dict:
    """
    Write the problem document of a cyclic model.
    """
    doc = cyclic_model.generate(spec, seed)
    problem_file.write_json(out_path, doc)
    return doc


def _solution_summary(pf, solution: Solution, seconds: float) -> dict:
    cost, penalty = objective_breakdown(pf.problem, solution.p_traj)
    summary = {
        "solver": solution.solver,
        "variant": pf.problem.penalty.variant.value,
        "n": solution.n,
        "T": solution.T,
        "objective": solution.objective,
        "initial_value": solution.initial_value(),
        "phi0": solution.phi_traj[0],
        "cost": float(cost.sum()),
        "penalty": float(penalty.sum()),
        "cost_by_step": cost,
        "penalty_by_step": penalty,
        "mean_entropy": float(np.mean(ensemble_entropy(solution.rho_traj))),
        "lambda": None,
        "timings": {"solve_seconds": seconds},
        "seed": pf.seed,
    }
    if solution.lambda_traj is not None:
        summary["lambda"] = {
            "min": float(solution.lambda_traj.min()),
            "max": float(solution.lambda_traj.max()),
            "mean": float(solution.lambda_traj.mean()),
        }

    return summary


def cmd_solve(
        problem_path,
        out_dir=".",
        tol: float = 1e-10,
        seed: Optional[int] = None,
        solver: Optional[str] = None,
        lambda_method: str = "bisection_newton",
        archive: bool = False) -> Solution:
    """
    Solve a problem file and write rho.csv, p_traj.json and summary.json.
    """
    out_dir = Path(out_dir)
    pf = problem_file.load_problem(problem_path, seed)
    cfg = LambdaSolveConfig(method=lambda_method, tol=tol)
    start = time.perf_counter()
    solution = solvers.solve(pf.problem, solver, cfg)
    seconds = time.perf_counter() - start

    problem_file.write_trajectory_csv(
        out_dir / "rho.csv", solution.rho_traj, pf.state_names())
    problem_file.write_p_traj(out_dir / "p_traj.json", solution.p_traj)
    summary = _solution_summary(pf, solution, seconds)
    summary["tol"] = tol
    if archive:
        TrajectoryArchive(out_dir / "archive").write_solution(solution)

    problem_file.write_json(out_dir / "summary.json", summary)
    return solution


def cmd_track(
        problem_path,
        signal_path,
        out_dir=".",
        tol: float = 1e-10,
        seed: Optional[int] = None,
        config: Optional[tracker.TrackerConfig] = None,
) -> tracker.TrackingResult:
    """
    Track a consumption signal and write summary.json, residuals.csv
    and rho.csv.
    """
    out_dir = Path(out_dir)
    pf = problem_file.load_problem(problem_path, seed)
    if pf.epsilon is None:
        raise ProblemFileError(
            f"'{problem_path}' has no 'epsilon'; it is required to track.")

    target = problem_file.load_signal(signal_path, pf.problem.T)
    tp = tracker.TrackingProblem(pf.problem, pf.epsilon, target)
    config = config or tracker.TrackerConfig()
    start = time.perf_counter()
    result = tracker.track(tp, config)
    seconds = time.perf_counter() - start

    solution = result.solution
    consumed = tracker.consumption(solution.rho_traj, tp.epsilon)
    problem_file.write_csv(
        out_dir / "residuals.csv",
        ["t", "s", "consumption", "residual", "xi"],
        ([t, s, c, r, x] for t, s, c, r, x in zip(
            range(1, tp.T + 1), target, consumed,
            result.tracking_residuals, result.xi_traj)))
    problem_file.write_trajectory_csv(
        out_dir / "rho.csv", solution.rho_traj, pf.state_names())

    summary = _solution_summary(pf, solution, seconds)
    summary.update({
        "tol": tol,
        "converged": result.converged,
        "outer_iterations": result.outer_iterations,
        "max_residual": result.max_residual,
        "outer_tol": config.outer_tol,
        "method": config.method.value,
        "xi": result.xi_traj,
        "residual_history": list(result.residual_history),
    })
    problem_file.write_json(out_dir / "summary.json", summary)
    return result


def cmd_simulate(
        problem_path,
        p_traj_path,
        n_devices: int,
        seed: int = 0,
        out_dir=".",
        workers: int = 1,
        tol: float = 1e-10) -> simulator.SimulationRun:
    """
    Sample devices and write empirical_rho.csv and
    empirical_consumption.csv.
    """
    out_dir = Path(out_dir)
    pf = problem_file.load_problem(problem_path, seed)
    p = problem_file.load_p_traj(p_traj_path)
    if p.shape != (pf.problem.T, pf.problem.n, pf.problem.n):
        raise DimensionError(
            f"p_traj {p.shape} does not match the problem "
            f"(T={pf.problem.T}, n={pf.problem.n}).")

    run = simulator.sample(
        p, pf.problem.rho0, n_devices, seed, workers=workers, tol=tol)
    problem_file.write_trajectory_csv(
        out_dir / "empirical_rho.csv", run.empirical_rho, pf.state_names())
    if pf.epsilon is None:
        logger.warning(
            "The problem has no 'epsilon'; consumption is not written.")
    else:
        problem_file.write_csv(
            out_dir / "empirical_consumption.csv",
            ["t", "consumption"],
            ([t, c] for t, c in enumerate(
                simulator.empirical_consumption(run, pf.epsilon), start=1)))

    return run


def _run(args) -> int:
    tol = float(args["--tol"])
    seed = int(args["--seed"])
    out_dir = Path(args["--out-dir"])

    if args["gen-model"]:
        penalize_wrap = args["--strict-paper-gamma"] or args["--penalize-wrap"]
        spec = cyclic_model.CyclicModelSpec(
            n_states=int(args["--states"]),
            advance_prob=float(args["--advance"]),
            horizon=int(args["--horizon"]),
            uniform_gamma=args["--uniform-gamma"],
            penalize_wrap=penalize_wrap)
        cmd_gen_model(spec, args["<out_path>"], seed)
        return EXIT_OK

    if args["solve"]:
        cmd_solve(
            args["<problem>"], out_dir, tol, seed,
            solver=args["--solver"],
            lambda_method=args["--lambda-method"],
            archive=args["--archive"])
        return EXIT_OK

    if args["track"]:
        config = tracker.TrackerConfig(
            outer_tol=float(args["--outer-tol"]),
            max_outer=int(args["--max-outer"]),
            step=float(args["--step"]),
            method=args["--method"],
            solver=args["--solver"],
            lambda_config=LambdaSolveConfig(tol=tol))
        result = cmd_track(
            args["<problem>"], args["<signal>"], out_dir, tol, seed, config)
        if not result.converged:
            print("Target not tracked: max residual {:.3e} after {} "
                  "iterations; see {}.".format(
                      result.max_residual, result.outer_iterations,
                      out_dir / "summary.json"),
                  file=sys.stderr)
            return EXIT_NOT_TRACKED

        return EXIT_OK

    if args["simulate"]:
        cmd_simulate(
            args["<problem>"], args["<p_traj>"], int(args["<N>"]), seed,
            out_dir, workers=int(args["--workers"]), tol=tol)
        return EXIT_OK

    return EXIT_OK


def main(argv=None):
    args = docopt(HELP, argv=argv)

    if args['--version']:
        print(EnsembleMDP.__version__)
        sys.exit(EXIT_OK)

    logging.basicConfig(
        level=logging.DEBUG if args["--verbose"] else logging.WARNING,
        format="%(levelname)s:%(name)s:%(message)s")

    try:
        code = _run(args)
    except ProblemFileError as e:
        print(f"Can not read input: {e}", file=sys.stderr)
        code = EXIT_PARSE
    except ConvergenceError as e:
        print(f"Solver did not converge: {e}", file=sys.stderr)
        code = EXIT_CONVERGENCE
    except InfeasibleTargetError as e:
        print("Infeasible target: s({}) = {} violates the bound {}.".format(
            e.t, e.value, e.bound), file=sys.stderr)
        code = EXIT_INVALID
    except (EnsembleMDPError, ValueError) as e:
        print(f"Invalid input: {e}", file=sys.stderr)
        code = EXIT_INVALID

    sys.exit(code)


if __name__ == "__main__":
    main()
