"""
Reading and writing of problem documents and result files.

Problem documents are JSON objects with the keys

- ``n``, ``T``: number of states and horizon.
- ``states`` (optional): state names.
- ``pbar``: n x n natural matrix, rows = destination, columns = source.
- ``rho0``: ``"steady"`` or an explicit probability vector.
- ``costs``: explicit (T, n) array or
  ``{"generator": "uniform_noise", "base": b, "states": [...]}``.
- ``penalty``: ``{"uniform": ...}``, ``{"per_source": ...}`` or
  ``{"full": ...}``, time-independent or given for every step.
- ``seed`` (optional): seed of generated costs.
- ``epsilon``, ``model`` (optional): consumption per state and the
  parameters of a generated model.

Result files are written atomically. Trajectories are CSV files with
a header row and numbers printed with 17 significant digits.
"""
import csv
from dataclasses import dataclass
import io
import json
from logging import getLogger
import os
from pathlib import Path
import tempfile
from typing import Any, Iterable, Optional, Sequence, Tuple

import numpy as np

from .archive import TrajectoryArchive
from .core import PenaltySchedule, Problem, StochasticMatrix, steady_state
from .cyclic_model import random_on_state_costs
from .exceptions import DimensionError, EnsembleMDPError, ProblemFileError

logger = getLogger(__name__)

ORIENTATION = "rows=destination,columns=source"


@dataclass(frozen=True, eq=False)
class ProblemFile:
    """
    A parsed problem document.

    Attributes
    ----------
    problem: Problem
        The problem with every generator resolved.
    seed: int
        Seed used to resolve generated costs.
    states: tuple of str, optional
        State names.
    epsilon: ndarray, optional
        Consumption per state.
    model: dict, optional
        Parameters of the model generator.
    """

    problem: Problem
    seed: int = 0
    states: Optional[Tuple[str, ...]] = None
    epsilon: Optional[np.ndarray] = None
    model: Optional[dict] = None

    def state_names(self) -> Tuple[str, ...]:
        if self.states is not None:
            return self.states

        return tuple(f"rho_{i + 1}" for i in range(self.problem.n))


def _require(doc: dict, key: str) -> Any:
    try:
        return doc[key]
    except KeyError:
        raise ProblemFileError(f"Problem document lacks the key '{key}'.")


def _parse_penalty(spec, T: int) -> PenaltySchedule:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ProblemFileError(
            "'penalty' must be an object with exactly one of the keys "
            "'uniform', 'per_source' or 'full'.")

    (variant, gamma), = spec.items()
    constructors = {
        "uniform": PenaltySchedule.uniform,
        "per_source": PenaltySchedule.per_source,
        "full": PenaltySchedule.full,
    }
    if variant not in constructors:
        raise ProblemFileError(f"Unknown penalty variant '{variant}'.")

    return constructors[variant](np.asarray(gamma, dtype=float), T=T)


def _parse_costs(spec, T: int, n: int, seed: int):
    if isinstance(spec, dict):
        if spec.get("generator") != "uniform_noise":
            raise ProblemFileError(
                "Unknown cost generator '{}'.".format(spec.get("generator")))

        states = spec.get("states", list(range(n // 2)))
        return random_on_state_costs(
            T, n, states, float(spec.get("base", 1.0)), seed)

    values = np.asarray(spec, dtype=float)
    if values.shape != (T, n):
        raise DimensionError(
            f"'costs' must be a ({T}, {n}) array, got {values.shape}.")

    return values


def parse_problem(doc: dict, seed: Optional[int] = None) -> ProblemFile:
    """
    Build a ProblemFile from a decoded problem document.

    Parameters
    ----------
    doc: dict
        The JSON document.
    seed: int, optional
        Seed used when the document carries none; 0 if both are missing.

    Returns
    -------
    ProblemFile
        The parsed document.

    Notes
    -----
    - Structural problems (missing keys, wrong types) raise
      ProblemFileError; invalid values raise the domain errors of
      ``core``.
    """
    if not isinstance(doc, dict):
        raise ProblemFileError("A problem document must be a JSON object.")

    try:
        n = int(_require(doc, "n"))
        T = int(_require(doc, "T"))
        seed = int(doc.get("seed", 0 if seed is None else seed))
        pbar = StochasticMatrix(np.asarray(_require(doc, "pbar"), dtype=float))
        if pbar.n != n:
            raise DimensionError(f"'pbar' has {pbar.n} states, n is {n}.")

        rho0 = _require(doc, "rho0")
        if isinstance(rho0, str):
            if rho0 != "steady":
                raise ProblemFileError(f"Unknown rho0 keyword '{rho0}'.")

            rho0 = steady_state(pbar)

        costs = _parse_costs(_require(doc, "costs"), T, n, seed)
        penalty = _parse_penalty(_require(doc, "penalty"), T)
        epsilon = doc.get("epsilon")
        if epsilon is not None:
            epsilon = np.asarray(epsilon, dtype=float)
            if epsilon.shape != (n,):
                raise DimensionError(
                    f"'epsilon' must have length {n}, got {epsilon.shape}.")

        states = doc.get("states")
        if states is not None:
            states = tuple(str(s) for s in states)
            if len(states) != n:
                raise DimensionError(
                    f"'states' names {len(states)} states, n is {n}.")

    except (TypeError, ValueError) as e:
        if isinstance(e, EnsembleMDPError):
            raise

        raise ProblemFileError(f"Malformed problem document: {e}") from e

    problem = Problem(pbar=pbar, costs=costs, penalty=penalty, rho0=rho0)
    return ProblemFile(
        problem=problem,
        seed=seed,
        states=states,
        epsilon=epsilon,
        model=doc.get("model"))


def serialize_problem(pf: ProblemFile) -> dict:
    """
    Problem document with every value explicit.
    """
    prob = pf.problem
    doc = {
        "n": prob.n,
        "T": prob.T,
        "pbar": prob.pbar.entries.tolist(),
        "rho0": prob.rho0.values.tolist(),
        "costs": prob.costs.values.tolist(),
        "penalty": {prob.penalty.variant.value: prob.penalty.gamma.tolist()},
        "seed": pf.seed,
    }
    if pf.states is not None:
        doc["states"] = list(pf.states)

    if pf.epsilon is not None:
        doc["epsilon"] = pf.epsilon.tolist()

    if pf.model is not None:
        doc["model"] = pf.model

    return doc


def _read_json(path) -> Any:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except OSError as e:
        raise ProblemFileError(f"Can not read '{path}': {e}") from e
    except ValueError as e:
        raise ProblemFileError(f"'{path}' is not valid JSON: {e}") from e


def load_problem(path, seed: Optional[int] = None) -> ProblemFile:
    """
    Read and parse a problem document file.
    """
    logger.debug("Loading problem from '{}'.".format(path))
    return parse_problem(_read_json(path), seed)


def atomic_write_text(path, text: str) -> Path:
    """
    Write a text file through a temporary file and a rename.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(
        dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)

        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)

        raise

    logger.debug("Wrote '{}'.".format(path))
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()

    if isinstance(obj, np.generic):
        return obj.item()

    raise TypeError(f"{type(obj).__name__} is not JSON serializable.")


def write_json(path, obj) -> Path:
    return atomic_write_text(
        path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def format_number(x) -> str:
    return "%.17g" % x


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """
    Write a CSV file; floats are printed with 17 significant digits.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([
            v if isinstance(v, (int, np.integer, str)) else format_number(v)
            for v in row])

    return atomic_write_text(path, buf.getvalue())


def write_trajectory_csv(
        path,
        values,
        names: Sequence[str],
        first_t: int = 0) -> Path:
    """
    Write a (steps, n) array as CSV with a leading ``t`` column.
    """
    values = np.asarray(values)
    return write_csv(
        path,
        ["t"] + list(names),
        ([first_t + i] + list(row) for i, row in enumerate(values)))


def write_p_traj(path, p_traj) -> Path:
    p = np.asarray(p_traj, dtype=float)
    return write_json(path, {
        "orientation": ORIENTATION,
        "T": p.shape[0],
        "n": p.shape[1],
        "p": p.tolist(),
    })


def load_p_traj(path) -> np.ndarray:
    """
    Read a transition trajectory from p_traj.json or an archive directory.
    """
    path = Path(path)
    if path.is_dir():
        archive = TrajectoryArchive(path)
        try:
            return archive.read_p_traj()
        finally:
            archive.unload()

    doc = _read_json(path)
    try:
        if doc.get("orientation", ORIENTATION) != ORIENTATION:
            raise ProblemFileError(
                "Unsupported orientation '{}'.".format(doc["orientation"]))

        p = np.asarray(doc["p"], dtype=float)
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise ProblemFileError(f"Malformed trajectory file '{path}': {e}")

    if p.ndim != 3 or p.shape[1] != p.shape[2]:
        raise ProblemFileError(
            f"'{path}' must hold a (T, n, n) array, got {p.shape}.")

    return p


def load_signal(path, T: int) -> np.ndarray:
    """
    Read a target signal CSV with the header ``t,s`` and rows t = 1..T.
    """
    try:
        with open(path, "r", newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise ProblemFileError(f"Can not read '{path}': {e}") from e

    try:
        ts = [int(row["t"]) for row in rows]
        s = np.array([float(row["s"]) for row in rows])
    except (KeyError, TypeError, ValueError) as e:
        raise ProblemFileError(
            f"'{path}' must be a CSV file with the columns t,s: {e}") from e

    if ts != list(range(1, T + 1)):
        raise ProblemFileError(
            f"'{path}' must list t = 1..{T} in order, got {len(ts)} rows.")

    return s
