from collections import OrderedDict
from functools import lru_cache
import json
from logging import getLogger
import math
import mmap
from pathlib import Path
import shutil
from typing import Any, Iterator, Optional

import capnp
import numpy as np

from .core import Solution
from .exceptions import DimensionError, ProblemFileError

capnp.remove_import_hook()
logger = getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent / "trajectory.capnp"


@lru_cache(maxsize=None)
def load_schema() -> Any:
    """
    Load the trajectory schema module.
    """
    return capnp.load(str(SCHEMA_PATH))


class PageReader(object):
    """
    Class that manages a mmapped page file.

    Parameters
    ----------
    page_path: Pathlike
        Path to the page file.
    """

    def __init__(self, page_path: Path):
        self.page_path = page_path
        self.fp = open(self.page_path, "rb")
        self.mm = mmap.mmap(self.fp.fileno(), length=0,
                            access=mmap.ACCESS_READ)
        logger.debug("Assign mmap for '{}'.".format(self.page_path))

    def close(self) -> None:
        if self.mm:
            self.mm.close()
            self.mm = None

        if self.fp:
            self.fp.close()
            self.fp = None

    def __del__(self):
        logger.debug("Release mmap for '{}'.".format(self.page_path))
        self.close()


class TrajectoryArchive(object):
    """
    Portable on-disk store of a solved trajectory.

    Parameters
    ----------
    archive_dir: Path-like
        Directory holding ``config.json`` and the page files.
    page_size: int, optional
        Time steps per page file, used when writing.

    Notes
    -----
    - Every time step t = 0..T is one ``TimeStep`` record; records are
      stored in Cap'n Proto pages ``page_NNN.bin`` read through mmap.
    - Up to ``MAX_CACHED_PAGES`` page readers are kept open.
    """

    PAGE_SIZE = 256
    MAX_CACHED_PAGES = 10

    def __init__(self, archive_dir, page_size: Optional[int] = None):
        self.archive_dir = Path(archive_dir)
        self.page_size = page_size or self.PAGE_SIZE
        self.page_cache = OrderedDict()
        self._config = None

    def __del__(self):
        self.unload()

    def unload(self) -> None:
        """
        Release the cached page readers.
        """
        for reader in self.page_cache.values():
            reader.close()

        self.page_cache.clear()

    def _get_config_path(self) -> Path:
        return self.archive_dir / "config.json"

    def exists(self) -> bool:
        return self._get_config_path().exists()

    def get_config(self) -> dict:
        """
        Get the contents of the config file of the archive.
        """
        if self._config is None:
            try:
                with open(self._get_config_path(), "r") as f:
                    self._config = json.load(f)
            except (OSError, ValueError) as e:
                raise ProblemFileError(
                    f"'{self.archive_dir}' is not a trajectory archive: "
                    f"{e}") from e

        return self._config

    def count_steps(self) -> int:
        """
        Number of stored time steps, T + 1.
        """
        return self.get_config()["count"]

    def _get_page_path(self, pos: int) -> Path:
        page_number = math.floor(pos / self.get_config()["page_size"])
        return self.archive_dir / f"page_{page_number:03d}.bin"

    def get_page_mmap(self, page_path: Path) -> mmap.mmap:
        """
        Get the mmap object of a page file, opening it if needed.
        """
        if page_path in self.page_cache:
            self.page_cache.move_to_end(page_path)
            return self.page_cache[page_path].mm

        self.page_cache[page_path] = PageReader(page_path)
        if len(self.page_cache) > self.MAX_CACHED_PAGES:
            k, v = self.page_cache.popitem(last=False)
            v.close()
            logger.debug("{} had been deleted from the cache.".format(k))

        return self.page_cache[page_path].mm

    def delete(self) -> None:
        """
        Delete the archive directory with its contents.
        """
        self.unload()
        self._config = None
        if self.archive_dir.exists():
            shutil.rmtree(self.archive_dir)

    def _write_page(self, page: int, records: list) -> None:
        schema = load_schema()
        list_obj = schema.TimeStepList.new_message()
        records_prop = list_obj.init("records", len(records))
        for i, record in enumerate(records):
            records_prop[i] = schema.TimeStep.new_message(**record)

        page_path = self.archive_dir / f"page_{page:03d}.bin"
        with open(page_path, "wb") as f:
            list_obj.write(f)

        logger.debug("Wrote {} steps to '{}'.".format(len(records), page_path))

    def write_solution(self, solution: Solution) -> Path:
        """
        Store a solution, replacing any previous archive content.

        Parameters
        ----------
        solution: Solution
            The solved trajectories.

        Returns
        -------
        Path
            The archive directory.
        """
        self.delete()
        self.archive_dir.mkdir(parents=True)
        T, n = solution.T, solution.n
        buffer = []
        page = 0
        for t in range(T + 1):
            record = {
                "t": t,
                "rho": solution.rho_traj[t].tolist(),
                "phi": solution.phi_traj[t].tolist(),
                "multiplier": [],
                "transition": [],
            }
            if t < T:
                record["transition"] = solution.p_traj[t].ravel().tolist()
                if solution.lambda_traj is not None:
                    record["multiplier"] = solution.lambda_traj[t].tolist()

            buffer.append(record)
            if len(buffer) == self.page_size:
                self._write_page(page, buffer)
                buffer = []
                page += 1

        if buffer:
            self._write_page(page, buffer)

        with open(self._get_config_path(), "w") as f:
            json.dump(obj={
                "n": n,
                "T": T,
                "count": T + 1,
                "page_size": self.page_size,
                "orientation": "rows=destination,columns=source",
                "solver": solution.solver,
                "objective": solution.objective,
                "has_multiplier": solution.lambda_traj is not None,
            }, fp=f)

        logger.debug("Archived n={} T={} in '{}'.".format(
            n, T, self.archive_dir))
        return self.archive_dir

    def get_step(self, t: int, as_dict: bool = False) -> Any:
        """
        Get the record of time step t.

        Parameters
        ----------
        t: int
            Time step, 0..T.
        as_dict: bool [False]
            Return a dict instead of a TimeStep object.
        """
        count = self.count_steps()
        if not 0 <= t < count:
            raise DimensionError(
                f"Time step {t} is outside 0..{count - 1}.")

        mm = self.get_page_mmap(self._get_page_path(t))
        with load_schema().TimeStepList.from_bytes(
                buf=mm, traversal_limit_in_words=2**64-1) as list_obj:
            record = list_obj.records[t % self.get_config()["page_size"]]
            if as_dict:
                return record.to_dict()

            return record.as_builder()

    def retrieve_steps(
            self,
            limit: Optional[int] = None,
            offset: Optional[int] = None,
            as_dict: bool = False) -> Iterator[Any]:
        """
        Iterate over stored time steps in order.

        Parameters
        ----------
        limit: int, optional
            Max number of steps. If omitted, all steps are retrieved.
        offset: int, optional
            First time step to retrieve, 0 if omitted.
        as_dict: bool [False]
            Yield dicts instead of TimeStep objects.
        """
        offset = 0 if offset is None else offset
        end = self.count_steps() if limit is None else \
            min(offset + limit, self.count_steps())
        page_size = self.get_config()["page_size"]
        pos = offset
        while pos < end:
            current_path = self._get_page_path(pos)
            mm = self.get_page_mmap(current_path)
            with load_schema().TimeStepList.from_bytes(
                    buf=mm, traversal_limit_in_words=2**64-1) as list_obj:
                while pos < end and self._get_page_path(pos) == current_path:
                    record = list_obj.records[pos % page_size]
                    yield record.to_dict() if as_dict else record
                    pos += 1

    def read_p_traj(self) -> np.ndarray:
        """
        (T, n, n) transition matrices.
        """
        config = self.get_config()
        n, T = config["n"], config["T"]
        p = np.empty((T, n, n))
        for record in self.retrieve_steps(limit=T):
            p[record.t] = np.array(record.transition).reshape(n, n)

        return p

    def read_rho_traj(self) -> np.ndarray:
        """
        (T + 1, n) ensemble states.
        """
        return np.array([
            list(record.rho) for record in self.retrieve_steps()])

    def read_phi_traj(self) -> np.ndarray:
        """
        (T + 1, n) value function.
        """
        return np.array([
            list(record.phi) for record in self.retrieve_steps()])

    def read_solution(self) -> Solution:
        """
        Rebuild the stored Solution.
        """
        config = self.get_config()
        lambda_traj = None
        if config["has_multiplier"]:
            lambda_traj = np.array([
                list(record.multiplier)
                for record in self.retrieve_steps(limit=config["T"])])

        return Solution(
            p_traj=self.read_p_traj(),
            rho_traj=self.read_rho_traj(),
            phi_traj=self.read_phi_traj(),
            objective=config["objective"],
            lambda_traj=lambda_traj,
            solver=config["solver"])
