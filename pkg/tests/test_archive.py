import numpy as np
import pytest

from EnsembleMDP import general_solver, ls_solver
from EnsembleMDP.archive import TrajectoryArchive
from EnsembleMDP.exceptions import DimensionError, ProblemFileError


@pytest.fixture
def linear_solution(instances):
    return ls_solver.solve(instances.problem(4, 7, "uniform"))


@pytest.fixture
def archive(tmp_path, linear_solution):
    archive = TrajectoryArchive(tmp_path / "archive", page_size=3)
    archive.write_solution(linear_solution)
    yield archive
    archive.unload()


def test_config(archive, linear_solution):
    config = archive.get_config()
    assert config["n"] == 4
    assert config["T"] == 7
    assert config["page_size"] == 3
    assert config["solver"] == "linear"
    assert config["objective"] == linear_solution.objective
    assert not config["has_multiplier"]
    assert archive.count_steps() == 8


def test_pages(archive):
    pages = sorted(p.name for p in archive.archive_dir.glob("page_*.bin"))
    assert pages == ["page_000.bin", "page_001.bin", "page_002.bin"]


def test_read_solution(archive, linear_solution):
    restored = archive.read_solution()
    np.testing.assert_array_equal(restored.p_traj, linear_solution.p_traj)
    np.testing.assert_array_equal(restored.rho_traj, linear_solution.rho_traj)
    np.testing.assert_array_equal(restored.phi_traj, linear_solution.phi_traj)
    assert restored.lambda_traj is None
    assert restored.solver == "linear"


def test_get_step(archive, linear_solution):
    step = archive.get_step(4)
    assert step.t == 4
    np.testing.assert_array_equal(list(step.rho), linear_solution.rho_traj[4])
    last = archive.get_step(7, as_dict=True)
    assert last["t"] == 7
    assert len(last.get("transition", [])) == 0
    with pytest.raises(DimensionError):
        archive.get_step(8)


def test_retrieve_steps(archive):
    ts = [step["t"] for step in archive.retrieve_steps(as_dict=True)]
    assert ts == list(range(8))
    ts = [step.t for step in archive.retrieve_steps(limit=4, offset=2)]
    assert ts == [2, 3, 4, 5]
    ts = [step.t for step in archive.retrieve_steps(limit=10, offset=6)]
    assert ts == [6, 7]


def test_page_cache_is_bounded(tmp_path, instances):
    archive = TrajectoryArchive(tmp_path / "archive", page_size=1)
    archive.write_solution(ls_solver.solve(instances.problem(3, 20)))
    archive.read_rho_traj()
    assert len(archive.page_cache) == TrajectoryArchive.MAX_CACHED_PAGES
    archive.unload()
    assert len(archive.page_cache) == 0


def test_multipliers(tmp_path, instances):
    solution = general_solver.solve(instances.problem(3, 4, "full"))
    archive = TrajectoryArchive(tmp_path / "archive")
    archive.write_solution(solution)
    restored = archive.read_solution()
    np.testing.assert_array_equal(restored.lambda_traj, solution.lambda_traj)
    assert restored.solver == "general"
    archive.unload()


def test_rewrite_replaces_content(tmp_path, instances):
    archive = TrajectoryArchive(tmp_path / "archive", page_size=2)
    archive.write_solution(ls_solver.solve(instances.problem(3, 9)))
    solution = ls_solver.solve(instances.problem(3, 2))
    archive.write_solution(solution)
    assert archive.count_steps() == 3
    assert not (archive.archive_dir / "page_002.bin").exists()
    np.testing.assert_array_equal(archive.read_p_traj(), solution.p_traj)
    archive.delete()
    assert not archive.exists()


def test_missing_archive(tmp_path):
    archive = TrajectoryArchive(tmp_path / "nothing")
    assert not archive.exists()
    with pytest.raises(ProblemFileError):
        archive.get_config()
