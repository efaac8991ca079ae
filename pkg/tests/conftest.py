from pathlib import Path

import pytest

from problem_file import build_problem, load_problem_file

PROBLEMS_DIR = Path(__file__).resolve().parent.parent / "problems"


def pytest_addoption(parser):
    parser.addoption(
        "--acceptance-n",
        type=int,
        default=2048,
        help="Grid size for the large scalar acceptance solve (default: 2048)",
    )


@pytest.fixture(scope="session")
def acceptance_n(request):
    return request.config.getoption("--acceptance-n")


@pytest.fixture(scope="session")
def problems_dir():
    """Directory with the bundled example problem files"""
    if not PROBLEMS_DIR.is_dir():
        pytest.exit(f"Example problems not found at {PROBLEMS_DIR}", returncode=1)
    return PROBLEMS_DIR


@pytest.fixture(scope="session")
def load_problem(problems_dir):
    """Factory: example name -> (ProblemFile, ProblemSpec)"""
    cache = {}

    def load(name: str):
        if name not in cache:
            pf = load_problem_file(problems_dir / f"{name}.json")
            cache[name] = (pf, build_problem(pf))
        return cache[name]

    return load
