import pytest

from icotracer.grid import build_grid


def pytest_addoption(parser):
    parser.addoption(
        "--full", action="store_true", default=False,
        help="also run the large experiment configurations (slow)",
    )


@pytest.fixture
def full_run(request):
    if not request.config.getoption("--full"):
        pytest.skip("needs --full")
    return True


@pytest.fixture(scope="session")
def grid_r2b0():
    return build_grid(2, 0)


@pytest.fixture(scope="session")
def grid_r2b1():
    return build_grid(2, 1)


@pytest.fixture(scope="session")
def grid_r2b2():
    return build_grid(2, 2)


@pytest.fixture(scope="session")
def grid_r2b3():
    return build_grid(2, 3)


@pytest.fixture(scope="session")
def grid_r2b4():
    return build_grid(2, 4)
