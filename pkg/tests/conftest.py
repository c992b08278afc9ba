import pytest
from helpers import analytic_model

from hjbnav import models
from hjbnav.env import Rectangle


@pytest.fixture(scope="session")
def street_models(tmp_path_factory):
    """Analytic stand-ins for the street-crossing car and goal models, written to disk."""
    root = tmp_path_factory.mktemp("models")
    models.save_model(analytic_model(Rectangle(4.0, 2.0), (0.8, 0.0)), root / "car.json")
    models.save_model(analytic_model(Rectangle(2.0, 2.0)), root / "goal.json")
    return root


ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, passed, detail)``."""

    def record(n: int, passed: bool, detail: str) -> None:
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE.append((n, passed, line))

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
