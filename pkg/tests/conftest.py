import shutil
from importlib import resources
from pathlib import Path

import pytest

from conflictcast import cli

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def copy_mini(dest: Path) -> Path:
    with resources.as_file(resources.files("conflictcast").joinpath("data/mini")) as src:
        shutil.copytree(src, dest)
    return dest


@pytest.fixture
def mini_dir(tmp_path) -> Path:
    return copy_mini(tmp_path / "mini")


@pytest.fixture(scope="session")
def mini_run(tmp_path_factory) -> Path:
    """A completed offline run of the bundled mini-corpus; returns the run directory."""
    root = copy_mini(tmp_path_factory.mktemp("mini-run") / "mini")
    code = cli.main(["all", "--config", str(root / "config.yaml"), "--no-figures"])
    assert code == 0
    return root / "runs" / "mini"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
