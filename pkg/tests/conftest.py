import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from circret.corpus import generate_synthetic_corpus  # noqa: E402


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The 8 x 40 synthetic corpus, seed 0."""
    out = tmp_path_factory.mktemp("corpus")
    return generate_synthetic_corpus(out, n_per_family=40, seed=0)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return generate_synthetic_corpus(out, n_per_family=8, seed=3)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
