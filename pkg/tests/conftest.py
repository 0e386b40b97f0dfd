import numpy as np
import pytest

from vocalsketch.demo import demo_ontology, write_demo
from vocalsketch.pipeline import open_workspace
from vocalsketch.utterance_space import build_space


@pytest.fixture(scope="session")
def demo_files(tmp_path_factory):
    directory = tmp_path_factory.mktemp("demo")
    manifest, onto = write_demo(directory)
    return directory, manifest, onto


@pytest.fixture(scope="session")
def demo_ws(demo_files, tmp_path_factory):
    """The 12-referent demo corpus against the 3-pattern test-mode space."""
    _, manifest, _ = demo_files
    root = tmp_path_factory.mktemp("cache")
    return open_workspace(build_space(3), manifest, demo_ontology(), str(root), build=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record and print one acceptance verdict: ``criterion(n, ok, detail)``."""
    store = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        store.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, [])
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(verdicts):
            terminalreporter.write_line(line)
