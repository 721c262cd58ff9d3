import functools
import os

import pytest

from iotsec.config import parse_config
from iotsec.crypto import SymmetricKey

KAT_DIR = os.path.join(os.path.dirname(__file__), "kat")


def parse_kat(path):
    """Read an LWC-format KAT file into a list of dicts of bytes."""
    entries, cur = [], {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                if cur:
                    entries.append(cur)
                    cur = {}
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            cur[key] = int(value) if key == "Count" else bytes.fromhex(value)
    if cur:
        entries.append(cur)
    return entries


@functools.lru_cache(maxsize=None)
def default_run(mode="proposed"):
    from iotsec.scenario import run_scenario
    return run_scenario(parse_config("default").with_mode(mode))


@pytest.fixture(scope="session")
def cfg():
    return parse_config("default")


@pytest.fixture(scope="session")
def proposed_run():
    return default_run("proposed")


@pytest.fixture(scope="session")
def perimeter_run():
    return default_run("perimeter")


@pytest.fixture(scope="session")
def cloud_run():
    return default_run("cloud")


@pytest.fixture
def key():
    return SymmetricKey(bytes(range(16)))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
