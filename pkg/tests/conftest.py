import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from orbitllp import chippack, synth  # noqa: E402


@pytest.fixture(scope="session")
def world_source():
    return synth.generate_world(synth.SynthConfig())


@pytest.fixture(scope="session")
def world_pack(world_source):
    """Packed bytes of the default 40x50 synthetic world, splits unassigned."""
    return chippack.pack_bytes(world_source)


@pytest.fixture
def world(world_source, world_pack):
    """A fresh, mutable copy of the default world."""
    ds = chippack.unpack_bytes(world_pack)
    ds.scheme, ds.communes, ds.seed = world_source.scheme, world_source.communes, world_source.seed
    return ds


_ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and again in the terminal summary."""

    def emit(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} -- {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
