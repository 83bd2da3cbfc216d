import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from hrsowc.geometry import DisconnectedUserError, make_scenario  # noqa: E402
from hrsowc.pipeline import prepare  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_ACCEPTANCE = []


def record(number, name, passed, detail=""):
    """Remember one acceptance line for the terminal summary."""
    _ACCEPTANCE.append((number, name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {name}: {detail}")


def connected_instance(seed, num_users=6, num_groups=2, p_total=1.0, **kw):
    """Prepared instance for the first connected placement at or after ``seed``."""
    for s in range(seed, seed + 1000):
        scen = make_scenario(num_users, seed=s, **kw)
        try:
            return prepare(scen, num_groups, p_total, seed=s)
        except DisconnectedUserError:
            continue
    raise RuntimeError("no connected placement")


@pytest.fixture
def inst6():
    return connected_instance(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
