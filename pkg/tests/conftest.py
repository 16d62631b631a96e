import shlex
import sys
from pathlib import Path

import numpy as np
import pytest

from detnas_bench.evaluator import Evaluator, EvaluatorSpec
from detnas_bench.self_evolve import initial_pool

STUBS = Path(__file__).parent / "stubs"

# acceptance outcomes, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def stub_command(name: str) -> str:
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(STUBS / name))}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_spec():
    return EvaluatorSpec("synthetic", oracle_seed=1)


@pytest.fixture(scope="session")
def small_pool(synthetic_spec):
    """A 200-record evaluated mixed-strategy pool (noise on)."""
    return initial_pool(Evaluator(synthetic_spec), seed=5, n_random=40, n_stratified=80,
                        n_lhs=80)
