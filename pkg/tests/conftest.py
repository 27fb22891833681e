import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from textkg import gradcheck, synthetic  # noqa: E402
from textkg.model import TextKGModel  # noqa: E402


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("syn")
    synthetic.generate(str(out), seed=0)
    return str(out)


@pytest.fixture
def tiny():
    """(model, clip) at d_model=16 with every token kind present."""
    config = gradcheck.tiny_config()
    vocab, relations, table, clip = gradcheck.tiny_problem(config, 30, seed=0)
    return TextKGModel(config, vocab, relations, table, seed=0), clip


def central_diff(f, x, eps=1e-5):
    """Elementwise central differences of scalar f at array x (modified in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
