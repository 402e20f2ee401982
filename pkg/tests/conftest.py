import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from seqpointnet.config import ModelConfig, tiny_config  # noqa: E402
from seqpointnet.data import synth_dataset  # noqa: E402
from seqpointnet.model import init_params  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def default_cfg():
    return ModelConfig()


@pytest.fixture(scope="session")
def default_params(default_cfg):
    return init_params(default_cfg, seed=7, bias_scale=0.05)


@pytest.fixture(scope="session")
def synth_small():
    """Two sequences per class at full frame size."""
    return synth_dataset(2, seed=11)


@pytest.fixture
def tiny_seq(tiny_cfg):
    return np.random.default_rng(5).uniform(-1, 1, (tiny_cfg.frames, tiny_cfg.num_points, 3))


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request, capsys):
    """Print one ``criterion N: PASS|FAIL|SKIP detail`` line, live and in the summary."""
    def emit(number, status, detail):
        line = f"criterion {number}: {status}  {detail}"
        request.config.stash.setdefault(_VERDICTS, []).append(line)
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
