import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from guidecap.pipeline import build_net
from guidecap.trainer import init_params

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_net(variant="soft", seed=0, vocab=12, n_frequent=5, annot_dim=6, hidden=8, embed=6, scale=0.5,
               review_steps=3, **kw):
    net = build_net(variant, vocab_size=vocab, n_frequent=n_frequent, annot_dim=annot_dim, hidden=hidden,
                    embed=embed, review_steps=review_steps, **kw)
    net.params = init_params(net.param_specs(), seed, scale)
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="requested .* frequent words")
        yield


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one pass/fail line, prints it and asserts ``ok``."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
