import numpy as np
import pytest

from xychain.model import ChainSpec, DisorderSpec, EnsembleConfig, UniformInterval


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_chain(rng, n, isotropic=False):
    mu = rng.uniform(0.5, 1.5, n - 1)
    gamma = np.zeros(n - 1) if isotropic else rng.uniform(-0.8, 0.8, n - 1)
    if isotropic:
        mu = np.full(n - 1, 1.0)
    return ChainSpec(n, mu, gamma, rng.uniform(-2, 2, n))


def strong_disorder(n, realizations, seed=0, **kw):
    return EnsembleConfig(
        ChainSpec.uniform(n), DisorderSpec(UniformInterval(0, 1), 4.0, seed, realizations), **kw
    )


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a one-line verdict for the acceptance summary and echo it."""

    def _report(label: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
