import numpy as np
import pytest

from ambized.channel import ChannelCoeffs, NoiseModel, paper_scenario_params
from ambized.harness import Scenario

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """Collects one result line per acceptance criterion for the run summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, passed, detail):
        status = "PASS" if passed is True else ("FAIL" if passed is False else passed)
        line = f"criterion {number}: {status}: {detail}"
        lines.append(line)
        print(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ref():
    return paper_scenario_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def single_tag_scenario(ref, reflect=0.05, sigma2=1.0, wait=0.1, gamma=1.0, jitter="none", step=0.0):
    from dataclasses import replace

    tag = replace(ref.tag_a, wait=wait)
    return Scenario(grid=ref.grid, fsk=ref.fsk, tags=(tag,),
                    chans=ChannelCoeffs(gamma, (reflect,)),
                    noise=NoiseModel(sigma2, phase_jitter=jitter, phase_step=step))


def two_tag_scenario(ref, amp=0.3, rel_db=-10.0, sigma2=1.0, rel_phase=1.0):
    return Scenario(grid=ref.grid, fsk=ref.fsk, tags=(ref.tag_a, ref.tag_b),
                    chans=ChannelCoeffs(1.0, (amp, amp * 10 ** (rel_db / 40) * rel_phase)),
                    noise=NoiseModel(sigma2))
