import numpy as np
import pytest

from irsbackcom.channel import ChannelSet, Scenario


def random_channels(rng, K=1, L=4, N=4, M=1, scale=1.0) -> ChannelSet:
    def cn(*shape):
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    return ChannelSet(h_CT=cn(K, L), H_CI=cn(N, L), H_CR=cn(M, L), h_TI=cn(K, N),
                      H_RI=cn(N, M), h_TR=cn(K, M))


def reference_scenario(**kw) -> Scenario:
    base = dict(ce_position=[0, 0], reader_position=[100, 0], irs_center=[20, 20],
                irs_normal=[0, -1, 0], tag_positions=[[25, 0]])
    base.update(kw)
    if "tag_positions" in kw and "K" not in kw:
        base["K"] = len(kw["tag_positions"])
    return Scenario(**base)


def unit_scenario(**kw) -> Scenario:
    """Scenario whose thresholds suit unit-scale random channels."""
    base = dict(noise_power_dbm=30.0, gamma_th_db=0.0)
    base.update(kw)
    return reference_scenario(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register their verdicts here for the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
