import numpy as np
import pytest

from demon_lab.channels import (
    BathChannel,
    LabeledKrausSet,
    constant_policy,
    make_bath_channel,
    make_readout_povm,
    markov_ground_policy,
)
from demon_lab.cli.config import config_from_preset
from demon_lab.ensemble import ExperimentConfig, evolve_history_tree

KET0 = np.array([[1, 0], [0, 0]], dtype=complex)
KET1 = np.array([[0, 0], [0, 1]], dtype=complex)
MIXED = np.eye(2, dtype=complex) / 2


def identity_bath():
    return BathChannel(LabeledKrausSet(np.eye(2)[None].astype(complex), (0,)))


def perfect_correction(cycles=1):
    """Error-free readout followed by a pi pulse after y = 1, no bath."""
    return ExperimentConfig(MIXED, make_readout_povm(0.0, 0.0), cycles, markov_ground_policy(), identity_bath())


def degenerate_config():
    """Initial |0><0| with readout that never mislabels |0>: inverse start states fall outside the support."""
    return ExperimentConfig(KET0, make_readout_povm(0.0, 0.3), 3, markov_ground_policy(),
                            make_bath_channel(0.2 * np.pi, 0.3 * np.pi, 0.05))


def small_config(cycles=3, policy=None):
    return ExperimentConfig(MIXED, make_readout_povm(0.1, 0.3), cycles, policy or markov_ground_policy(),
                            make_bath_channel(0.2 * np.pi, 0.3 * np.pi, 0.05))


@pytest.fixture(scope="session")
def fig2():
    return config_from_preset("fig2")


@pytest.fixture(scope="session")
def fig2_tree(fig2):
    return evolve_history_tree(fig2)


@pytest.fixture(scope="session")
def stabilization():
    return {k: config_from_preset(f"fig4k{k}") for k in range(1, 5)}


@pytest.fixture(scope="session")
def stabilization_trees(stabilization):
    return {k: evolve_history_tree(cfg) for k, cfg in stabilization.items()}


__all__ = ["KET0", "KET1", "MIXED", "constant_policy", "degenerate_config", "identity_bath",
           "perfect_correction", "small_config"]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
