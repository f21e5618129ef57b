import numpy as np
import pytest

from demon_lab.channels import constant_policy, make_bath_channel, make_readout_povm
from demon_lab.ensemble import (
    ExperimentConfig,
    backward_qct,
    efficiency,
    entropy_production,
    evolve_history_tree,
    fb_information,
    marginalize_k,
    population,
    qct_entropy,
    thermo_ledger,
    transfer_entropy,
)
from demon_lab.errors import ConfigError, EnumerationCapError
from demon_lab.qmath import holevo_information

from conftest import MIXED, identity_bath, perfect_correction, small_config


def test_perfect_correction_single_cycle():
    tree = evolve_history_tree(perfect_correction(1))
    np.testing.assert_allclose(tree.prob[1], [0.5, 0.5])
    np.testing.assert_allclose(tree.rho[2], [np.diag([1, 0])] * 2, atol=1e-15)
    assert entropy_production(tree).sigma[0] == pytest.approx(-np.log(2))
    assert qct_entropy(tree).total == pytest.approx(np.log(2))
    assert transfer_entropy(tree).total == pytest.approx(np.log(2))
    assert efficiency(tree, 1) == pytest.approx(1.0)


def test_uninformative_readout_without_feedback_keeps_mixed_state():
    cfg = ExperimentConfig(MIXED, make_readout_povm(0.5, 0.5), 4, constant_policy(0.0),
                           make_bath_channel(0.3, 0.7, 0.02))
    tree = evolve_history_tree(cfg)
    for level in range(1, 6):
        np.testing.assert_allclose(tree.average_state(level), MIXED, atol=1e-15)
    np.testing.assert_allclose(transfer_entropy(tree).increments, 0, atol=1e-15)
    assert efficiency(tree, 4) is None


def test_uninformative_measurement_of_coherent_state_has_negative_increment():
    rho = np.array([[0.6, 0.3], [0.3, 0.4]], dtype=complex)
    basis = np.linalg.eigh(rho)[1]
    cfg = ExperimentConfig(rho, make_readout_povm(0.5, 0.5), 1, constant_policy(0.0), identity_bath(),
                           initial_basis=basis)
    tree = evolve_history_tree(cfg)
    from demon_lab.qmath import vn_entropy
    expected = vn_entropy(rho) - vn_entropy(np.diag(np.diag(rho)))
    assert qct_entropy(tree).increments[0] == pytest.approx(expected, abs=1e-12)
    assert expected < 0


def test_identity_dynamics_has_zero_entropy_production():
    cfg = ExperimentConfig(MIXED, make_readout_povm(0.5, 0.5), 3, constant_policy(0.0), identity_bath())
    np.testing.assert_allclose(entropy_production(evolve_history_tree(cfg)).sigma, 0, atol=1e-15)


def test_population_and_cap():
    tree = evolve_history_tree(small_config(2))
    assert population(tree, 1, 1) == pytest.approx(0.5)
    with pytest.raises(EnumerationCapError):
        evolve_history_tree(small_config(3).with_cycles(20))


def test_probabilities_normalized(fig2_tree):
    for n in range(fig2_tree.cycles + 1):
        assert fig2_tree.prob[n].sum() == pytest.approx(1.0, abs=1e-12)


def test_marginalization_examples(fig2_tree):
    full = marginalize_k(fig2_tree, 5, 3)
    np.testing.assert_allclose(full.probs, fig2_tree.prob[3])
    np.testing.assert_allclose(full.states, fig2_tree.tau[3])
    one = marginalize_k(fig2_tree, 1, 2)
    assert one.probs.shape == (2,) and one.probs.sum() == pytest.approx(1.0)


def test_ground_policy_ledger(fig2_tree):
    led = thermo_ledger(fig2_tree, (1,))
    assert np.all(led.sigma.cumulative < 0)
    assert np.all(led.sigma.cumulative >= -led.i_qct.cumulative - 1e-9)
    assert led.populations[-1, 0] > led.populations[-1, 1]


def test_feedback_information_orders(stabilization_trees):
    tree = stabilization_trees[4]
    assert fb_information(tree, 1).cumulative[-1] < fb_information(tree, 4).cumulative[-1]
    for k, t in stabilization_trees.items():
        qct = qct_entropy(t).cumulative
        chain = [fb_information(t, j).cumulative for j in range(k, 5)]
        for lo, hi in zip(chain, chain[1:] + [qct]):
            assert np.all(lo <= hi + 1e-9)


def test_feedback_information_for_full_windows():
    tree = evolve_history_tree(small_config(3))
    fb = fb_information(tree, 3).cumulative[-1]
    probs = tree.prob[3]
    final = holevo_information([(p, s) for p, s in zip(probs, tree.dephased_next(3)) if p > 0])
    assert fb == pytest.approx(qct_entropy(tree).total - final, abs=1e-12)


def test_backward_routes_agree_and_shrink(stabilization_trees):
    tree = stabilization_trees[2]
    values = []
    for k in range(1, 5):
        info = backward_qct(tree, k)
        assert info.discrepancy < 1e-12
        values.append(info.value)
    assert values[0] > 0
    assert all(a >= b - 1e-12 for a, b in zip(values[1:], values[2:]))


def test_efficiency_increasing_in_k(stabilization_trees):
    eta = [efficiency(stabilization_trees[k], 10) for k in range(1, 5)]
    assert all(a < b for a, b in zip(eta, eta[1:]))
    p1 = [population(stabilization_trees[k], 11, 1) for k in range(1, 5)]
    assert p1[3] > p1[0]


def test_config_requires_feedback():
    with pytest.raises(ConfigError):
        ExperimentConfig(MIXED, make_readout_povm(0.1, 0.1), 2)


def test_initial_state_must_be_diagonal_in_initial_basis():
    rho = np.array([[0.5, 0.2], [0.2, 0.5]], dtype=complex)
    with pytest.raises(ConfigError):
        ExperimentConfig(rho, make_readout_povm(0.1, 0.1), 2, constant_policy(0.0), identity_bath())
