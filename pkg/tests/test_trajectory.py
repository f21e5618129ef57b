import numpy as np
import pytest

from demon_lab.ensemble import entropy_production, evolve_history_tree, fb_information, qct_entropy
from demon_lab.errors import IrreversibilityError, ValidationError, ZeroProbabilityError
from demon_lab.trajectory import (
    TrajectoryLabel,
    absolute_irreversibility,
    build_bases,
    detailed_ft_check,
    enumerate_ft,
    enumerate_trajectories,
    exhaustive_records,
    ft_expectation,
    hybrid_estimate,
    inverse_process,
    p_exp_closed_form,
    sample_experiment,
    stochastic_averages,
    stochastic_quantities,
    trajectory_probability,
)
from demon_lab.trajectory.sampling import CHUNK, _simulate

from conftest import degenerate_config, perfect_correction, small_config


@pytest.fixture(scope="module")
def short_fig2(fig2):
    return fig2.with_cycles(3)


def test_perfect_cycle_trajectory():
    bases = build_bases(evolve_history_tree(perfect_correction(1)), "fine")
    psi = TrajectoryLabel(b=(0, 0), y=(0,), z=(0,), a=(0,), d=(0,))
    assert trajectory_probability(psi, bases) == pytest.approx(0.5)
    rec = stochastic_quantities(psi, bases)
    assert rec.sigma == pytest.approx(-np.log(2))
    assert rec.i_qct == pytest.approx(np.log(2))
    assert rec.sigma + rec.i_qct == pytest.approx(0.0)


def test_label_lengths_validated():
    with pytest.raises(ValidationError):
        TrajectoryLabel(b=(0,), y=(0,), z=(0,), a=(0,), d=(0,))


def test_preset_bases(fig2_tree):
    bases = build_bases(fig2_tree, "fine")
    for n in range(1, fig2_tree.cycles + 1):
        a = bases.a_vecs[n]
        # up to label order, every a-basis is computational
        assert np.allclose(np.abs(a) ** 2 @ np.ones(2), 1)
        assert np.all(np.isclose(np.abs(a), 0, atol=1e-9) | np.isclose(np.abs(a), 1, atol=1e-9))
    ref = np.abs(bases.b_vecs[2][0])
    for n in range(2, fig2_tree.cycles + 1):
        for v in bases.b_vecs[n]:
            overlaps = np.abs(v.conj().T @ bases.b_vecs[2][0])
            assert np.allclose(np.sort(overlaps, axis=1), [[0, 1], [0, 1]], atol=1e-8)
    assert ref.shape == (2, 2)


def test_degenerate_node_uses_computational_basis(fig2_tree):
    bases = build_bases(fig2_tree, "fine")
    np.testing.assert_allclose(bases.b_vecs[1][0], np.eye(2))


def test_wrong_post_measurement_label_has_zero_probability(short_fig2):
    bases = build_bases(evolve_history_tree(short_fig2), "fine")
    psi = TrajectoryLabel(b=(0, 0, 0, 0), y=(0, 0, 0), z=(0, 0, 0), a=(1, 0, 0), d=(0, 0, 0))
    assert trajectory_probability(psi, bases) == 0.0
    with pytest.raises(ZeroProbabilityError):
        stochastic_quantities(psi, bases)


@pytest.mark.parametrize("mode", ["fine", "coarse"])
def test_enumeration_matches_single_trajectory_evaluation(short_fig2, mode):
    bases = build_bases(evolve_history_tree(short_fig2), mode, 1 if mode == "coarse" else None)
    table = enumerate_trajectories(bases)
    assert table.prob.sum() == pytest.approx(1.0, abs=1e-10)
    for i in range(0, len(table), max(1, len(table) // 25)):
        psi = table.label(i)
        rec = stochastic_quantities(psi, bases)
        assert trajectory_probability(psi, bases) == pytest.approx(table.prob[i], rel=1e-10)
        assert rec.sigma == pytest.approx(table.sigma[i], abs=1e-10)
        assert rec.info == pytest.approx(table.info[i], abs=1e-10)


def test_contraction_matches_enumeration(short_fig2):
    bases = build_bases(evolve_history_tree(short_fig2), "fine")
    table = enumerate_trajectories(bases)
    vals, norm = ft_expectation(bases, ("sigma", "i_qct"))
    assert vals[-1] == pytest.approx(np.sum(table.prob * np.exp(-table.sigma - table.info)), abs=1e-12)
    te, _ = ft_expectation(bases, ("sigma", "i_te"))
    assert te[-1] == pytest.approx(np.sum(table.prob * np.exp(-table.sigma - table.i_te)), abs=1e-12)


def test_stochastic_averages_match_ensemble(fig2_tree):
    bases = build_bases(fig2_tree, "fine")
    avg = stochastic_averages(bases)
    np.testing.assert_allclose(avg["sigma"], entropy_production(fig2_tree).sigma, atol=1e-9)
    np.testing.assert_allclose(avg["i_qct"], qct_entropy(fig2_tree).cumulative, atol=1e-9)
    np.testing.assert_allclose(avg["normalization"], 1, atol=1e-9)


def test_coarse_averages_match_feedback_information(stabilization_trees):
    tree = stabilization_trees[2]
    for k in (1, 2, 3):
        avg = stochastic_averages(build_bases(tree, "coarse", k))
        np.testing.assert_allclose(avg["i_fb"], fb_information(tree, k).cumulative, atol=1e-9)


def test_fluctuation_theorem_and_bare_average(fig2):
    res = enumerate_ft(fig2)
    np.testing.assert_allclose(res.prefix, 1, atol=1e-8)
    bare = ft_expectation(build_bases(evolve_history_tree(fig2), "fine"), ("sigma",))[0]
    assert bare[-1] > 1


def test_inverse_process_is_trace_preserving(stabilization):
    inv = inverse_process(stabilization[2], 2)
    assert inv.satisfied
    assert inv.trace_deviation() < 1e-9


def test_detailed_ft_exhaustive(stabilization):
    res = detailed_ft_check(stabilization[2].with_cycles(4), 2)
    assert res.method == "exhaustive"
    assert res.max_deviation < 1e-9


def test_detailed_ft_sampled_for_long_runs(stabilization):
    res = detailed_ft_check(stabilization[1].with_cycles(8), 1, samples=500)
    assert res.method == "sampled" and res.checked == 500
    assert res.max_deviation < 1e-9


def test_absolute_irreversibility_on_degenerate_config():
    cfg = degenerate_config()
    with pytest.raises(IrreversibilityError) as err:
        inverse_process(cfg)
    assert err.value.violations
    for k in (None, 1, 2):
        lam = absolute_irreversibility(cfg, k)
        assert lam > 1e-3
        bases = inverse_process(cfg, k, strict=False).bases
        assert ft_expectation(bases, ("sigma", "i_fb"))[0][-1] == pytest.approx(1 - lam, abs=1e-9)


def test_sampling_is_chunk_and_thread_invariant(fig2):
    a = sample_experiment(fig2, 3 * CHUNK + 17, seed=5, threads=1)
    b = sample_experiment(fig2, 3 * CHUNK + 17, seed=5, threads=3)
    for name in ("b_first", "y", "z", "a", "b_last"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    bases = build_bases(evolve_history_tree(fig2), "fine")
    part = _simulate(bases, 5, 100, 140)
    np.testing.assert_array_equal(part[1], a.y[100:140])


def test_sampled_first_outcome_matches_tree(fig2, fig2_tree):
    rec = sample_experiment(fig2, 100_000, seed=11)
    p = fig2_tree.prob[1][1]
    freq = np.mean(rec.y[:, 0] == 1)
    assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / len(rec))
    np.testing.assert_array_equal(rec.a, rec.z)


def test_hybrid_exhaustive_weights_reproduce_exact_value(short_fig2):
    rec = exhaustive_records(short_fig2)
    assert rec.weights.sum() == pytest.approx(1.0, abs=1e-12)
    res = hybrid_estimate(rec, short_fig2)
    assert res.mean == pytest.approx(enumerate_ft(short_fig2).value, abs=1e-10)


def test_closed_form_record_probability(short_fig2):
    rec = exhaustive_records(short_fig2)
    for i in range(0, len(rec), max(1, len(rec) // 20)):
        assert p_exp_closed_form(rec[i], short_fig2) == pytest.approx(rec.weights[i], rel=1e-9)


def test_hybrid_early_stop(short_fig2):
    rec = sample_experiment(short_fig2, 2000, seed=1)
    res = hybrid_estimate(rec, short_fig2, stop=2)
    assert np.all(np.isfinite(res.values))
