import numpy as np
import pytest

from qrelab.games import JointPolicy, evaluate_joint_q
from qrelab.metrics import (discounted_visitation, exploitability,
                            kl_to_reference, make_report,
                            monotonicity_residual, mw_tracking_check,
                            perturb_policy, policy_entropy_mean, qre_gap,
                            softmax_lipschitz_check, stationary_distribution,
                            stationary_shift_check, write_diagnostics_csv)
from qrelab.oracle import solve_qre_fixed_point
from qrelab.scenarios import (matching_pennies, prisoners_dilemma, random_game,
                              separable_team_game)


def test_qre_gap_zero_at_oracle_solution():
    g = prisoners_dilemma()
    lam = 2.0
    sol = solve_qre_fixed_point(g, lam)
    q = evaluate_joint_q(g, sol.policy)
    assert qre_gap(g, sol.policy, 1.0 / lam, q) <= 1e-12
    assert qre_gap(g, sol.policy, 1.0 / lam, q, reverse=True) <= 1e-12


def test_qre_gap_positive_off_equilibrium():
    g = prisoners_dilemma()
    policy = JointPolicy.uniform(g)
    q = evaluate_joint_q(g, policy)
    assert qre_gap(g, policy, 0.5, q) > 1e-3


def test_exploitability_zero_at_dominant_nash():
    g = prisoners_dilemma()
    nash = JointPolicy.deterministic(g, [[1], [1]])
    mean, per_agent = exploitability(g, nash)
    assert mean == pytest.approx(0.0, abs=1e-9)
    assert all(x == pytest.approx(0.0, abs=1e-9) for x in per_agent)


def test_exploitability_positive_for_uniform_play():
    g = prisoners_dilemma()
    mean, _ = exploitability(g, JointPolicy.uniform(g))
    assert mean > 0.1


def test_exploitability_decreases_with_rationality():
    g = random_game(n_states=2, n_actions=(2, 2), gamma=0.5, seed=2)
    vals = []
    for lam in (0.5, 2.0, 10.0):
        sol = solve_qre_fixed_point(g, lam)
        vals.append(exploitability(g, sol.policy)[0])
    assert vals[2] < vals[0]


def test_cem_tier_close_to_exact_on_small_game():
    g = prisoners_dilemma()
    policy = JointPolicy.uniform(g)
    exact, _ = exploitability(g, policy, oracle_tier="quick_vi")
    approx, _ = exploitability(g, policy, oracle_tier="cem", seed=1)
    assert approx == pytest.approx(exact, rel=0.05)


def test_discounted_visitation_is_distribution():
    g = random_game(n_states=4, n_actions=(2, 2), gamma=0.8, seed=3)
    occ = discounted_visitation(g, JointPolicy.uniform(g))
    assert occ.sum() == pytest.approx(1.0)
    assert np.all(occ >= 0.0)


def test_perturb_policy_stays_within_radius():
    g = random_game(n_states=3, n_actions=(3, 3), gamma=0.5, seed=4)
    rng = np.random.default_rng(5)
    base = JointPolicy.uniform(g)
    for _ in range(20):
        pert = perturb_policy(base, 0.1, rng)
        pert.validate(tol=1e-10)
        for a, b in zip(base.rows, pert.rows):
            tv = 0.5 * np.max(np.sum(np.abs(a - b), axis=1))
            assert tv <= 0.1 + 1e-9


def test_separable_team_game_is_exactly_monotone():
    """Additively separable shared payoffs: the pairing inner product
    vanishes identically, so mu_emp is zero up to float noise."""
    g = separable_team_game(3, 3, seed=0)
    report = monotonicity_residual(g, JointPolicy.uniform(g), n_pairs=50, seed=1)
    assert report.pairs_used > 0
    assert report.mu_emp <= 1e-8


def test_zero_sum_game_is_monotone():
    # antisymmetric payoff coupling cancels the pairing inner product exactly
    g = matching_pennies()
    report = monotonicity_residual(g, JointPolicy.uniform(g), n_pairs=50, seed=2)
    assert report.mu_emp <= 1e-8


def test_dense_team_game_is_not_monotone():
    from qrelab.scenarios import team_game
    g = team_game(3, 3, seed=3)
    report = monotonicity_residual(g, JointPolicy.uniform(g), n_pairs=50, seed=2)
    assert report.mu_emp > 1e-3


def test_kl_to_reference_zero_and_positive():
    g = prisoners_dilemma()
    u = JointPolicy.uniform(g)
    assert kl_to_reference(u, u) == 0.0
    other = JointPolicy([np.array([[0.9, 0.1]]), np.array([[0.5, 0.5]])])
    assert kl_to_reference(u, other) > 0.0


def test_softmax_lipschitz_bounds_hold_small():
    report = softmax_lipschitz_check(samples=20_000, alpha=1.0,
                                     q_range=(-3.0, 3.0), n_actions=5, seed=0)
    assert report.max_l1_ratio <= 1.0
    assert report.max_kl_ratio <= 1.0
    assert report.samples_used > 0


def test_stationary_distribution_of_known_chain():
    chain = np.array([[0.9, 0.1], [0.5, 0.5]])
    rho = stationary_distribution(chain)
    np.testing.assert_allclose(rho @ chain, rho, atol=1e-12)
    assert rho[0] == pytest.approx(5.0 / 6.0)


def test_stationary_shift_bound_dominates_observed():
    g = random_game(n_states=3, n_actions=(2, 2), gamma=0.7, seed=6)
    bound, worst = stationary_shift_check(g, JointPolicy.uniform(g),
                                          n_pairs=30, seed=7)
    assert worst <= bound + 1e-9


def test_mw_tracking_error_envelope():
    ks, errs, c_fit = mw_tracking_check(iters=20_000, seed=0)
    envelope = c_fit * np.log(ks + 1.0) * ks ** (-1.0 / 3.0)
    tail = ks > 10_000
    # the constant fitted on the first half keeps bounding the tail
    assert np.all(errs[tail] <= envelope[tail] * 1.05)


def test_make_report_and_csv(tmp_path):
    g = prisoners_dilemma()
    sol = solve_qre_fixed_point(g, 2.0)
    report = make_report(g, sol.policy, 2.0, oracle=sol.policy)
    assert report.qre_gap <= 1e-10
    assert report.kl_to_oracle == pytest.approx(0.0, abs=1e-12)
    path = tmp_path / "diag.csv"
    write_diagnostics_csv(path, [report])
    assert "qre_gap" in path.read_text().splitlines()[0]


def test_policy_entropy_mean_bounds():
    g = prisoners_dilemma()
    assert policy_entropy_mean(JointPolicy.uniform(g)) == pytest.approx(np.log(2))
    det = JointPolicy.deterministic(g, [[0], [1]])
    assert policy_entropy_mean(det) == pytest.approx(0.0)
