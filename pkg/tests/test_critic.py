import numpy as np
import pytest

from qrelab.critic import (DataCorruptionError, RetraceConfig, Trajectory,
                           critic_update_sampled, read_trajectory_csv,
                           retrace_targets, sample_trajectory,
                           soft_state_values, write_trajectory_csv)
from qrelab.games import (JointPolicy, MarkovGame, QEstimate, SoftValueParams,
                          evaluate_joint_q, marginalize_joint_q)
from qrelab.numerics import softmax
from qrelab.scenarios import random_game


def make_setup(seed=0, lam=2.0):
    g = random_game(n_states=3, n_actions=(2, 2), gamma=0.6, seed=seed)
    policy = JointPolicy.uniform(g)
    q = evaluate_joint_q(g, policy, tol=1e-12)
    q.target_joint = q.joint.copy()
    params = SoftValueParams.from_lambda(lam)
    return g, policy, q, params


def test_sample_trajectory_shapes_and_mu():
    g, policy, _, _ = make_setup()
    traj = sample_trajectory(g, policy, horizon=10, rng=0)
    assert traj.states.shape == (11,)
    assert traj.joint_actions.shape == (10,)
    assert traj.rewards.shape == (2, 10)
    # uniform product policy: mu = 1/4 at every step
    np.testing.assert_allclose(traj.mu, 0.25)


def test_soft_value_forms_agree_at_softmax_policy():
    g, _, q, params = make_setup()
    # with pi = softmax(Q/alpha), E_pi[Q] + alpha H(pi) = alpha lse(Q/alpha)
    sm_policy = JointPolicy([softmax(params.lam * m, axis=1) for m in
                             marginalize_joint_q(g, JointPolicy.uniform(g), q.joint)])
    marg = marginalize_joint_q(g, JointPolicy.uniform(g), q.joint)
    v_lse = soft_state_values(marg, params, value_form="logsumexp")
    v_exp = soft_state_values(marg, params, policy=sm_policy,
                              value_form="expectation")
    np.testing.assert_allclose(v_lse, v_exp, atol=1e-10)


def test_lambda_bar_zero_equals_one_step_td():
    g, policy, q, params = make_setup()
    traj = sample_trajectory(g, policy, horizon=8, rng=1)
    cfg = RetraceConfig(lam_bar=0.0, horizon=8)
    targets = retrace_targets(traj, q, policy, params, cfg, g)
    marg = marginalize_joint_q(g, policy, q.target_joint)
    v = soft_state_values(marg, params, policy=policy, value_form="logsumexp")
    expected = traj.rewards + g.gamma * v[:, traj.states[1:]]
    np.testing.assert_allclose(targets, expected, atol=1e-12)


def test_corrupt_behavior_probability_raises():
    g, policy, q, params = make_setup()
    traj = sample_trajectory(g, policy, horizon=4, rng=2)
    traj.mu[2] = 0.0
    with pytest.raises(DataCorruptionError):
        retrace_targets(traj, q, policy, params, RetraceConfig(), g)


def test_importance_ratios_truncated_at_lam_bar():
    """Off-policy data with mu below pi: ratio clips at 1, scaled by lam_bar."""
    g, policy, q, params = make_setup()
    behavior = JointPolicy([np.full((3, 2), 0.5), np.full((3, 2), 0.5)])
    traj = sample_trajectory(g, policy, horizon=5, rng=3, behavior=behavior)
    traj.mu[:] = 0.05           # pretend behavior was much more concentrated
    cfg = RetraceConfig(lam_bar=0.7, horizon=5)
    t_clip = retrace_targets(traj, q, policy, params, cfg, g)
    traj.mu[:] = 0.25           # exactly on-policy: same clip applies
    t_on = retrace_targets(traj, q, policy, params, cfg, g)
    np.testing.assert_allclose(t_clip, t_on, atol=1e-12)


def test_target_bias_vanishes_at_soft_fixed_point():
    """Soft-consistent Q table: retrace corrections average to zero.

    For a fixed behavior policy the map Q -> r + gamma P[alpha lse(Q/alpha)]
    is a gamma-contraction, so its fixed point makes every TD error
    zero-mean given (s, a).
    """
    g = random_game(n_states=3, n_actions=(2, 2), gamma=0.6, seed=4)
    params = SoftValueParams.from_lambda(2.0)
    policy = JointPolicy.uniform(g)
    q = QEstimate.zeros(g)
    q.refresh_marginal(g, policy)
    residual = np.inf
    for _ in range(200):
        v = soft_state_values(q.marginal, params, value_form="logsumexp")
        new = g.rewards + g.gamma * np.einsum("sat,nt->nsa", g.transition, v)
        residual = np.max(np.abs(new - q.joint))
        q.joint = new
        q.refresh_marginal(g, policy)
        if residual < 1e-13:
            break
    assert residual < 1e-12
    q.target_joint = q.joint.copy()

    cfg = RetraceConfig(lam_bar=0.9, horizon=12)
    rng = np.random.default_rng(5)
    biases = []
    for _ in range(500):
        traj = sample_trajectory(g, policy, horizon=12, rng=rng)
        targets = retrace_targets(traj, q, policy, params, cfg, g)
        qbar = q.target_joint[:, traj.states[:-1], traj.joint_actions]
        biases.append(np.mean(targets - qbar))
    mean = np.mean(biases)
    se = np.std(biases, ddof=1) / np.sqrt(len(biases))
    assert abs(mean) <= 3.0 * se + 1e-12


def test_critic_update_moves_toward_targets_and_soft_updates_target():
    g, policy, q, params = make_setup(seed=6)
    q.joint *= 0.0
    q.target_joint = q.joint.copy()
    q.tau_target = 0.5
    trajs = [sample_trajectory(g, policy, horizon=6, rng=k) for k in range(3)]
    out = critic_update_sampled(q, trajs, policy, params,
                                RetraceConfig(horizon=6), eta_q=1.0, game=g)
    assert np.any(out.joint != 0.0)
    np.testing.assert_allclose(out.target_joint, 0.5 * out.joint, atol=1e-12)
    assert out.visit_counts.sum() == pytest.approx(18.0)


def test_trajectory_csv_roundtrip(tmp_path):
    g, policy, _, _ = make_setup()
    trajs = [sample_trajectory(g, policy, horizon=5, rng=k) for k in range(2)]
    path = tmp_path / "replay.csv"
    write_trajectory_csv(path, trajs, n_agents=2)
    back = read_trajectory_csv(path, n_agents=2)
    assert len(back) == 2
    for a, b in zip(trajs, back):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.joint_actions, b.joint_actions)
        np.testing.assert_allclose(a.rewards, b.rewards, atol=0)
        np.testing.assert_allclose(a.mu, b.mu, atol=0)


def test_retrace_suppresses_bootstrap_noise():
    """Deterministic ring chain with per-trajectory noisy target tables.

    With lam_bar near 1 the noisy Qbar terms telescope out of the target;
    with lam_bar = 0 the full bootstrap noise of the next state remains.
    """
    n_states = 4
    transition = np.zeros((n_states, 1, n_states))
    for s in range(n_states):
        transition[s, 0, (s + 1) % n_states] = 1.0
    g = MarkovGame(n_agents=1, n_actions=(1,), transition=transition,
                   rewards=np.ones((1, n_states, 1)), gamma=0.9,
                   rho0=np.eye(n_states)[0], r_min=0.0, r_max=1.0)
    policy = JointPolicy.uniform(g)
    params = SoftValueParams.from_lambda(1.0)
    base = evaluate_joint_q(g, policy, tol=1e-12)
    rng = np.random.default_rng(7)

    variances = {}
    for lam_bar in (0.0, 0.9):
        cfg = RetraceConfig(lam_bar=lam_bar, horizon=10)
        ys = []
        for _ in range(2000):
            traj = sample_trajectory(g, policy, horizon=10, rng=rng, start=0)
            noisy = base.copy()
            noise = 0.5 * rng.standard_normal(n_states)
            noisy.joint = base.joint + noise[None, :, None]
            noisy.target_joint = noisy.joint.copy()
            targets = retrace_targets(traj, noisy, policy, params, cfg, g)
            ys.append(targets[0, 0])
        variances[lam_bar] = np.var(ys, ddof=1)
    assert variances[0.9] < variances[0.0]
