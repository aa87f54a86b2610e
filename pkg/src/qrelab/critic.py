"""Trajectory sampling and retrace off-policy targets for the sampled critic.

The retrace target for agent i at step t is

    y_t = Qbar(s_t, a_t) + sum_{j >= t} gamma^(j-t) (prod_{l=t}^{j-1} c_l) delta_j

with truncated importance ratios c_l = lam_bar * min(1, pi(a_l|s_l)/mu_l)
and TD errors delta_j = r_j + gamma * V_soft(s_{j+1}) - Qbar(s_j, a_j),
where Qbar is the target copy of the joint Q table.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .games import joint_action_probs, marginalize_joint_q
from .numerics import logsumexp, row_entropy


class DataCorruptionError(RuntimeError):
    """A visited action carries zero behavior probability."""


@dataclass(frozen=True)
class RetraceConfig:
    lam_bar: float = 0.9
    horizon: int = 32
    value_form: str = "logsumexp"    # or "expectation"

    def __post_init__(self):
        if not (0.0 <= self.lam_bar <= 1.0):
            raise ValueError("retrace parameter must lie in [0, 1]")
        if self.value_form not in ("logsumexp", "expectation"):
            raise ValueError("value_form must be 'logsumexp' or 'expectation'")


@dataclass
class Trajectory:
    """H transitions: states has length H+1, the rest length H."""

    states: np.ndarray        # (H+1,) int
    joint_actions: np.ndarray  # (H,) int joint indices
    rewards: np.ndarray       # (N, H)
    mu: np.ndarray            # (H,) behavior probability of each joint action

    @property
    def horizon(self):
        return len(self.joint_actions)


def sample_trajectory(game, policy, horizon, rng, start=None, behavior=None):
    """Roll the joint policy for `horizon` steps.

    Actions are drawn per-agent independently; mu records the product of
    per-agent probabilities under the behavior policy (defaults to the
    rollout policy itself, i.e. on-policy data).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    behavior = behavior if behavior is not None else policy
    s = int(start) if start is not None else int(rng.choice(game.n_states, p=game.rho0))
    states = [s]
    joints = []
    mus = []
    rewards = []
    for _ in range(horizon):
        acts = []
        mu = 1.0
        for i in range(game.n_agents):
            p = behavior.rows[i][s]
            a = int(rng.choice(game.n_actions[i], p=p))
            acts.append(a)
            mu *= float(p[a])
        j = game.joint_index(acts)
        joints.append(j)
        mus.append(mu)
        rewards.append(game.rewards[:, s, j])
        s = int(rng.choice(game.n_states, p=game.transition[s, j]))
        states.append(s)
    return Trajectory(states=np.array(states, dtype=int),
                      joint_actions=np.array(joints, dtype=int),
                      rewards=np.array(rewards).T,
                      mu=np.array(mus))


def soft_state_values(marginal_q, params, policy=None, value_form="logsumexp"):
    """Per-agent soft state values from marginal Q tables.

    logsumexp form: alpha * logsumexp(Q/alpha); expectation form:
    E_pi[Q] + alpha*H(pi) (requires the policy).
    """
    out = []
    for i, q in enumerate(marginal_q):
        if value_form == "logsumexp":
            out.append(params.alpha * logsumexp(q / params.alpha, axis=1))
        else:
            rows = policy.rows[i]
            out.append(np.sum(rows * q, axis=1) + params.alpha * row_entropy(rows))
    return np.stack(out)


def retrace_targets(traj, q, policy, params, cfg, game):
    """(N, H) array of retrace targets computed from the target Q copy."""
    if np.any(traj.mu <= 0.0):
        raise DataCorruptionError("behavior probability zero at a visited action")
    target = q.target_joint if q.target_joint is not None else q.joint
    marg = marginalize_joint_q(game, policy, target)
    v_soft = soft_state_values(marg, params, policy=policy, value_form=cfg.value_form)

    h = traj.horizon
    probs = joint_action_probs(game, policy)
    pi_joint = probs[traj.states[:-1], traj.joint_actions]
    ratios = cfg.lam_bar * np.minimum(1.0, pi_joint / traj.mu)

    n = game.n_agents
    qbar_sa = target[:, traj.states[:-1], traj.joint_actions]      # (N, H)
    delta = traj.rewards + game.gamma * v_soft[:, traj.states[1:]] - qbar_sa
    targets = np.empty((n, h))
    # Backward recursion: G_t = delta_t + gamma * c_t * G_{t+1}, since the
    # correction product for term j starts at l = t.
    carry = np.zeros(n)
    for t in range(h - 1, -1, -1):
        if t == h - 1:
            carry = delta[:, t]
        else:
            carry = delta[:, t] + game.gamma * ratios[t] * carry
        targets[:, t] = qbar_sa[:, t] + carry
    return targets


def critic_update_sampled(q, trajectories, policy, params, cfg, eta_q, game):
    """Tabular step toward retrace targets with visit-count scaling.

    Each visited (s, a) moves toward its target with step
    eta_q / n(s, a), where n is the cumulative visit count; the target
    copy is then soft-updated with rate tau_target.
    """
    if not trajectories:
        raise ValueError("batch of trajectories is empty")
    out = q.copy()
    if out.visit_counts is None:
        out.visit_counts = np.zeros((game.n_states, game.n_joint_actions))
    for traj in trajectories:
        targets = retrace_targets(traj, out, policy, params, cfg, game)
        for t in range(traj.horizon):
            s = traj.states[t]
            a = traj.joint_actions[t]
            out.visit_counts[s, a] += 1.0
            step = eta_q / out.visit_counts[s, a]
            out.joint[:, s, a] += step * (targets[:, t] - out.joint[:, s, a])
    out.soft_update_target()
    return out


TRAJECTORY_HEADER_PREFIX = ["t", "state", "joint_action"]


def write_trajectory_csv(path, trajectories, n_agents):
    """Replay-buffer dump: one row per (trajectory, step)."""
    header = ["episode"] + TRAJECTORY_HEADER_PREFIX + \
        [f"reward_{i}" for i in range(n_agents)] + ["mu", "next_state"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for e, traj in enumerate(trajectories):
            for t in range(traj.horizon):
                writer.writerow(
                    [e, t, int(traj.states[t]), int(traj.joint_actions[t])]
                    + [repr(float(r)) for r in traj.rewards[:, t]]
                    + [repr(float(traj.mu[t])), int(traj.states[t + 1])])


def read_trajectory_csv(path, n_agents):
    episodes = {}
    with open(path, "r", newline="") as fh:
        for row in csv.DictReader(fh):
            e = int(row["episode"])
            episodes.setdefault(e, []).append(row)
    out = []
    for e in sorted(episodes):
        rows = sorted(episodes[e], key=lambda r: int(r["t"]))
        states = [int(r["state"]) for r in rows] + [int(rows[-1]["next_state"])]
        out.append(Trajectory(
            states=np.array(states, dtype=int),
            joint_actions=np.array([int(r["joint_action"]) for r in rows]),
            rewards=np.array([[float(r[f"reward_{i}"]) for r in rows]
                              for i in range(n_agents)]),
            mu=np.array([float(r["mu"]) for r in rows])))
    return out
