"""Tabular Markov-game data model and exact policy evaluation.

A game is a finite N-agent Markov game: shared transitions driven by the
joint action, one bounded reward table per agent, discount < 1.  Joint
actions are enumerated lexicographically by agent index (agent 0 is the
most significant digit, matching ``np.unravel_index`` in C order).
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import row_entropy

JOINT_ACTION_CAP = 10**6
#: |S|*|A| at or below this uses a direct linear solve for evaluation.
LINEAR_SOLVE_LIMIT = 10**4


class GameValidationError(ValueError):
    """Raised when a game or policy violates its structural invariants."""


class DivergenceError(RuntimeError):
    """Iterative evaluation failed to reach the requested tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class MarkovGame:
    """Finite general-sum Markov game with dense tables.

    transition has shape (S, A, S) over joint-action indices, rewards has
    shape (N, S, A).  Instances are immutable and safe to share.
    """

    n_agents: int
    n_actions: tuple          # per-agent action counts
    transition: np.ndarray    # (S, A, S)
    rewards: np.ndarray       # (N, S, A)
    gamma: float
    rho0: np.ndarray          # (S,)
    r_min: float
    r_max: float
    state_labels: tuple = None
    action_labels: tuple = None   # tuple of per-agent label tuples

    def __post_init__(self):
        object.__setattr__(self, "n_actions", tuple(int(n) for n in self.n_actions))
        object.__setattr__(self, "transition", np.ascontiguousarray(self.transition, dtype=float))
        object.__setattr__(self, "rewards", np.ascontiguousarray(self.rewards, dtype=float))
        object.__setattr__(self, "rho0", np.ascontiguousarray(self.rho0, dtype=float))
        self.transition.setflags(write=False)
        self.rewards.setflags(write=False)
        self.rho0.setflags(write=False)
        self._validate()

    def _validate(self):
        if self.n_agents < 1:
            raise GameValidationError("need at least one agent")
        if len(self.n_actions) != self.n_agents or any(n < 1 for n in self.n_actions):
            raise GameValidationError("bad per-agent action counts")
        joint = 1
        for n in self.n_actions:
            joint *= n
            if joint > JOINT_ACTION_CAP:
                raise GameValidationError(
                    f"joint action space exceeds cap {JOINT_ACTION_CAP}")
        s, a, s2 = self.transition.shape
        if s != s2 or a != joint:
            raise GameValidationError("transition shape inconsistent with game")
        if self.rewards.shape != (self.n_agents, s, a):
            raise GameValidationError("reward shape inconsistent with game")
        if self.rho0.shape != (s,):
            raise GameValidationError("rho0 shape inconsistent with game")
        if np.max(np.abs(self.transition.sum(axis=2) - 1.0)) > 1e-12:
            raise GameValidationError("transition rows must sum to 1 within 1e-12")
        if np.any(self.transition < 0.0):
            raise GameValidationError("transition probabilities must be nonnegative")
        if abs(self.rho0.sum() - 1.0) > 1e-12 or np.any(self.rho0 < 0.0):
            raise GameValidationError("rho0 must be a probability vector (1e-12)")
        if not (0.0 <= self.gamma < 1.0):
            raise GameValidationError("discount must lie in [0, 1)")
        if self.r_min > self.r_max:
            raise GameValidationError("r_min > r_max")
        if np.any(self.rewards < self.r_min - 1e-12) or np.any(self.rewards > self.r_max + 1e-12):
            raise GameValidationError("rewards outside declared [r_min, r_max]")

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_joint_actions(self):
        return self.transition.shape[1]

    def joint_index(self, actions):
        """Joint-action index of a per-agent action tuple."""
        return int(np.ravel_multi_index(tuple(actions), self.n_actions))

    def joint_tuple(self, index):
        """Per-agent action tuple of a joint-action index."""
        return tuple(int(x) for x in np.unravel_index(index, self.n_actions))


@dataclass
class JointPolicy:
    """Per-agent, per-state probability rows: rows[i] has shape (S, |A_i|)."""

    rows: list

    @classmethod
    def uniform(cls, game):
        return cls([np.full((game.n_states, n), 1.0 / n) for n in game.n_actions])

    @classmethod
    def deterministic(cls, game, choices):
        """choices[i][s] is the action agent i plays in state s."""
        rows = []
        for i, n in enumerate(game.n_actions):
            r = np.zeros((game.n_states, n))
            r[np.arange(game.n_states), np.asarray(choices[i], dtype=int)] = 1.0
            rows.append(r)
        return cls(rows)

    def copy(self):
        return JointPolicy([r.copy() for r in self.rows])

    def validate(self, tol=1e-10):
        for i, rows in enumerate(self.rows):
            if np.any(rows < -tol):
                raise GameValidationError(f"negative probability for agent {i}")
            if np.max(np.abs(rows.sum(axis=1) - 1.0)) > tol:
                raise GameValidationError(f"rows of agent {i} do not sum to 1 within {tol}")

    def max_simplex_violation(self):
        worst = 0.0
        for rows in self.rows:
            worst = max(worst, float(np.max(np.abs(rows.sum(axis=1) - 1.0))))
            worst = max(worst, float(max(0.0, -np.min(rows))))
        return worst

    def entropy(self):
        """Per-agent mean entropy over states."""
        return np.array([float(np.mean(row_entropy(rows))) for rows in self.rows])


@dataclass(frozen=True)
class SoftValueParams:
    """Temperature / rationality pair with alpha = 1/lambda."""

    alpha: float
    lam: float

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise GameValidationError("temperature must be positive")
        if np.isfinite(self.alpha) and abs(self.lam * self.alpha - 1.0) > 1e-12:
            raise GameValidationError("lambda * alpha must equal 1")
        if not np.isfinite(self.alpha) and self.lam != 0.0:
            raise GameValidationError("infinite temperature requires lambda = 0")

    @classmethod
    def from_lambda(cls, lam):
        if lam < 0.0:
            raise GameValidationError("lambda must be nonnegative")
        return cls(alpha=np.inf if lam == 0.0 else 1.0 / lam, lam=float(lam))

    @classmethod
    def from_alpha(cls, alpha):
        if alpha <= 0.0:
            raise GameValidationError("temperature must be positive")
        return cls(alpha=float(alpha), lam=0.0 if np.isinf(alpha) else 1.0 / alpha)


@dataclass
class QEstimate:
    """Per-agent joint and marginal Q tables, with an optional target copy."""

    joint: np.ndarray            # (N, S, A)
    marginal: list               # per agent (S, |A_i|)
    target_joint: np.ndarray = None
    tau_target: float = 1.0
    visit_counts: np.ndarray = field(default=None, repr=False)   # (S, A)

    @classmethod
    def zeros(cls, game, with_target=False, tau_target=1.0):
        joint = np.zeros((game.n_agents, game.n_states, game.n_joint_actions))
        est = cls(joint=joint,
                  marginal=[np.zeros((game.n_states, n)) for n in game.n_actions],
                  target_joint=joint.copy() if with_target else None,
                  tau_target=tau_target,
                  visit_counts=np.zeros((game.n_states, game.n_joint_actions)))
        return est

    def copy(self):
        return QEstimate(
            joint=self.joint.copy(),
            marginal=[m.copy() for m in self.marginal],
            target_joint=None if self.target_joint is None else self.target_joint.copy(),
            tau_target=self.tau_target,
            visit_counts=None if self.visit_counts is None else self.visit_counts.copy(),
        )

    def refresh_marginal(self, game, policy):
        self.marginal = marginalize_joint_q(game, policy, self.joint)

    def soft_update_target(self, tau=None):
        """target <- tau*online + (1-tau)*target, elementwise."""
        tau = self.tau_target if tau is None else tau
        if self.target_joint is None:
            self.target_joint = self.joint.copy()
        else:
            self.target_joint = tau * self.joint + (1.0 - tau) * self.target_joint


def joint_action_probs(game, policy):
    """(S, A) table of joint-action probabilities under the product policy."""
    shaped = np.ones((game.n_states, 1))
    for rows in policy.rows:
        shaped = shaped[:, :, None] * rows[:, None, :]
        shaped = shaped.reshape(game.n_states, -1)
    return shaped


def marginalize_joint_q(game, policy, joint_q):
    """Opponent-policy expectation of each agent's joint Q table.

    Returns per-agent arrays of shape (S, |A_i|).
    """
    n = game.n_agents
    out = []
    for i in range(n):
        # Contract out every opponent axis, keeping agent i's own axis.
        t = joint_q[i].reshape((game.n_states,) + game.n_actions)
        axes_removed = 0
        for j in range(n):
            if j == i:
                continue
            axis = 1 + j - axes_removed
            t = np.einsum(t, list(range(t.ndim)), policy.rows[j], [0, axis],
                          [k for k in range(t.ndim) if k != axis])
            axes_removed += 1
        out.append(t)
    return out


def policy_transition(game, policy):
    """State chain P_pi (S, S) and per-agent mean rewards r_pi (N, S)."""
    p = joint_action_probs(game, policy)
    chain = np.einsum("sa,sat->st", p, game.transition)
    mean_r = np.einsum("sa,nsa->ns", p, game.rewards)
    return chain, mean_r


def _state_values(game, chain, mean_r, tol, max_iters):
    """Solve V = r + gamma * P V for each agent, exactly when small."""
    s = game.n_states
    if s * game.n_joint_actions <= LINEAR_SOLVE_LIMIT:
        mat = np.eye(s) - game.gamma * chain
        return np.linalg.solve(mat, mean_r.T).T
    v = np.zeros_like(mean_r)
    for _ in range(max_iters):
        nxt = mean_r + game.gamma * v @ chain.T
        if np.max(np.abs(nxt - v)) <= (1.0 - game.gamma) * tol:
            return nxt
        v = nxt
    raise DivergenceError("state-value sweeps did not converge",
                          float(np.max(np.abs(nxt - v))))


def evaluate_joint_q(game, policy, tol=1e-10, max_iters=100_000):
    """Exact joint Q tables under a fixed joint policy.

    Returns a QEstimate whose joint tables satisfy the per-agent Bellman
    evaluation equation with sup-norm residual <= tol, and whose marginals
    are refreshed against the same policy.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    policy.validate()
    chain, mean_r = policy_transition(game, policy)
    v = _state_values(game, chain, mean_r, tol, max_iters)
    joint = game.rewards + game.gamma * np.einsum("sat,nt->nsa", game.transition, v)
    est = QEstimate(joint=joint, marginal=[], tau_target=1.0)
    est.refresh_marginal(game, policy)
    residual = bellman_residual(game, policy, est)
    if residual > tol:
        raise DivergenceError("joint-Q evaluation residual above tolerance", residual)
    return est


def bellman_residual(game, policy, q_est):
    """Sup-norm of T^pi[Q] - Q over agents, states, joint actions."""
    applied = apply_bellman(game, policy, q_est.joint)
    return float(np.max(np.abs(applied - q_est.joint)))


def apply_bellman(game, policy, joint_q):
    """One synchronous evaluation sweep of the joint Bellman operator."""
    p = joint_action_probs(game, policy)
    v = np.einsum("sa,nsa->ns", p, joint_q)
    return game.rewards + game.gamma * np.einsum("sat,nt->nsa", game.transition, v)


def evaluate_soft_value(game, policy, params, tol=1e-10, max_iters=100_000):
    """Entropy-augmented state values: each step adds alpha*H(pi_i(.|s)).

    Returns an (N, S) array bounded by (R_max + alpha*log|A_i|)/(1-gamma).
    """
    policy.validate()
    chain, mean_r = policy_transition(game, policy)
    bonus = np.stack([params.alpha * row_entropy(rows) for rows in policy.rows])
    return _state_values(game, chain, mean_r + bonus, tol, max_iters)


def state_values(game, policy, tol=1e-10, max_iters=100_000):
    """Plain per-agent state values V_i^pi as an (N, S) array."""
    chain, mean_r = policy_transition(game, policy)
    return _state_values(game, chain, mean_r, tol, max_iters)


def induced_mdp(game, policy, agent):
    """Single-agent MDP faced by `agent` with opponents fixed.

    Returns (rewards (S, |A_i|), transition (S, |A_i|, S)).
    """
    n = game.n_agents
    # Probability weight of each opponent joint action, laid out on the full
    # joint index with the agent's own axis kept at full size.
    t = np.ones((game.n_states,) + tuple(1 for _ in range(n)))
    for j in range(n):
        rows = policy.rows[j] if j != agent else np.ones((game.n_states, game.n_actions[j]))
        shape = [game.n_states] + [1] * n
        shape[1 + j] = game.n_actions[j]
        t = t * rows.reshape(shape)
    weights = t.reshape(game.n_states, game.n_joint_actions)  # (S, A)
    own_axis_shape = (game.n_states,) + game.n_actions
    w = weights.reshape(own_axis_shape)
    r = (game.rewards[agent].reshape(own_axis_shape) * w)
    tr = (game.transition.reshape(own_axis_shape + (game.n_states,)) * w[..., None])
    sum_axes = tuple(1 + j for j in range(n) if j != agent)
    r = r.sum(axis=sum_axes)
    tr = tr.sum(axis=sum_axes)
    return r, tr


def best_response_value(game, policy, agent, tol=1e-10, max_iters=100_000):
    """Exact best-response state values for one agent, opponents fixed.

    Value iteration on the induced single-agent MDP; residual <= tol in
    the (1-gamma)-scaled sup norm.
    """
    r, tr = induced_mdp(game, policy, agent)
    v = np.zeros(game.n_states)
    stop = (1.0 - game.gamma) * tol if game.gamma > 0.0 else tol
    for _ in range(max_iters):
        q = r + game.gamma * tr @ v
        nxt = q.max(axis=1)
        if np.max(np.abs(nxt - v)) <= stop:
            return nxt
        v = nxt
    raise DivergenceError("best-response value iteration did not converge",
                          float(np.max(np.abs(nxt - v))))
