"""Built-in game instances: matrix games and toy traffic scenarios.

The traffic games put each agent on its own 1-D approach lane feeding a
shared region (a merged lane segment, or a single crossing cell).  Moves
are simultaneous, "go" advances with a slip probability, and any
co-occupancy inside the shared region jumps to an absorbing crash state.
Staggered start cells give one agent de-facto priority.
"""

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .dynamics import TemperatureSchedule, TwoTimescaleSchedule, run_evoqre
from .games import GameValidationError, MarkovGame

MOVE_WAIT = 0
MOVE_GO = 1

TRAFFIC_SCENARIOS = ("merge", "intersection")


def matrix_game(tables, gamma=0.0, action_labels=None):
    """Single-state repeated game from per-agent payoff tables.

    tables[i] has one axis per agent; entry [a_0, ..., a_{N-1}] is agent
    i's payoff at that joint action.
    """
    tables = [np.asarray(t, dtype=float) for t in tables]
    n_actions = tables[0].shape
    rewards = np.stack([t.reshape(1, -1) for t in tables])
    n_joint = rewards.shape[2]
    return MarkovGame(
        n_agents=len(tables),
        n_actions=n_actions,
        transition=np.ones((1, n_joint, 1)),
        rewards=rewards,
        gamma=gamma,
        rho0=np.array([1.0]),
        r_min=float(rewards.min()),
        r_max=float(rewards.max()),
        state_labels=("s0",),
        action_labels=action_labels,
    )


def prisoners_dilemma(gamma=0.0):
    r = np.array([[3.0, 0.0], [5.0, 1.0]])
    return matrix_game([r, r.T], gamma=gamma,
                       action_labels=(("cooperate", "defect"),) * 2)


def matching_pennies(gamma=0.0):
    r = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return matrix_game([r, -r], gamma=gamma,
                       action_labels=(("heads", "tails"),) * 2)


def coordination_game(gamma=0.0):
    r = np.array([[2.0, 0.0], [0.0, 1.0]])
    return matrix_game([r, r], gamma=gamma,
                       action_labels=(("left", "right"),) * 2)


def rock_paper_scissors(gamma=0.0):
    r = np.array([[0.0, -1.0, 1.0],
                  [1.0, 0.0, -1.0],
                  [-1.0, 1.0, 0.0]])
    return matrix_game([r, -r], gamma=gamma,
                       action_labels=(("rock", "paper", "scissors"),) * 2)


def separable_team_game(n0=3, n1=3, seed=0, scale=1.0):
    """Identical-interest game with additively separable shared payoff."""
    rng = np.random.default_rng(seed)
    f = scale * rng.normal(size=n0)
    g = scale * rng.normal(size=n1)
    r = f[:, None] + g[None, :]
    return matrix_game([r, r])


def team_game(n0=3, n1=3, seed=0, scale=1.0, gamma=0.0):
    """Identical-interest game with a dense shared payoff table."""
    rng = np.random.default_rng(seed)
    r = scale * rng.normal(size=(n0, n1))
    return matrix_game([r, r], gamma=gamma)


def perturbed_team_game(sigma, seed, n0=3, n1=3, base_seed=0, scale=1.0):
    """Separable team game plus independent per-agent reward noise.

    At sigma = 0 the pairing inner product vanishes identically.  The
    perturbation has two parts, both scaled by sigma: independent
    per-agent noise, which breaks separability and grows the empirical
    monotonicity residual, and a shared zero-sum component, which leaves
    the residual untouched (antisymmetric terms cancel pairwise) but
    removes pure equilibria and drives best-response cycling once it
    dominates the common payoff.
    """
    if sigma < 0.0:
        raise GameValidationError("perturbation scale must be nonnegative")
    rng = np.random.default_rng(base_seed)
    f = scale * rng.normal(size=n0)
    g = scale * rng.normal(size=n1)
    shared = f[:, None] + g[None, :]
    noise_rng = np.random.default_rng(seed)
    zs = noise_rng.normal(size=(n0, n1))
    tables = [shared + sigma * noise_rng.normal(size=(n0, n1)) + sigma * zs,
              shared + sigma * noise_rng.normal(size=(n0, n1)) - sigma * zs]
    return matrix_game(tables)


def random_matrix_game(n_actions=(2, 2), seed=0, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    tables = [rng.uniform(lo, hi, size=tuple(n_actions))
              for _ in range(len(n_actions))]
    return matrix_game(tables)


def random_game(n_states=4, n_actions=(2, 2), gamma=0.5, seed=0,
                lo=-1.0, hi=1.0):
    """Dense random Markov game with Dirichlet transition rows."""
    rng = np.random.default_rng(seed)
    n_joint = int(np.prod(n_actions))
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    rewards = rng.uniform(lo, hi, size=(len(n_actions), n_states, n_joint))
    return MarkovGame(
        n_agents=len(n_actions),
        n_actions=tuple(n_actions),
        transition=transition,
        rewards=rewards,
        gamma=gamma,
        rho0=np.full(n_states, 1.0 / n_states),
        r_min=lo,
        r_max=hi,
    )


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of a built-in traffic scenario.

    lam may be a scalar (homogeneous), a per-agent sequence, or a dict
    {"mean": m, "spread": s, "seed": k} drawing each lambda_i uniformly
    from [m - s, m + s].
    """

    scenario: str
    length: int = 4
    n_agents: int = 2
    collision_penalty: float = -0.3
    progress_reward: float = 1.0
    goal_reward: float = 2.0
    step_cost: float = -0.05
    slip: float = 0.4
    gamma: float = 0.95
    lam: object = 8.0
    sigma: float = 0.0
    sigma_seed: int = 0

    def __post_init__(self):
        if self.scenario not in TRAFFIC_SCENARIOS:
            raise GameValidationError(
                f"unknown scenario {self.scenario!r}; choose from {TRAFFIC_SCENARIOS}")
        if self.n_agents < 2 or self.n_agents > 4:
            raise GameValidationError("traffic scenarios support 2 to 4 agents")
        if self.length < 3:
            raise GameValidationError("lane length must be at least 3")
        if self.collision_penalty >= 0.0:
            raise GameValidationError("collision penalty must be negative")
        if self.progress_reward <= 0.0 or self.goal_reward < 0.0:
            raise GameValidationError("progress rewards must be positive")
        if not (0.0 <= self.slip < 1.0):
            raise GameValidationError("slip probability must lie in [0, 1)")
        if self.sigma < 0.0:
            raise GameValidationError("perturbation scale must be nonnegative")

    @property
    def conflict_cell(self):
        """First cell of the shared region."""
        return self.length - 2

    def shared_cells(self):
        """Cells where co-occupancy is a collision (goal cell excluded)."""
        if self.scenario == "merge":
            return range(self.conflict_cell, self.length)
        return range(self.conflict_cell, self.conflict_cell + 1)

    def start_positions(self):
        """Staggered starts: even agents one cell ahead (priority)."""
        return tuple(1 if i % 2 == 0 else 0 for i in range(self.n_agents))


def resolve_lambdas(spec, override=None):
    """Per-agent rationality vector implied by the spec (or an override)."""
    lam = override if override is not None else spec.lam
    if isinstance(lam, dict):
        rng = np.random.default_rng(lam.get("seed", 0))
        lo = lam["mean"] - lam.get("spread", 0.0)
        hi = lam["mean"] + lam.get("spread", 0.0)
        vals = rng.uniform(lo, hi, size=spec.n_agents)
        return np.maximum(vals, 0.0)
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0:
        return np.full(spec.n_agents, float(arr))
    if arr.shape != (spec.n_agents,):
        raise GameValidationError("need one lambda per agent")
    return arr


def _agent_move_outcomes(pos, move, length, slip):
    if pos >= length or move == MOVE_WAIT:
        return ((pos, 1.0),)
    if slip == 0.0:
        return ((pos + 1, 1.0),)
    return ((pos + 1, 1.0 - slip), (pos, slip))


def build_scenario(spec):
    """Deterministic tabular construction of a traffic scenario."""
    n = spec.n_agents
    length = spec.length
    cells = length + 1                       # positions 0..length, goal at length
    shared = set(spec.shared_cells())
    n_states = cells ** n + 1                # plus the absorbing crash state
    crash = n_states - 1
    n_joint = 2 ** n
    dims = (cells,) * n

    transition = np.zeros((n_states, n_joint, n_states))
    rewards = np.zeros((n, n_states, n_joint))
    labels = []

    for s in range(n_states - 1):
        pos = np.unravel_index(s, dims)
        labels.append(",".join(str(p) for p in pos))
        for a in range(n_joint):
            moves = np.unravel_index(a, (2,) * n)
            outcome_sets = [_agent_move_outcomes(pos[i], moves[i], length, spec.slip)
                            for i in range(n)]
            p_crash = 0.0
            for combo in itertools.product(*outcome_sets):
                prob = 1.0
                nxt = []
                for p, w in combo:
                    prob *= w
                    nxt.append(p)
                collided = any(
                    nxt[i] == nxt[j] and nxt[i] in shared
                    for i in range(n) for j in range(i + 1, n))
                if collided:
                    p_crash += prob
                    transition[s, a, crash] += prob
                else:
                    transition[s, a, int(np.ravel_multi_index(nxt, dims))] += prob
            for i in range(n):
                if pos[i] >= length:
                    continue
                r = spec.step_cost
                if moves[i] == MOVE_GO:
                    gain = spec.progress_reward
                    if pos[i] == length - 1:
                        gain += spec.goal_reward
                    r += (1.0 - spec.slip) * gain
                rewards[i, s, a] = r
            rewards[:, s, a] += spec.collision_penalty * p_crash
    transition[crash, :, crash] = 1.0
    labels.append("crash")

    if spec.sigma > 0.0:
        rng = np.random.default_rng(spec.sigma_seed)
        noise = spec.sigma * rng.normal(size=(n, n_states - 1, n_joint))
        rewards[:, :-1, :] += noise

    rho0 = np.zeros(n_states)
    rho0[int(np.ravel_multi_index(spec.start_positions(), dims))] = 1.0
    return MarkovGame(
        n_agents=n,
        n_actions=(2,) * n,
        transition=transition,
        rewards=rewards,
        gamma=spec.gamma,
        rho0=rho0,
        r_min=float(rewards.min()),
        r_max=float(rewards.max()),
        state_labels=tuple(labels),
        action_labels=(("wait", "go"),) * n,
    )


@dataclass
class SafetyStats:
    """Monte-Carlo event rates over rollouts, with standard errors."""

    collision_rate: float
    pass_rate: float
    near_miss_rate: float
    collision_se: float
    pass_se: float
    near_miss_se: float
    per_agent_near_miss: np.ndarray
    episodes: int

    def __post_init__(self):
        for r in (self.collision_rate, self.pass_rate, self.near_miss_rate):
            if not (0.0 <= r <= 1.0 or np.isnan(r)):
                raise ValueError("event rates must lie in [0, 1]")


def _binom_se(rate, n):
    return float(np.sqrt(max(rate * (1.0 - rate), 0.0) / n))


def rollout_stats(game, policy, episodes, horizon, seed, spec=None):
    """Collision / pass / near-miss rates of a policy on a traffic game.

    A near-miss is a step whose chosen joint move carries positive crash
    probability (closing moves in or next to the shared region) but where
    no collision results; agents that chose "go" on such a step are
    credited in the per-agent tally.  Requires the ScenarioSpec for the
    lane geometry.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if spec is None:
        raise ValueError("rollout_stats needs the ScenarioSpec for geometry")
    rng = np.random.default_rng(seed)
    n = game.n_agents
    length = spec.length
    crash = None
    positions = []
    for idx, lab in enumerate(game.state_labels):
        if lab == "crash":
            crash = idx
            positions.append(None)
        else:
            positions.append(tuple(int(x) for x in lab.split(",")))
    if crash is None:
        raise ValueError("game has no crash state; not a traffic scenario")

    collisions = 0
    passes = 0
    near_misses = 0
    agent_near = np.zeros(n)
    for _ in range(episodes):
        s = int(rng.choice(game.n_states, p=game.rho0))
        saw_near = False
        contributed = np.zeros(n, dtype=bool)
        collided = False
        passed = False
        for _ in range(horizon):
            if s == crash:
                collided = True
                break
            pos = positions[s]
            if all(p >= length for p in pos):
                passed = True
                break
            acts = [int(rng.choice(2, p=policy.rows[i][s])) for i in range(n)]
            a = game.joint_index(acts)
            risky = game.transition[s, a, crash] > 0.0
            prev = s
            s = int(rng.choice(game.n_states, p=game.transition[s, a]))
            if risky and s != crash:
                saw_near = True
                # blame a go-agent whose waiting would have removed the risk
                pivotal = []
                for i in range(n):
                    if acts[i] != MOVE_GO:
                        continue
                    alt = list(acts)
                    alt[i] = MOVE_WAIT
                    if game.transition[prev, game.joint_index(alt), crash] == 0.0:
                        pivotal.append(i)
                if not pivotal:
                    pivotal = [i for i in range(n) if acts[i] == MOVE_GO]
                for i in pivotal:
                    contributed[i] = True
        if s == crash:
            collided = True
        if not collided and not passed:
            pos = positions[s]
            passed = all(p >= length for p in pos)
        collisions += collided
        passes += passed
        near_misses += saw_near
        agent_near += contributed

    c = collisions / episodes
    p = passes / episodes
    m = near_misses / episodes
    return SafetyStats(
        collision_rate=c, pass_rate=p, near_miss_rate=m,
        collision_se=_binom_se(c, episodes),
        pass_se=_binom_se(p, episodes),
        near_miss_se=_binom_se(m, episodes),
        per_agent_near_miss=agent_near / episodes,
        episodes=episodes,
    )


@dataclass
class SweepRow:
    lam: float
    stats: SafetyStats
    entropy: float
    error: str = None


def lambda_sweep(spec, lams, iters=4000, seed=0, episodes=400, horizon=40,
                 schedule=None, config=None):
    """One equilibrium solve plus rollout stats per rationality value.

    Failures at individual lambda values are recorded in the row and the
    sweep continues.
    """
    schedule = schedule or TwoTimescaleSchedule()
    rows = []
    for lam in lams:
        lam = float(lam)
        try:
            game = build_scenario(spec)
            per_agent = resolve_lambdas(spec, override=lam)
            result = run_evoqre(game, schedule, TemperatureSchedule.fixed(lam),
                                iters, seed=seed, config=config,
                                lam_per_agent=per_agent)
            stats = rollout_stats(game, result.state.policy, episodes, horizon,
                                  seed + 1, spec=spec)
            entropy = float(np.mean(result.state.policy.entropy()))
            rows.append(SweepRow(lam=lam, stats=stats, entropy=entropy))
        except Exception as exc:   # record and keep sweeping
            rows.append(SweepRow(lam=lam, stats=None, entropy=np.nan,
                                 error=f"{type(exc).__name__}: {exc}"))
    return rows


def solve_scenario(spec, iters=4000, seed=0, config=None, schedule=None):
    """Build the game and solve it at the spec's (possibly per-agent) lambda."""
    game = build_scenario(spec)
    lams = resolve_lambdas(spec)
    schedule = schedule or TwoTimescaleSchedule()
    result = run_evoqre(game, schedule, TemperatureSchedule.fixed(float(np.mean(lams))),
                        iters, seed=seed, config=config, lam_per_agent=lams)
    return game, result


SWEEP_HEADER = ["lambda", "near_miss_rate", "collision_rate", "pass_rate",
                "entropy", "error"]


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            if row.stats is None:
                writer.writerow([repr(row.lam), "", "", "", "", row.error or ""])
            else:
                writer.writerow([
                    repr(row.lam),
                    repr(row.stats.near_miss_rate),
                    repr(row.stats.collision_rate),
                    repr(row.stats.pass_rate),
                    repr(row.entropy),
                    "",
                ])


MATRIX_BUILDERS = {
    "prisoners_dilemma": prisoners_dilemma,
    "matching_pennies": matching_pennies,
    "coordination": coordination_game,
    "rock_paper_scissors": rock_paper_scissors,
}
