"""Maximum-likelihood calibration of the rationality parameter.

Each candidate lambda is re-solved to its logit equilibrium before the
likelihood of the observed actions is evaluated; the grid argmin is then
sharpened by derivative-free golden-section refinement with warm-started
solves.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .games import GameValidationError
from .oracle import LogitBRConfig, solve_qre_fixed_point

DEFAULT_GRID = (1.0, 2.0, 5.0, 8.0, 10.0, 15.0, 20.0)
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class SolverFailure(RuntimeError):
    def __init__(self, lam, residual):
        super().__init__(f"equilibrium solve failed at lambda={lam} "
                         f"(residual {residual:.3e})")
        self.lam = lam


@dataclass
class BehaviorDataset:
    """Observed (state, per-agent action) pairs."""

    states: np.ndarray       # (T,)
    actions: np.ndarray      # (T, N)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=int)
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=int))

    def validate(self, game):
        if np.any(self.states < 0) or np.any(self.states >= game.n_states):
            raise GameValidationError("observation references unknown state")
        if self.actions.shape[1] != game.n_agents:
            raise GameValidationError("need one action per agent per observation")
        for i, n in enumerate(game.n_actions):
            if np.any(self.actions[:, i] < 0) or np.any(self.actions[:, i] >= n):
                raise GameValidationError(f"invalid action index for agent {i}")

    def __len__(self):
        return len(self.states)


def generate_behavior_data(game, policy, n_obs, seed):
    """Synthetic observations: states from rho0, actions from the policy."""
    rng = np.random.default_rng(seed)
    states = rng.choice(game.n_states, size=n_obs, p=game.rho0)
    actions = np.empty((n_obs, game.n_agents), dtype=int)
    for i in range(game.n_agents):
        rows = policy.rows[i]
        u = rng.uniform(size=n_obs)
        cdf = np.cumsum(rows[states], axis=1)
        cdf[:, -1] = 1.0
        actions[:, i] = np.argmax(u[:, None] <= cdf, axis=1)
    return BehaviorDataset(states=states, actions=actions)


@dataclass
class CalibrationResult:
    lam_star: float
    grid: list
    nll_curve: list
    refinement: list = field(default_factory=list)
    boundary: bool = False
    multimodal: bool = False


def _policy_nll(policy, data):
    total = 0.0
    for i, rows in enumerate(policy.rows):
        p = rows[data.states, data.actions[:, i]]
        if np.any(p <= 0.0):
            return np.inf
        total += -np.sum(np.log(p))
    return total / len(data)


def nll_at_lambda(game, data, lam, config=None, warm_start=None):
    """Mean negative log-likelihood of the data under the lambda equilibrium.

    Averages over observations; per observation the log-likelihoods of all
    agents' actions are summed (product policy).
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    data.validate(game)
    config = config or LogitBRConfig()
    sol = solve_qre_fixed_point(game, lam, config=config, init=warm_start)
    if not sol.converged:
        raise SolverFailure(lam, sol.residual)
    return _policy_nll(sol.policy, data), sol


def calibrate_lambda(game, data, grid=DEFAULT_GRID, refine=True, seed=0,
                     config=None, bracket_tol=0.05):
    """Grid search over lambda with warm-started re-solving, then refinement.

    A non-unimodal NLL curve skips refinement and flags multimodality; a
    minimum on the grid edge sets the boundary flag.
    """
    grid = [float(g) for g in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly ascending")
    config = config or LogitBRConfig()
    curve = []
    warm = None
    solutions = {}
    for lam in grid:
        nll, sol = nll_at_lambda(game, data, lam, config=config, warm_start=warm)
        curve.append(nll)
        solutions[lam] = sol
        warm = sol.policy
    best = int(np.argmin(curve))

    # Unimodality: strictly one descent-then-ascent switch along the curve.
    diffs = np.sign(np.diff(curve))
    switches = int(np.sum(np.abs(np.diff(diffs[diffs != 0])) > 0)) if np.any(diffs != 0) else 0
    multimodal = switches > 1
    boundary = best in (0, len(grid) - 1)

    result = CalibrationResult(lam_star=grid[best], grid=grid, nll_curve=curve,
                               boundary=boundary, multimodal=multimodal)
    if not refine or multimodal or boundary:
        return result

    lo = grid[best - 1]
    hi = grid[best + 1]
    warm = solutions[grid[best]].policy
    cache = {}

    def f(lam):
        if lam not in cache:
            nll, sol = nll_at_lambda(game, data, lam, config=config, warm_start=warm)
            cache[lam] = nll
            result.refinement.append((lam, nll))
        return cache[lam]

    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > bracket_tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    result.lam_star = 0.5 * (a + b)
    return result


DATA_HEADER = ["t", "state_id", "agent_id", "action_id"]


def write_behavior_csv(path, data):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATA_HEADER)
        for t in range(len(data)):
            for i in range(data.actions.shape[1]):
                writer.writerow([t, int(data.states[t]), i, int(data.actions[t, i])])


def read_behavior_csv(path):
    obs = {}
    n_agents = 0
    with open(path, "r", newline="") as fh:
        for row in csv.DictReader(fh):
            t = int(row["t"])
            i = int(row["agent_id"])
            n_agents = max(n_agents, i + 1)
            obs.setdefault(t, {})["state"] = int(row["state_id"])
            obs[t][i] = int(row["action_id"])
    states = []
    actions = []
    for t in sorted(obs):
        states.append(obs[t]["state"])
        actions.append([obs[t][i] for i in range(n_agents)])
    return BehaviorDataset(states=np.array(states), actions=np.array(actions))


def write_calibration_csv(path, result):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "nll", "phase"])
        for lam, nll in zip(result.grid, result.nll_curve):
            writer.writerow([repr(float(lam)), repr(float(nll)), "grid"])
        for lam, nll in result.refinement:
            writer.writerow([repr(float(lam)), repr(float(nll)), "refine"])
        writer.writerow([repr(float(result.lam_star)), "", "optimum"])
