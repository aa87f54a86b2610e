"""Ground-truth logit-equilibrium and pure-Nash solvers for small games.

These are the reference solvers every iterative method is tested against:
a damped fixed-point iteration on the logit best-response map, a homotopy
tracer that follows the solution branch from lambda = 0 upward, and
exhaustive pure-profile Nash enumeration.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .games import (JOINT_ACTION_CAP, GameValidationError, JointPolicy,
                    evaluate_joint_q)
from .numerics import softmax


@dataclass(frozen=True)
class LogitBRConfig:
    """Damped fixed-point iteration settings."""

    theta: float = 0.5          # damping; 1.0 is the undamped map
    max_iters: int = 10_000
    tol: float = 1e-10
    q_tol: float = 1e-12        # tolerance passed to exact Q evaluation

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


@dataclass
class QRESolution:
    policy: JointPolicy
    residual: float
    iterations_used: int
    lam: float
    converged: bool


def _per_agent_lambdas(game, lam):
    lams = np.atleast_1d(np.asarray(lam, dtype=float))
    if lams.size == 1:
        lams = np.full(game.n_agents, float(lams[0]))
    if lams.size != game.n_agents or np.any(lams < 0.0):
        raise ValueError("lambda must be a nonnegative scalar or one value per agent")
    return lams


def logit_best_response(game, policy, lam, q_tol=1e-12):
    """softmax(lambda * Q_i(s, .)) rows under Q evaluated at `policy`.

    `lam` may be a scalar or a per-agent array (heterogeneous rationality).
    """
    lams = _per_agent_lambdas(game, lam)
    q = evaluate_joint_q(game, policy, tol=q_tol)
    rows = [softmax(lams[i] * q.marginal[i], axis=1) for i in range(game.n_agents)]
    return JointPolicy(rows)


def _residual(a, b):
    return max(float(np.max(np.abs(ra - rb))) for ra, rb in zip(a.rows, b.rows))


def solve_qre_fixed_point(game, lam, config=None, init=None):
    """Damped iteration pi <- (1-theta) pi + theta B_lambda(pi).

    Non-convergence is reported, not raised: logit equilibria can be
    multiple and a stalled iteration is informative to the caller.
    """
    config = config or LogitBRConfig()
    policy = init.copy() if init is not None else JointPolicy.uniform(game)
    policy.validate()
    residual = np.inf
    for k in range(1, config.max_iters + 1):
        br = logit_best_response(game, policy, lam, q_tol=config.q_tol)
        residual = _residual(policy, br)
        if residual <= config.tol:
            return QRESolution(policy=policy, residual=residual,
                               iterations_used=k, lam=_scalar_or_mean(lam),
                               converged=True)
        for rows, target in zip(policy.rows, br.rows):
            rows *= (1.0 - config.theta)
            rows += config.theta * target
    return QRESolution(policy=policy, residual=residual,
                       iterations_used=config.max_iters,
                       lam=_scalar_or_mean(lam), converged=False)


def _scalar_or_mean(lam):
    arr = np.atleast_1d(np.asarray(lam, dtype=float))
    return float(arr[0]) if arr.size == 1 else float(arr.mean())


def trace_qre_homotopy(game, lambda_grid, config=None):
    """Warm-started solves along an ascending lambda grid.

    Returns the principal-branch path; an intermediate failure aborts the
    trace and the partial path is returned.
    """
    grid = list(lambda_grid)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be ascending")
    path = []
    warm = None
    for lam in grid:
        sol = solve_qre_fixed_point(game, lam, config=config, init=warm)
        path.append(sol)
        if not sol.converged:
            break
        warm = sol.policy
    return path


def nash_pure_enumeration(game, tie_tol=1e-12, q_tol=1e-12):
    """All pure stationary profiles with no improving unilateral deviation.

    A profile assigns one action per (agent, state).  By the one-shot
    deviation principle it is a Markov-perfect pure Nash iff no agent gains
    from a single-state action change, compared via exact joint Q values.
    """
    per_slot = [game.n_actions[i] for i in range(game.n_agents) for _ in range(game.n_states)]
    total = 1
    for n in per_slot:
        total *= n
        if total > JOINT_ACTION_CAP:
            raise GameValidationError("pure-profile enumeration exceeds cap")

    equilibria = []
    for flat in itertools.product(*(range(n) for n in per_slot)):
        choices = [flat[i * game.n_states:(i + 1) * game.n_states]
                   for i in range(game.n_agents)]
        policy = JointPolicy.deterministic(game, choices)
        q = evaluate_joint_q(game, policy, tol=q_tol)
        ok = True
        for i in range(game.n_agents):
            played = q.marginal[i][np.arange(game.n_states), np.asarray(choices[i])]
            if np.any(q.marginal[i].max(axis=1) > played + tie_tol):
                ok = False
                break
        if ok:
            equilibria.append(tuple(tuple(c) for c in choices))
    return equilibria
