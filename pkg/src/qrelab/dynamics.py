"""Entropy-regularized replicator dynamics and the coupled two-timescale solver.

Two discrete realizations of the same flow live here:

* ``integrate_errd`` integrates the log-linear form of the dynamics with
  explicit Euler steps in logit space, which keeps rows on the simplex
  exactly after renormalization.
* ``run_evoqre`` runs the coupled actor/critic loop: a slow relaxed
  Bellman critic (exact sweeps or sampled retrace targets) and a fast
  multiplicative-weights actor driven by the entropy-adjusted fitness
  Q - alpha*log(pi), whose rest points are the logit equilibria.
"""

from dataclasses import dataclass, field

import numpy as np

from . import critic as critic_mod
from .games import (JointPolicy, QEstimate, SoftValueParams, apply_bellman,
                    evaluate_joint_q, marginalize_joint_q)
from .numerics import kl_divergence, softmax


class StepSizeError(RuntimeError):
    """Logits left the finite range during integration."""


@dataclass(frozen=True)
class TwoTimescaleSchedule:
    """Step-size laws eta_pi(k) = c_pi k^(-2/3), eta_q(k) = c_q k^(-1).

    Both are clamped to 1 for stability of the relaxation updates; the
    fast/slow ratio stays nondecreasing in k either way.
    """

    c_pi: float = 0.3
    c_q: float = 2.0

    def eta_pi(self, k):
        return min(1.0, self.c_pi * float(k) ** (-2.0 / 3.0))

    def eta_q(self, k):
        return min(1.0, self.c_q / float(k))


@dataclass(frozen=True)
class TemperatureSchedule:
    """Adaptive rationality growth checked on a fixed period."""

    lam_init: float
    lam_max: float = None
    growth: float = 1.1
    check_every: int = 1000
    eps_tol: float = 1e-3

    def __post_init__(self):
        if self.lam_init < 0.0:
            raise ValueError("rationality must be nonnegative")
        if self.lam_max is None:
            object.__setattr__(self, "lam_max", self.lam_init)
        if self.lam_max < self.lam_init:
            raise ValueError("lam_max below lam_init")

    @classmethod
    def fixed(cls, lam, eps_tol=1e-3, check_every=1000):
        return cls(lam_init=lam, lam_max=lam, eps_tol=eps_tol, check_every=check_every)


@dataclass
class ERRDState:
    policy: JointPolicy
    q_estimate: QEstimate
    iteration: int
    alpha: float


@dataclass
class TraceRow:
    k: int
    lam: float
    alpha: float
    eta_pi: float
    eta_q: float
    qre_gap: float
    kl_to_oracle: float
    bellman_residual: float
    displacement: float


@dataclass
class EvoQREResult:
    state: ERRDState
    trace: list
    converged: bool
    final_lambda: float
    terminal_displacement: float
    terminal_gap: float
    max_simplex_violation: float


def errd_vector_field(game, policy, q_marginal, tau):
    """Replicator-mutator derivative rows; each row sums to zero.

    d pi(a) = pi(a) [Q(a) - mean_pi Q] + tau [1/|A| - pi(a)].
    """
    out = []
    for rows, q in zip(policy.rows, q_marginal):
        mean_q = np.sum(rows * q, axis=1, keepdims=True)
        deriv = rows * (q - mean_q) + tau * (1.0 / rows.shape[1] - rows)
        out.append(deriv)
    return out


def integrate_errd(game, init, tau, dt, steps, q_refresh_every=1,
                   record_every=1, q_tol=1e-10):
    """Euler integration of the log-linear dynamics.

    Logits move by dt*(Q - tau*log pi); exponentiate-and-normalize keeps
    each row exactly on the simplex.  Q is re-evaluated under the current
    policy every `q_refresh_every` steps.
    """
    if q_refresh_every < 1:
        raise ValueError("q_refresh_every must be >= 1")
    if dt * tau > 2.0:
        # explicit Euler on u' = Q - tau*u oscillates with growing
        # amplitude beyond the linear stability limit dt < 2/tau
        raise StepSizeError(f"dt={dt} exceeds stability limit {2.0 / tau}")
    policy = init.copy()
    policy.validate()
    q = evaluate_joint_q(game, policy, tol=q_tol)
    trajectory = [ERRDState(policy.copy(), q, 0, tau)]
    logits = [np.log(np.clip(rows, 1e-300, None)) for rows in policy.rows]
    for step in range(1, steps + 1):
        for i, (u, marg) in enumerate(zip(logits, q.marginal)):
            with np.errstate(invalid="ignore", over="ignore"):
                u = u + dt * (marg - tau * u)
            if not np.all(np.isfinite(u)):
                s = int(np.argwhere((~np.isfinite(u)).any(axis=1))[0, 0])
                raise StepSizeError(
                    f"non-finite logits for agent {i}, state {s}; reduce dt")
            policy.rows[i] = softmax(u, axis=1)
            logits[i] = np.log(np.clip(policy.rows[i], 1e-300, None))
        if step % q_refresh_every == 0:
            q = evaluate_joint_q(game, policy, tol=q_tol)
        if step % record_every == 0 or step == steps:
            trajectory.append(ERRDState(policy.copy(), q, step, tau))
    return trajectory


def policy_step_mw(policy_row, q_row, eta_pi, alpha):
    """Multiplicative-weights row update pi'(a) ~ pi(a) exp(eta*Q(a)/alpha)."""
    if eta_pi <= 0.0:
        raise ValueError("eta_pi must be positive")
    logit = eta_pi * np.asarray(q_row, dtype=float) / alpha
    logit = logit - np.max(logit)
    nxt = np.asarray(policy_row, dtype=float) * np.exp(logit)
    total = nxt.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise FloatingPointError("multiplicative-weights row degenerated to zero mass")
    return nxt / total


def critic_step(q, game, policy, eta_q):
    """One relaxation step Q <- Q + eta_q (T^pi[Q] - Q); refreshes marginals."""
    if not (0.0 < eta_q <= 1.0):
        raise ValueError("eta_q must lie in (0, 1]")
    applied = apply_bellman(game, policy, q.joint)
    out = q.copy()
    out.joint = q.joint + eta_q * (applied - q.joint)
    out.refresh_marginal(game, policy)
    return out


def _actor_sweep(policy, q_marginal, eta, lams):
    """Log-linear replicator step for every row; returns max L1 displacement.

    logits <- (1 - eta) log pi + eta * lambda_i * Q, then renormalize.
    Rest point: pi = softmax(lambda_i * Q).
    """
    displacement = 0.0
    for i, (rows, q) in enumerate(zip(policy.rows, q_marginal)):
        u = np.log(np.clip(rows, 1e-300, None))
        u = (1.0 - eta) * u + eta * lams[i] * q
        nxt = softmax(u, axis=1)
        displacement = max(displacement, float(np.max(np.sum(np.abs(nxt - rows), axis=1))))
        policy.rows[i] = nxt
    return displacement


def _gap_rows(policy, q_marginal, lams):
    """Average KL(pi || softmax(lambda Q)) over agents and states."""
    total = 0.0
    count = 0
    for rows, q, lam in zip(policy.rows, q_marginal, lams):
        target = softmax(lam * q, axis=1)
        for s in range(rows.shape[0]):
            total += kl_divergence(rows[s], target[s])
            count += 1
    return total / count


def _kl_to(policy, reference):
    """Average KL(reference || policy) over agents and states (inf-safe)."""
    total = 0.0
    count = 0
    for rows, ref in zip(policy.rows, reference.rows):
        for s in range(rows.shape[0]):
            total += kl_divergence(ref[s], rows[s])
            count += 1
    return total / count


@dataclass
class EvoQREConfig:
    """Knobs for the coupled solver beyond the step-size laws."""

    mode: str = "exact"              # "exact" | "sampled"
    gap_every: int = 10              # trace the gap every this many iterations
    record_every: int = 1
    eps_displacement: float = 0.0    # optional early stop on actor movement
    mitigate_oscillation: bool = False
    mitigation_factor: float = 1.5   # alpha multiplier applied once per plateau
    plateau_checks: int = 3
    # sampled-mode settings
    horizon: int = 32
    retrace_lambda: float = 0.9
    tau_target: float = 0.05
    batch_size: int = 4
    debug_simplex: bool = False


def run_evoqre(game, schedule, temp, iters, seed=0, config=None,
               oracle_policy=None, init=None, lam_per_agent=None):
    """Coupled two-timescale loop computing a logit equilibrium.

    Critic: exact relaxed Bellman sweeps ("exact" mode) or tabular updates
    toward retrace targets from sampled rollouts ("sampled" mode).
    Actor: log-linear replicator step per state.  Every `temp.check_every`
    iterations the equilibrium gap is measured on all states; if below
    `temp.eps_tol` the rationality grows by `temp.growth` up to `lam_max`.

    Returns the terminal state plus a per-iteration diagnostics trace.
    """
    config = config or EvoQREConfig()
    rng = np.random.default_rng(seed)
    lam = float(temp.lam_init)
    lam_cap = float(temp.lam_max)
    if lam_per_agent is not None:
        lams = np.asarray(lam_per_agent, dtype=float)
        if lams.shape != (game.n_agents,):
            raise ValueError("need one lambda per agent")
    else:
        lams = np.full(game.n_agents, lam)

    policy = init.copy() if init is not None else JointPolicy.uniform(game)
    policy.validate()
    q = QEstimate.zeros(game, with_target=(config.mode == "sampled"),
                        tau_target=config.tau_target)
    q.refresh_marginal(game, policy)

    trace = []
    converged = False
    displacement = np.inf
    gap = np.inf
    max_violation = 0.0
    recent_gaps = []
    last_mitigation_check = 0

    k_reset = 0
    for k in range(1, iters + 1):
        eta_q = schedule.eta_q(k - k_reset)
        eta_pi = schedule.eta_pi(k - k_reset)

        if config.mode == "exact":
            applied = apply_bellman(game, policy, q.joint)
            residual = float(np.max(np.abs(applied - q.joint)))
            q.joint = q.joint + eta_q * (applied - q.joint)
            q.refresh_marginal(game, policy)
        elif config.mode == "sampled":
            params = SoftValueParams.from_lambda(max(float(np.mean(lams)), 1e-12))
            trajs = [critic_mod.sample_trajectory(game, policy, config.horizon, rng)
                     for _ in range(config.batch_size)]
            cfg = critic_mod.RetraceConfig(lam_bar=config.retrace_lambda,
                                           horizon=config.horizon)
            q = critic_mod.critic_update_sampled(q, trajs, policy, params, cfg,
                                                 eta_q, game=game)
            q.refresh_marginal(game, policy)
            applied = apply_bellman(game, policy, q.joint)
            residual = float(np.max(np.abs(applied - q.joint)))
        else:
            raise ValueError(f"unknown mode {config.mode!r}")

        displacement = _actor_sweep(policy, q.marginal, eta_pi, lams)
        if config.debug_simplex:
            policy.validate(tol=1e-10)
        max_violation = max(max_violation, policy.max_simplex_violation())

        want_gap = (k % config.gap_every == 0) or (k % temp.check_every == 0) or k == iters
        if want_gap:
            gap = _gap_rows(policy, q.marginal, lams)
        if k % temp.check_every == 0:
            if gap < temp.eps_tol:
                converged = True
                if lam < lam_cap:
                    lam = min(lam_cap, temp.growth * lam)
                    if lam_per_agent is None:
                        lams = np.full(game.n_agents, lam)
                    converged = False   # target moved; keep going
            recent_gaps.append(gap)
            n_checks = len(recent_gaps)
            if (config.mitigate_oscillation
                    and n_checks > 2 * config.plateau_checks
                    and n_checks - last_mitigation_check > config.plateau_checks):
                # Plateau: the gap over the recent checks has not improved
                # on the best seen before them.  Cycling iterates oscillate
                # around a nonzero gap, so this fires where a monotone
                # plateau test would not.
                recent = min(recent_gaps[-config.plateau_checks:])
                earlier = min(recent_gaps[last_mitigation_check:
                                          -config.plateau_checks])
                if recent >= temp.eps_tol and recent >= 0.5 * earlier:
                    lam = lam / config.mitigation_factor
                    lams = lams / config.mitigation_factor
                    lam_cap = lam      # do not regrow past a mitigated level
                    k_reset = k        # restart step sizes at the smoother target
                    last_mitigation_check = n_checks

        if k % config.record_every == 0 or k == iters:
            kl_oracle = _kl_to(policy, oracle_policy) if oracle_policy is not None else np.nan
            trace.append(TraceRow(k=k, lam=float(np.mean(lams)),
                                  alpha=float(np.mean(1.0 / np.maximum(lams, 1e-300))),
                                  eta_pi=eta_pi, eta_q=eta_q,
                                  qre_gap=gap if want_gap else np.nan,
                                  kl_to_oracle=kl_oracle,
                                  bellman_residual=residual,
                                  displacement=displacement))
        if config.eps_displacement > 0.0 and displacement <= config.eps_displacement:
            break

    gap = _gap_rows(policy, q.marginal, lams)
    state = ERRDState(policy=policy, q_estimate=q, iteration=k,
                      alpha=float(np.mean(1.0 / np.maximum(lams, 1e-300))))
    return EvoQREResult(state=state, trace=trace,
                        converged=converged or gap < temp.eps_tol,
                        final_lambda=float(np.mean(lams)),
                        terminal_displacement=displacement,
                        terminal_gap=gap,
                        max_simplex_violation=max_violation)
