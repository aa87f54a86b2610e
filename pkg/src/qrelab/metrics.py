"""Equilibrium-quality and stability diagnostics.

Gap, exploitability, monotonicity residual and KL tracking, plus the
numerical property checks backing the softmax-Lipschitz, stationary
distribution and tracking-error bounds.
"""

import csv
from dataclasses import dataclass, asdict

import numpy as np

from .games import (JointPolicy, best_response_value, evaluate_joint_q,
                    joint_action_probs, policy_transition, state_values)
from .numerics import kl_divergence, row_entropy, softmax


@dataclass
class DiagnosticsReport:
    qre_gap: float
    exploitability: float
    per_agent_exploitability: tuple
    mu_emp: float
    kl_to_oracle: float
    entropy_per_agent: tuple
    iteration: int = 0

    def csv_row(self):
        d = asdict(self)
        d["per_agent_exploitability"] = ";".join(repr(float(x)) for x in self.per_agent_exploitability)
        d["entropy_per_agent"] = ";".join(repr(float(x)) for x in self.entropy_per_agent)
        return d


DIAGNOSTICS_HEADER = ["qre_gap", "exploitability", "per_agent_exploitability",
                      "mu_emp", "kl_to_oracle", "entropy_per_agent", "iteration"]


def write_diagnostics_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DIAGNOSTICS_HEADER)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.csv_row())


def qre_gap(game, policy, alpha, q, reverse=False):
    """Average KL between policy rows and softmax(Q/alpha) rows.

    Default direction puts the policy first (the solver's convergence
    check); `reverse=True` measures KL(softmax || policy) instead (the
    direction used by the convergence-rate bound).  Both coincide at zero
    exactly on a logit equilibrium.
    """
    lam = 0.0 if np.isinf(alpha) else 1.0 / alpha
    total = 0.0
    count = 0
    for rows, marg in zip(policy.rows, q.marginal):
        target = softmax(lam * marg, axis=1)
        for s in range(rows.shape[0]):
            if reverse:
                total += kl_divergence(target[s], rows[s])
            else:
                total += kl_divergence(rows[s], target[s])
            count += 1
    return total / count


def _value_under_rho0(game, values):
    return values @ game.rho0


def exploitability(game, policy, oracle_tier="quick_vi", tol=1e-10, seed=0,
                   cem_population=64, cem_iters=8, cem_elite=0.2):
    """Mean unilateral best-response gain under the start distribution.

    Tiers: "quick_vi" exact value iteration, "extended" the same with a
    tighter tolerance and larger iteration cap, "cem" cross-entropy search
    over policy tables (for settings without exact model access).
    Returns (mean_gain, per_agent_gains).
    """
    current = state_values(game, policy, tol=tol)
    gains = []
    for i in range(game.n_agents):
        base = _value_under_rho0(game, current[i])
        if oracle_tier == "quick_vi":
            br = best_response_value(game, policy, i, tol=tol)
            gain = _value_under_rho0(game, br) - base
        elif oracle_tier == "extended":
            br = best_response_value(game, policy, i, tol=min(tol, 1e-12),
                                     max_iters=1_000_000)
            gain = _value_under_rho0(game, br) - base
        elif oracle_tier == "cem":
            gain = _cem_best_response_gain(game, policy, i, base, seed,
                                           cem_population, cem_iters, cem_elite)
        else:
            raise ValueError(f"unknown oracle tier {oracle_tier!r}")
        gains.append(max(0.0, float(gain)))
    return float(np.mean(gains)), tuple(gains)


def _cem_best_response_gain(game, policy, agent, base, seed, population,
                            iters, elite_frac):
    rng = np.random.default_rng(seed)
    n = game.n_actions[agent]
    mean_logits = np.zeros((game.n_states, n))
    std = np.full((game.n_states, n), 2.0)
    best = -np.inf
    n_elite = max(1, int(elite_frac * population))
    for _ in range(iters):
        scores = []
        samples = []
        for _ in range(population):
            logits = mean_logits + std * rng.standard_normal(mean_logits.shape)
            cand = policy.copy()
            cand.rows[agent] = softmax(logits, axis=1)
            v = state_values(game, cand)[agent]
            scores.append(_value_under_rho0(game, v))
            samples.append(logits)
        order = np.argsort(scores)[::-1]
        best = max(best, scores[order[0]])
        elite = np.stack([samples[j] for j in order[:n_elite]])
        mean_logits = elite.mean(axis=0)
        std = elite.std(axis=0) + 1e-3
    return best - base


def discounted_visitation(game, policy):
    """Normalized discounted state-occupancy under rho0."""
    chain, _ = policy_transition(game, policy)
    s = game.n_states
    occ = np.linalg.solve(np.eye(s) - game.gamma * chain.T, game.rho0)
    return occ / occ.sum()


def perturb_policy(policy, radius, rng):
    """Random policy within per-row total variation `radius` of the input."""
    out = policy.copy()
    for rows in out.rows:
        n = rows.shape[1]
        rand = rng.dirichlet(np.ones(n), size=rows.shape[0])
        # TV(row, rand) <= 1, so mixing weight u keeps the row within u in TV
        u = rng.uniform(0.0, 1.0, size=(rows.shape[0], 1)) * min(1.0, radius)
        rows *= (1.0 - u)
        rows += u * rand
    return out


@dataclass
class MonotonicityReport:
    mu_emp: float          # normalized by squared policy TV
    mu_emp_raw: float      # unnormalized clamped residual
    pairs_used: int


def monotonicity_residual(game, policy, n_pairs=100, ball_radius=0.1,
                          ref_dist="visitation", seed=0, q_tol=1e-10):
    """Empirical near-monotonicity residual around the current iterate.

    Samples policy pairs inside a TV ball, computes the pairing inner
    product sum_i E_{s~rho*} <Q_i^pi - Q_i^pi', pi_i - pi_i'>, and reports
    the worst clamped negative value, both raw and normalized by the
    squared policy TV distance.  Zero-distance pairs are skipped.
    """
    rng = np.random.default_rng(seed)
    if isinstance(ref_dist, str):
        rho = discounted_visitation(game, policy) if ref_dist == "visitation" \
            else np.full(game.n_states, 1.0 / game.n_states)
    else:
        rho = np.asarray(ref_dist, dtype=float)
    worst_norm = 0.0
    worst_raw = 0.0
    used = 0
    for _ in range(n_pairs):
        pa = perturb_policy(policy, ball_radius, rng)
        pb = perturb_policy(policy, ball_radius, rng)
        tv = max(0.5 * float(np.max(np.sum(np.abs(ra - rb), axis=1)))
                 for ra, rb in zip(pa.rows, pb.rows))
        if tv <= 1e-12:
            continue
        qa = evaluate_joint_q(game, pa, tol=q_tol)
        qb = evaluate_joint_q(game, pb, tol=q_tol)
        lhs = 0.0
        for i in range(game.n_agents):
            inner = np.sum((qa.marginal[i] - qb.marginal[i]) * (pa.rows[i] - pb.rows[i]), axis=1)
            lhs += float(rho @ inner)
        raw = max(0.0, -lhs)
        worst_raw = max(worst_raw, raw)
        worst_norm = max(worst_norm, raw / (tv * tv))
        used += 1
    return MonotonicityReport(mu_emp=worst_norm, mu_emp_raw=worst_raw, pairs_used=used)


def kl_to_reference(policy, reference, state_weights=None):
    """Weighted average KL(reference || policy) over agents and states."""
    n_states = policy.rows[0].shape[0]
    w = np.full(n_states, 1.0 / n_states) if state_weights is None \
        else np.asarray(state_weights, dtype=float)
    total = 0.0
    for rows, ref in zip(policy.rows, reference.rows):
        for s in range(n_states):
            kl = kl_divergence(ref[s], rows[s])
            if np.isinf(kl):
                return np.inf
            total += w[s] * kl
    return total / len(policy.rows)


@dataclass
class LipschitzReport:
    max_l1_ratio: float
    max_kl_ratio: float
    samples_used: int


def softmax_lipschitz_check(samples, alpha, q_range, n_actions, seed=0):
    """Worst observed ratios against the softmax Lipschitz bounds.

    l1 bound:  ||sm(Q) - sm(Q')||_1 <= (2/alpha) ||Q - Q'||_inf
    KL bound:  KL(sm(Q) || sm(Q'))  <= (|A|/alpha^2) ||Q - Q'||_inf^2
    Both ratios must stay <= 1.
    """
    rng = np.random.default_rng(seed)
    lo, hi = q_range
    worst_l1 = 0.0
    worst_kl = 0.0
    used = 0
    batch = 4096
    remaining = samples
    while remaining > 0:
        m = min(batch, remaining)
        remaining -= m
        q1 = rng.uniform(lo, hi, size=(m, n_actions))
        q2 = rng.uniform(lo, hi, size=(m, n_actions))
        dinf = np.max(np.abs(q1 - q2), axis=1)
        keep = dinf > 0.0
        if not np.any(keep):
            continue
        q1, q2, dinf = q1[keep], q2[keep], dinf[keep]
        p1 = softmax(q1 / alpha, axis=1)
        p2 = softmax(q2 / alpha, axis=1)
        l1 = np.sum(np.abs(p1 - p2), axis=1)
        worst_l1 = max(worst_l1, float(np.max(l1 / ((2.0 / alpha) * dinf))))
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p1 > 0.0, p1 * np.log(p1 / p2), 0.0)
        kl = terms.sum(axis=1)
        worst_kl = max(worst_kl, float(np.max(kl / ((n_actions / alpha ** 2) * dinf ** 2))))
        used += int(keep.sum())
    return LipschitzReport(max_l1_ratio=worst_l1, max_kl_ratio=worst_kl, samples_used=used)


def stationary_distribution(chain, tol=1e-13):
    """Stationary row vector of an ergodic chain via the eigenproblem."""
    vals, vecs = np.linalg.eig(chain.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, idx])
    v = np.abs(v)
    return v / v.sum()


def stationary_shift_check(game, policy, n_pairs=100, ball_radius=0.05, seed=0):
    """Empirical Lipschitz check for the stationary distribution.

    Measures the chain's mixing constants on the base policy and verifies
    ||rho^pi - rho^pi'||_TV <= C_erg/(1-rho_mix) * ||pi - pi'||_TV over
    random nearby pairs.  Returns (bound, max observed ratio).
    """
    rng = np.random.default_rng(seed)
    chain, _ = policy_transition(game, policy)
    eigvals = np.sort(np.abs(np.linalg.eigvals(chain)))[::-1]
    rho_mix = float(min(max(eigvals[1], 1e-6), 1.0 - 1e-9))
    rho = stationary_distribution(chain)
    # Measured ergodicity constant: worst one-step TV decay factor from
    # point-mass starts, relative to rho_mix.
    c_erg = 1.0
    for t in range(1, 20):
        p_t = np.linalg.matrix_power(chain, t)
        dev = 0.5 * np.max(np.sum(np.abs(p_t - rho[None, :]), axis=1))
        c_erg = max(c_erg, dev / rho_mix ** t)
    bound = c_erg / (1.0 - rho_mix)
    worst = 0.0
    for _ in range(n_pairs):
        pa = perturb_policy(policy, ball_radius, rng)
        pb = perturb_policy(policy, ball_radius, rng)
        tv_pi = max(0.5 * float(np.max(np.sum(np.abs(ra - rb), axis=1)))
                    for ra, rb in zip(pa.rows, pb.rows))
        if tv_pi <= 1e-12:
            continue
        ca, _ = policy_transition(game, pa)
        cb, _ = policy_transition(game, pb)
        tv_rho = 0.5 * float(np.sum(np.abs(stationary_distribution(ca)
                                           - stationary_distribution(cb))))
        worst = max(worst, tv_rho / tv_pi)
    return bound, worst


def mw_tracking_check(n_actions=4, alpha=0.5, c_pi=1.0, drift=1.0, iters=20_000,
                      seed=0, fit_upto=None):
    """Tracking error of the fast policy under a slowly drifting target.

    The target table moves by drift/k per step; the policy follows the
    log-linear update with step c_pi * k^(-2/3).  Returns (ks, errors,
    fitted c) where c is calibrated on the first half so the tail can be
    checked against c * log(k) * k^(-1/3).
    """
    rng = np.random.default_rng(seed)
    q = rng.uniform(-1.0, 1.0, size=n_actions)
    direction = rng.standard_normal(n_actions)
    direction /= np.max(np.abs(direction))
    pi = np.full(n_actions, 1.0 / n_actions)
    ks = []
    errs = []
    for k in range(1, iters + 1):
        q = q + drift / k * direction
        eta = min(1.0, c_pi * k ** (-2.0 / 3.0))
        u = (1.0 - eta) * np.log(pi) + eta * q / alpha
        pi = softmax(u)
        target = softmax(q / alpha)
        ks.append(k)
        errs.append(float(np.sum(np.abs(pi - target))))
    ks = np.array(ks)
    errs = np.array(errs)
    fit_upto = fit_upto or iters // 2
    envelope = np.log(ks + 1.0) * ks ** (-1.0 / 3.0)
    fit_mask = (ks >= 10) & (ks <= fit_upto)
    c_fit = float(np.max(errs[fit_mask] / envelope[fit_mask]))
    return ks, errs, c_fit


def policy_entropy_mean(policy):
    """Mean per-state entropy averaged over agents."""
    return float(np.mean([np.mean(row_entropy(rows)) for rows in policy.rows]))


def make_report(game, policy, lam, q=None, oracle=None, iteration=0,
                mu_pairs=0, seed=0):
    """Assemble a DiagnosticsReport snapshot for the given policy."""
    if q is None:
        q = evaluate_joint_q(game, policy, tol=1e-10)
    alpha = np.inf if lam == 0.0 else 1.0 / lam
    gap = qre_gap(game, policy, alpha, q)
    expl, per_agent = exploitability(game, policy)
    mu = monotonicity_residual(game, policy, n_pairs=mu_pairs, seed=seed).mu_emp \
        if mu_pairs > 0 else 0.0
    kl = kl_to_reference(policy, oracle) if oracle is not None else np.nan
    return DiagnosticsReport(
        qre_gap=gap, exploitability=expl, per_agent_exploitability=per_agent,
        mu_emp=mu, kl_to_oracle=kl,
        entropy_per_agent=tuple(float(np.mean(row_entropy(r))) for r in policy.rows),
        iteration=iteration)
