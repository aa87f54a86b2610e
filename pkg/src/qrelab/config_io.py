"""Declarative YAML game configs and CSV policy serialization.

Game config schema (YAML mapping):

    agents: 2
    states: [s0, s1]                  # state labels, order fixes indices
    actions:                          # one action-label list per agent
      - [cooperate, defect]
      - [cooperate, defect]
    gamma: 0.9
    r_min: -1.0
    r_max: 5.0
    rho0: [1.0, 0.0]
    transition:                       # one row per (state, joint action)
      - {state: s0, actions: [cooperate, cooperate], probs: [0.5, 0.5]}
      ...
    rewards:                          # per (state, joint action): one value per agent
      - {state: s0, actions: [cooperate, cooperate], values: [3.0, 3.0]}
      ...

All probabilities are decimal literals.  Transition rows whose sum deviates
from 1 by <= 1e-9 are re-normalized; larger deviations are an error.
"""

import csv

import numpy as np
import yaml

from .games import JointPolicy, MarkovGame


class ConfigError(ValueError):
    """Raised on malformed or inconsistent game configs."""


def _index(labels, name, what):
    try:
        return labels.index(name)
    except ValueError:
        raise ConfigError(f"unknown {what} label {name!r}") from None


def load_game(path):
    with open(path, "r") as fh:
        raw = yaml.safe_load(fh)
    return game_from_dict(raw)


def game_from_dict(raw):
    try:
        n_agents = int(raw["agents"])
        state_labels = [str(s) for s in raw["states"]]
        action_labels = [[str(a) for a in acts] for acts in raw["actions"]]
        gamma = float(raw["gamma"])
        rho0 = np.asarray(raw["rho0"], dtype=float)
        r_min = float(raw["r_min"])
        r_max = float(raw["r_max"])
        transition_rows = raw["transition"]
        reward_rows = raw["rewards"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad game config: {exc}") from exc
    if len(action_labels) != n_agents:
        raise ConfigError("need one action list per agent")

    n_states = len(state_labels)
    n_actions = tuple(len(a) for a in action_labels)
    n_joint = int(np.prod(n_actions))
    transition = np.full((n_states, n_joint, n_states), np.nan)
    rewards = np.full((n_agents, n_states, n_joint), np.nan)

    def joint_of(entry):
        s = _index(state_labels, str(entry["state"]), "state")
        acts = entry["actions"]
        if len(acts) != n_agents:
            raise ConfigError(f"row {entry} needs {n_agents} actions")
        idx = tuple(_index(action_labels[i], str(a), "action") for i, a in enumerate(acts))
        return s, int(np.ravel_multi_index(idx, n_actions))

    for entry in transition_rows:
        s, a = joint_of(entry)
        probs = np.asarray(entry["probs"], dtype=float)
        if probs.shape != (n_states,):
            raise ConfigError(f"transition row for state {entry['state']} has wrong length")
        total = probs.sum()
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(
                f"transition row sums to {total!r}, deviation beyond 1e-9")
        transition[s, a] = probs / total
    for entry in reward_rows:
        s, a = joint_of(entry)
        values = np.asarray(entry["values"], dtype=float)
        if values.shape != (n_agents,):
            raise ConfigError("reward row needs one value per agent")
        rewards[:, s, a] = values

    if np.any(np.isnan(transition)):
        raise ConfigError("transition table incomplete")
    if np.any(np.isnan(rewards)):
        raise ConfigError("reward table incomplete")
    return MarkovGame(
        n_agents=n_agents, n_actions=n_actions, transition=transition,
        rewards=rewards, gamma=gamma, rho0=rho0, r_min=r_min, r_max=r_max,
        state_labels=tuple(state_labels),
        action_labels=tuple(tuple(a) for a in action_labels))


POLICY_HEADER = ["agent", "state", "action", "probability", "lambda", "residual"]


def write_policy_csv(path, policy, lam, residual):
    """One row per (agent, state, action): the oracle/solver CSV schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POLICY_HEADER)
        for i, rows in enumerate(policy.rows):
            for s in range(rows.shape[0]):
                for a in range(rows.shape[1]):
                    writer.writerow([i, s, a, repr(float(rows[s, a])),
                                     repr(float(lam)), repr(float(residual))])


def read_policy_csv(path, game):
    """Load a policy CSV back into a JointPolicy for the given game."""
    policy = JointPolicy.uniform(game)
    lam = None
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            i = int(row["agent"])
            policy.rows[i][int(row["state"]), int(row["action"])] = float(row["probability"])
            lam = float(row["lambda"])
    policy.validate(tol=1e-8)
    return policy, lam
