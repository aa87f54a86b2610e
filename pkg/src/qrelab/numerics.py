"""Small numeric helpers shared across the package."""

import numpy as np


def softmax(x, axis=-1):
    """Overflow-safe softmax along `axis`."""
    x = np.asarray(x, dtype=float)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def logsumexp(x, axis=-1):
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.sum(np.exp(x - m), axis=axis))
    return out


def row_entropy(rows):
    """Shannon entropy of each probability row, 0*log0 = 0."""
    p = np.asarray(rows, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -np.sum(terms, axis=-1)


def kl_divergence(p, q):
    """KL(p || q) with the 0*log0 convention; +inf when q=0 < p."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((q == 0.0) & (p > 0.0)):
        return np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p / q), 0.0)
    return float(np.sum(terms))


def tv_distance(p, q):
    """Total-variation distance between two probability vectors."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def policy_tv(policy_a, policy_b):
    """Max over agents and states of per-row total variation."""
    worst = 0.0
    for rows_a, rows_b in zip(policy_a.rows, policy_b.rows):
        worst = max(worst, 0.5 * float(np.max(np.sum(np.abs(rows_a - rows_b), axis=1))))
    return worst
