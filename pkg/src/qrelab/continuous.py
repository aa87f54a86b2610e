"""Continuous-action logit-response machinery on compact box action spaces.

Three interchangeable density approximators for the Gibbs target
p(a) ~ exp(lambda * Q(a)) on a box:

* Gaussian mixtures with multiplicative-weights component weights,
  reparameterized gradient mean steps and moment-matched covariances;
* Stein variational particle transport with an RBF kernel;
* Langevin sampling of the energy E = lambda * Q with reflective walls.

All of them are checked against tensor-grid quadrature of the exact
density (dimension <= 2).
"""

from dataclasses import dataclass, field

import numpy as np

SIGMA_FLOOR = 1e-4
DIVERSITY_COEF = 0.1


class QuadratureError(ValueError):
    """Grid too coarse: Richardson disagreement above 10%."""


class SamplerDivergenceError(RuntimeError):
    """Langevin iterate kept escaping the action box."""


@dataclass
class SmoothQ:
    """Differentiable scalar field on a compact box with gradient access."""

    value: callable          # (d,) array -> float
    grad: callable           # (d,) array -> (d,) array
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if np.any(self.hi <= self.lo):
            raise ValueError("box must have positive extent")

    @property
    def dim(self):
        return self.lo.size

    def clip(self, a):
        return np.clip(a, self.lo, self.hi)

    def value_batch(self, pts):
        return np.array([float(self.value(p)) for p in np.atleast_2d(pts)])

    def grad_batch(self, pts):
        return np.array([np.atleast_1d(self.grad(p)) for p in np.atleast_2d(pts)])


def quadratic_q(center, curvature=1.0, lo=-1.0, hi=1.0, dim=1):
    """Concave quadratic test field Q(a) = -curvature * ||a - center||^2."""
    c = np.full(dim, float(center)) if np.isscalar(center) else np.asarray(center, float)
    return SmoothQ(
        value=lambda a: -curvature * float(np.sum((np.atleast_1d(a) - c) ** 2)),
        grad=lambda a: -2.0 * curvature * (np.atleast_1d(a) - c),
        lo=np.full(dim, lo), hi=np.full(dim, hi))


@dataclass
class MixturePolicy:
    """Gaussian mixture for one state: weights on the simplex, diagonal covs."""

    weights: np.ndarray      # (M,)
    means: np.ndarray        # (M, d)
    covs: np.ndarray         # (M, d) diagonal entries
    diversity_coef: float = DIVERSITY_COEF
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.atleast_2d(np.asarray(self.covs, dtype=float))
        self.covs = np.maximum(self.covs, self.sigma_floor)
        total = self.weights.sum()
        if total <= 0 or np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative with positive mass")
        self.weights = self.weights / total

    @property
    def n_components(self):
        return self.weights.size

    def density(self, pts):
        pts = np.atleast_2d(pts)
        out = np.zeros(len(pts))
        for w, mu, var in zip(self.weights, self.means, self.covs):
            z = (pts - mu) ** 2 / var
            norm = np.prod(np.sqrt(2.0 * np.pi * var))
            out += w * np.exp(-0.5 * z.sum(axis=1)) / norm
        return out

    def sample_component(self, m, n, rng):
        eps = rng.standard_normal((n, self.means.shape[1]))
        return self.means[m] + np.sqrt(self.covs[m]) * eps

    def collapsed_count(self, threshold=0.01):
        """Mode-collapse sentinel: number of components below the weight floor."""
        return int(np.sum(self.weights < threshold))


def component_value_estimates(mix, smooth_q, n_samples, rng):
    """Monte-Carlo E[Q] per component, J draws each."""
    if n_samples < 1:
        raise ValueError("need at least one sample per component")
    return np.array([
        float(np.mean(smooth_q.value_batch(mix.sample_component(m, n_samples, rng))))
        for m in range(mix.n_components)])


def mixture_weight_step(mix, q_bar, eta_pi, alpha):
    """Multiplicative weights on mixture weights with a diversity bonus.

    The exponent optimizes <w, Qbar> + diversity_coef * H(w); the entropy
    gradient adds -coef*(log w + 1), which lifts vanishing components.
    """
    if eta_pi < 0.0:
        raise ValueError("eta_pi must be nonnegative")
    logw = np.log(np.clip(mix.weights, 1e-300, None))
    fitness = np.asarray(q_bar, dtype=float) - mix.diversity_coef * (logw + 1.0)
    exponent = eta_pi * fitness / alpha
    exponent -= exponent.max()
    nxt = mix.weights * np.exp(exponent)
    total = nxt.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise FloatingPointError("mixture weights degenerated to zero mass")
    return nxt / total


def mixture_mean_step(mix, smooth_q, eta_mu, n_samples, rng):
    """Reparameterized gradient ascent on each component mean, box-clamped."""
    means = mix.means.copy()
    for m in range(mix.n_components):
        pts = mix.sample_component(m, n_samples, rng)
        grads = smooth_q.grad_batch(pts)
        if not np.all(np.isfinite(grads)):
            raise FloatingPointError(f"non-finite gradient for component {m}")
        means[m] = smooth_q.clip(means[m] + eta_mu * grads.mean(axis=0))
    return means


def mixture_cov_step(mix, smooth_q, alpha, n_samples, rng, beta=0.5):
    """Moment-match diagonal covariances to the locally tilted target.

    Draws from each component, tilts by exp(Q/alpha) relative to the
    component's own density (self-normalized importance weights), and blends
    the weighted second moment with rate beta.  Floored elementwise.
    """
    covs = mix.covs.copy()
    for m in range(mix.n_components):
        pts = mix.sample_component(m, n_samples, rng)
        logq = smooth_q.value_batch(pts) / alpha
        logp = -0.5 * np.sum((pts - mix.means[m]) ** 2 / mix.covs[m], axis=1)
        logw = logq - logp
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        mean = np.sum(w[:, None] * pts, axis=0)
        second = np.sum(w[:, None] * (pts - mean) ** 2, axis=0)
        covs[m] = np.maximum((1.0 - beta) * covs[m] + beta * second, mix.sigma_floor)
    return covs


def fit_mixture(smooth_q, alpha, n_components, iters, seed, eta_pi=0.5,
                eta_mu=0.05, n_samples=64):
    """Run the coupled weight/mean/covariance updates from spread starts."""
    rng = np.random.default_rng(seed)
    d = smooth_q.dim
    means = rng.uniform(smooth_q.lo, smooth_q.hi, size=(n_components, d))
    span = smooth_q.hi - smooth_q.lo
    mix = MixturePolicy(weights=np.full(n_components, 1.0 / n_components),
                        means=means, covs=np.tile((span / 6.0) ** 2, (n_components, 1)))
    for _ in range(iters):
        q_bar = component_value_estimates(mix, smooth_q, n_samples, rng)
        mix.weights = mixture_weight_step(mix, q_bar, eta_pi, alpha)
        mix.means = mixture_mean_step(mix, smooth_q, eta_mu, n_samples, rng)
        mix.covs = mixture_cov_step(mix, smooth_q, alpha, n_samples, rng)
    return mix


@dataclass
class ParticleSet:
    """Particle swarm with an RBF kernel bandwidth (median heuristic if None)."""

    particles: np.ndarray    # (M, d)
    bandwidth: float = None

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))


def _median_bandwidth(pts):
    m = len(pts)
    if m < 2:
        return 1.0
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    med = np.median(d2[np.triu_indices(m, k=1)])
    return float(np.sqrt(0.5 * max(med, 1e-12) / np.log(m + 1)))


def svgd_step(particles, smooth_q, alpha, eps_step):
    """Kernelized transport: attraction along grad Q plus kernel repulsion.

    x_i moves by eps * mean_j [ k(x_j, x_i) grad Q(x_j) + alpha * d/dx_j k(x_j, x_i) ].
    """
    pts = particles.particles
    m = len(pts)
    h = particles.bandwidth if particles.bandwidth is not None else _median_bandwidth(pts)
    diff = pts[None, :, :] - pts[:, None, :]        # diff[j, i] = x_i - x_j
    k = np.exp(-np.sum(diff ** 2, axis=2) / (2.0 * h * h))
    if not np.all(np.isfinite(k)):
        raise FloatingPointError("non-finite kernel values")
    grads = smooth_q.grad_batch(pts)                # (M, d)
    drive = k.T @ grads / m                         # attraction term per particle
    repulse = np.einsum("ji,jid->id", k, diff) / (h * h) / m
    new_pts = smooth_q.clip(pts + eps_step * (drive + alpha * repulse))
    return ParticleSet(particles=new_pts, bandwidth=particles.bandwidth)


def langevin_sample(energy, steps, eta, rng, init=None, max_reflections=1000):
    """Final iterate of a ~ a + eta*grad E + sqrt(2 eta) noise, reflective box."""
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    a = np.asarray(init, dtype=float).copy() if init is not None \
        else rng.uniform(energy.lo, energy.hi)
    scale = np.sqrt(2.0 * eta)
    for _ in range(steps):
        a = a + eta * np.atleast_1d(energy.grad(a)) + scale * rng.standard_normal(energy.dim)
        a = _reflect(a, energy.lo, energy.hi, max_reflections)
    return a


def _reflect(a, lo, hi, max_reflections):
    span = hi - lo
    out = a.copy()
    for _ in range(max_reflections):
        below = out < lo
        above = out > hi
        if not (below.any() or above.any()):
            return out
        out = np.where(below, 2.0 * lo - out, out)
        out = np.where(above, 2.0 * hi - out, out)
        if np.any(np.abs(out - lo) > 10.0 * span + np.abs(hi - lo)):
            break
    raise SamplerDivergenceError("iterate kept escaping the action box")


def langevin_chain(energy, steps, eta, seed, n_chains=1, burn_in=0, thin=1):
    """Vectorized batch of independent chains; returns kept samples (K, d)."""
    rng = np.random.default_rng(seed)
    d = energy.dim
    a = rng.uniform(energy.lo, energy.hi, size=(n_chains, d))
    scale = np.sqrt(2.0 * eta)
    kept = []
    for t in range(steps):
        grads = energy.grad_batch(a)
        a = a + eta * grads + scale * rng.standard_normal((n_chains, d))
        a = np.where(a < energy.lo, 2.0 * energy.lo - a, a)
        a = np.where(a > energy.hi, 2.0 * energy.hi - a, a)
        a = np.clip(a, energy.lo, energy.hi)   # guard against double overshoot
        if t >= burn_in and (t - burn_in) % thin == 0:
            kept.append(a.copy())
    return np.concatenate(kept, axis=0) if kept else a


def box_grid(lo, hi, n):
    """Tensor grid with n points per dimension; returns (points, cell volume)."""
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    axes = [np.linspace(lo[k], hi[k], n) for k in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    cell = float(np.prod([(hi[k] - lo[k]) / (n - 1) for k in range(lo.size)]))
    return pts, cell


def gibbs_density_on_grid(smooth_q, lam, n):
    """Exact logit density ~ exp(lambda Q) normalized on a tensor grid."""
    pts, cell = box_grid(smooth_q.lo, smooth_q.hi, n)
    logp = lam * smooth_q.value_batch(pts)
    logp -= logp.max()
    p = np.exp(logp)
    p /= p.sum() * cell
    return pts, p, cell


def grid_tv(p, q, cell):
    """Total variation between two densities sampled on the same grid."""
    return 0.5 * float(np.sum(np.abs(p - q)) * cell)


def continuous_qre_residual(mix, smooth_q, lam, quadrature_n=201):
    """TV distance between a mixture and the exact logit density.

    Tensor-grid quadrature, dimension <= 2; a Richardson check against the
    half-resolution grid flags an under-resolved quadrature.
    """
    if smooth_q.dim > 2:
        raise ValueError("quadrature supported for dimension <= 2 only")
    pts, p_exact, cell = gibbs_density_on_grid(smooth_q, lam, quadrature_n)
    p_mix = mix.density(pts)
    mass = p_mix.sum() * cell
    if mass <= 0.0:
        raise ValueError("mixture carries no mass on the box")
    tv = grid_tv(p_exact, p_mix / mass, cell)

    n_half = max(9, quadrature_n // 2 + 1)
    pts_h, p_exact_h, cell_h = gibbs_density_on_grid(smooth_q, lam, n_half)
    p_mix_h = mix.density(pts_h)
    tv_half = grid_tv(p_exact_h, p_mix_h / (p_mix_h.sum() * cell_h), cell_h)
    if abs(tv - tv_half) > 0.1 * max(tv, 0.01):
        raise QuadratureError(
            f"quadrature_n={quadrature_n} too small: TV {tv:.4f} vs {tv_half:.4f} at half resolution")
    return tv
