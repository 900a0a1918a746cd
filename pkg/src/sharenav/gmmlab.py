"""Closed-form probability machinery over 2-D velocity-space Gaussians.

Gaussian mixtures, evidence reweighting of mixture modes, Kalman-form
fusion of a Gaussian prior with a noisy point measurement, mixture
entropy upper/lower bounds, and discrete divergences.

Convention note: ``tv_distance`` returns the *unhalved* integral
``sum |p - q|`` (range [0, 2]).  The sub-optimality bound checked by
:func:`policy_bound_check` is algebraically stated in that convention;
the more common halved definition would silently weaken it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_LOG_2PI = np.log(2.0 * np.pi)


class GmmError(Exception):
    pass


@dataclass(frozen=True)
class Gaussian2:
    """2-D Gaussian with full SPD covariance (m/s velocity space)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(2))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=np.float64).reshape(2, 2))
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise GmmError("covariance not symmetric")
        if np.linalg.eigvalsh(self.cov)[0] <= 0:
            raise GmmError("covariance not positive definite")

    def log_density(self, a) -> float:
        a = np.asarray(a, dtype=np.float64).reshape(2)
        det = float(np.linalg.det(self.cov))
        if det <= 0:
            raise GmmError("singular covariance")
        d = a - self.mean
        quad = float(d @ np.linalg.solve(self.cov, d))
        return -_LOG_2PI - 0.5 * np.log(det) - 0.5 * quad

    def sample(self, rng) -> np.ndarray:
        l = np.linalg.cholesky(self.cov)
        return self.mean + l @ rng.standard_normal(2)


@dataclass(frozen=True)
class GmmAction:
    """Per-timestep velocity mixture: one Gaussian per maneuver class."""

    components: tuple[Gaussian2, ...]
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(w) != len(self.components):
            raise GmmError("weights length must equal component count")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise GmmError("weights must form a simplex")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.components)


@dataclass(frozen=True)
class DiscreteDist:
    """Probability vector over a finite support."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise GmmError("probs must form a simplex")
        object.__setattr__(self, "probs", p)


def _logsumexp(x):
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


def gmm_log_density(g: GmmAction, a) -> float:
    """log sum_z alpha_z N(a | mu_z, Sigma_z), via log-sum-exp."""
    logs = np.empty(len(g))
    for i, (comp, w) in enumerate(zip(g.components, g.weights)):
        try:
            lp = comp.log_density(a)
        except GmmError as e:
            raise GmmError(f"component {i}: {e}") from e
        logs[i] = lp + (np.log(w) if w > 0 else -np.inf)
    return float(_logsumexp(logs))


def gmm_sample(g: GmmAction, rng) -> np.ndarray:
    """Draw a component per the mixture weights, then a Gaussian sample."""
    z = rng.choice(len(g), p=g.weights)
    return g.components[z].sample(rng)


def gmm_mean(g: GmmAction) -> np.ndarray:
    return np.sum([w * c.mean for w, c in zip(g.weights, g.components)], axis=0)


def _require_spd(m, what):
    m = np.asarray(m, dtype=np.float64).reshape(2, 2)
    if not np.allclose(m, m.T, atol=1e-8) or np.linalg.eigvalsh(m)[0] <= 0:
        raise GmmError(f"{what} must be SPD")
    return m


def kalman_fuse(prior: Gaussian2, user_cmd, sys_cov) -> Gaussian2:
    """Posterior of a Gaussian prior given a point measurement.

    K = S (S + R)^-1, mean + K (cmd - mean), (I - K) S; the posterior
    covariance never exceeds the prior in the PSD order.
    """
    sys_cov = _require_spd(sys_cov, "sys_cov")
    cmd = np.asarray(user_cmd, dtype=np.float64).reshape(2)
    s = prior.cov
    k = s @ np.linalg.inv(s + sys_cov)
    mean = prior.mean + k @ (cmd - prior.mean)
    cov = (np.eye(2) - k) @ s
    cov = 0.5 * (cov + cov.T)  # symmetrize roundoff
    return Gaussian2(mean, cov)


def reweight_modes(g: GmmAction, user_cmd, extra_cov=None):
    """Posterior mode weights: alpha'_z ~ N(cmd | mu_z, Sigma_z [+ extra]) alpha_z.

    Computed in log space with max-subtraction.  If every evidence term
    underflows, falls back to the prior weights and flags it.
    Returns (weights, fell_back).
    """
    cmd = np.asarray(user_cmd, dtype=np.float64).reshape(2)
    logs = np.full(len(g), -np.inf)
    for i, (comp, w) in enumerate(zip(g.components, g.weights)):
        if w <= 0:
            continue
        cov = comp.cov if extra_cov is None else comp.cov + np.asarray(extra_cov)
        logs[i] = Gaussian2(comp.mean, cov).log_density(cmd) + np.log(w)
    m = np.max(logs)
    if not np.isfinite(m):
        return g.weights.copy(), True
    p = np.exp(logs - m)
    total = p.sum()
    if total <= 0 or not np.isfinite(total):
        return g.weights.copy(), True
    return p / total, False


def gmm_entropy_bounds(g: GmmAction):
    """(lower, upper) bounds on the differential entropy of the mixture.

    Upper bound: sum_i a_i (-log a_i + 0.5 log((2 pi e)^N |S_i|)).
    Lower bound: -sum_i a_i log sum_j a_j N(mu_i | mu_j, S_i + S_j).
    """
    n = 2
    idx = [i for i, w in enumerate(g.weights) if w > 0]
    upper = 0.0
    for i in idx:
        w = g.weights[i]
        det = np.linalg.det(g.components[i].cov)
        upper += w * (-np.log(w) + 0.5 * np.log((2 * np.pi * np.e) ** n * det))
    lower = 0.0
    for i in idx:
        logs = []
        for j in idx:
            ci, cj = g.components[i], g.components[j]
            e_ij = Gaussian2(np.zeros(2), ci.cov + cj.cov).log_density(ci.mean - cj.mean)
            logs.append(np.log(g.weights[j]) + e_ij)
        lower += -g.weights[i] * _logsumexp(np.asarray(logs))
    return float(lower), float(upper)


def tv_distance(p: DiscreteDist, q: DiscreteDist) -> float:
    """Unhalved total variation sum |p - q| (see module docstring)."""
    if p.probs.shape != q.probs.shape:
        raise GmmError("support mismatch")
    return float(np.abs(p.probs - q.probs).sum())


def kl_divergence(p: DiscreteDist, q: DiscreteDist) -> float:
    """KL(p || q); q must be strictly positive wherever p is."""
    if p.probs.shape != q.probs.shape:
        raise GmmError("support mismatch")
    mask = p.probs > 0
    if np.any(q.probs[mask] <= 0):
        raise GmmError("KL undefined: q has zero mass where p is positive")
    return float(np.sum(p.probs[mask] * np.log(p.probs[mask] / q.probs[mask])))


def policy_bound_check(pi_t: DiscreteDist, pi_i_given_g, goal_prior):
    """Verify the policy sub-optimality bound on a discrete support.

    For every goal g:
        TV(pi_t, pi_i(.|g)) <= sqrt(2 KL(pi_t, pi_i)) + TV(pi_i, pi_i(.|g))
    with pi_i the goal-marginalized policy.  Returns (holds, worst_margin)
    where margin = rhs - lhs (negative means violation).
    """
    goal_prior = np.asarray(goal_prior, dtype=np.float64).reshape(-1)
    if abs(goal_prior.sum() - 1.0) > 1e-9 or np.any(goal_prior < 0):
        raise GmmError("goal prior must form a simplex")
    if len(goal_prior) != len(pi_i_given_g):
        raise GmmError("one conditional policy required per goal")
    marginal = DiscreteDist(
        np.sum([p * d.probs for p, d in zip(goal_prior, pi_i_given_g)], axis=0)
    )
    kl = kl_divergence(pi_t, marginal)
    worst = np.inf
    for cond in pi_i_given_g:
        lhs = tv_distance(pi_t, cond)
        rhs = np.sqrt(2.0 * kl) + tv_distance(marginal, cond)
        worst = min(worst, rhs - lhs)
    return worst >= -1e-12, float(worst)
