"""Sampling-based constrained control.

Per maneuver mode, an MPPI-style loop perturbs the mode's action-mean
sequence, scores each candidate by the posterior trajectory density times
a hard collision indicator, and moves the mean by the self-normalized
importance-weighted average.  The best mode wins by safety likelihood;
only the first action is executed and the whole problem is re-solved
every control tick.

Cost convention: S(A) = -log max(p_safe, eps), so exp(-S / lambda) is
proportional to p_safe^(1/lambda) and low-density or infeasible samples
get vanishing weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import worldsim
from .fusion import PosteriorIntent, posterior_rollout
from .intentnet import IntentModel, clamp_speed

_LOG_2PI = np.log(2.0 * np.pi)


class SafectrlError(Exception):
    pass


@dataclass(frozen=True)
class SafetyProblem:
    """Everything one control tick needs to pick a safe action."""

    workspace: worldsim.Workspace
    position: np.ndarray          # robot position at the tick
    means: np.ndarray             # (Z, H, 2) per-mode action-mean sequences
    covs: np.ndarray              # (Z, H, 2, 2) per-mode action covariances
    mode_weights: np.ndarray      # posterior simplex over modes
    dt: float
    v_max: float
    lam: float = 1.0              # temperature
    eps: float = 1e-12            # density floor
    iterations: int = 4
    samples: int = 128

    def __post_init__(self):
        if self.lam <= 0:
            raise SafectrlError("temperature must be positive")
        if not 0 < self.eps < 1:
            raise SafectrlError("density floor must be in (0, 1)")
        if self.samples < 1 or self.iterations < 1:
            raise SafectrlError("need at least one sample and one iteration")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(2))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "covs", np.asarray(self.covs, dtype=np.float64))
        object.__setattr__(self, "mode_weights", np.asarray(self.mode_weights, dtype=np.float64))
        if self.means.ndim != 3 or self.covs.shape != self.means.shape + (2,):
            raise SafectrlError("means/covs shape mismatch")

    @property
    def n_modes(self):
        return self.means.shape[0]

    @property
    def horizon(self):
        return self.means.shape[1]


def build_problem(
    model: IntentModel,
    workspace: worldsim.Workspace,
    position,
    h0,
    intent: PosteriorIntent,
    **overrides,
) -> SafetyProblem:
    """Assemble the per-mode proposal sequences from the fused intent.

    Step 0 uses the fused Gaussian per mode; later steps use the actor
    head along each mode's argmax rollout.
    """
    cfg = model.config
    seqs, traces = posterior_rollout(model, h0, intent, mode="per-z")
    covs = np.zeros((cfg.n_modes, cfg.horizon, 2, 2))
    for z in range(cfg.n_modes):
        for t in range(cfg.horizon):
            _, s1, s2, rho = traces[z][t]
            sd1, sd2 = s1[0, z], s2[0, z]
            c = rho[0, z] * sd1 * sd2
            covs[z, t] = [[sd1**2, c], [c, sd2**2]]
        if intent.fused:
            covs[z, 0] = intent.fused_first[z].cov
    return SafetyProblem(
        workspace=workspace,
        position=position,
        means=seqs,
        covs=covs,
        mode_weights=intent.mode_weights,
        dt=cfg.dt,
        v_max=cfg.v_max,
        **overrides,
    )


@dataclass
class ModeProposal:
    z: int
    means: np.ndarray                 # (H, 2) current mean sequence
    covs: np.ndarray                  # (H, 2, 2), held fixed
    trace: list = field(default_factory=list)
    stalled: bool = False             # an iteration had no feasible sample


@dataclass(frozen=True)
class SafeAction:
    z_star: int
    sequence: np.ndarray              # (H, 2) optimized action means
    action: np.ndarray                # executed first action (speed-clamped)
    feasible: bool
    mode_log_likelihoods: np.ndarray  # final safety log-likelihood per mode


def _seq_log_density(actions, means, covs):
    """sum_t log N(a_t | mu_t, Sigma_t) for (..., H, 2) action batches."""
    d = actions - means
    a = covs[..., 0, 0]
    b = covs[..., 0, 1]
    c = covs[..., 1, 1]
    det = a * c - b * b
    quad = (c * d[..., 0] ** 2 - 2 * b * d[..., 0] * d[..., 1] + a * d[..., 1] ** 2) / det
    return (-_LOG_2PI - 0.5 * np.log(det) - 0.5 * quad).sum(axis=-1)


def _paths_feasible(problem: SafetyProblem, actions):
    """True per batch row when the integrated path stays collision-free
    and in bounds; goal capture ends the path early and is always safe."""
    flat = actions.reshape(-1, problem.horizon, 2)
    steps = np.cumsum(flat * problem.dt, axis=1)
    pts = problem.position[None, None, :] + steps
    n = len(flat)
    ok = np.ones(n, dtype=bool)
    pts2 = pts.reshape(-1, 2)
    bad = worldsim.collides(problem.workspace, pts2) | worldsim.out_of_bounds(
        problem.workspace, pts2
    )
    goal = worldsim.at_goal(problem.workspace, pts2)
    bad = bad.reshape(n, problem.horizon)
    goal = goal.reshape(n, problem.horizon)
    for i in range(n):
        bad_idx = np.argmax(bad[i]) if bad[i].any() else problem.horizon
        goal_idx = np.argmax(goal[i]) if goal[i].any() else problem.horizon
        ok[i] = goal_idx < bad_idx or bad_idx == problem.horizon
    return ok.reshape(actions.shape[:-2])


def safety_log_likelihood(problem: SafetyProblem, z: int, actions) -> float:
    """log p_safe of one action sequence under mode z, floored at log eps."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (problem.horizon, 2):
        raise SafectrlError(f"expected ({problem.horizon}, 2) sequence")
    if not _paths_feasible(problem, actions[None])[0]:
        return float(np.log(problem.eps))
    ll = float(_seq_log_density(actions, problem.means[z], problem.covs[z]))
    return max(ll, float(np.log(problem.eps)))


def initial_proposal(problem: SafetyProblem, z: int) -> ModeProposal:
    """Proposal seeded at the mode's own density mean and covariance."""
    if not 0 <= z < problem.n_modes:
        raise SafectrlError(f"mode {z} out of range")
    return ModeProposal(z, problem.means[z].copy(), problem.covs[z])


def mppi_optimize_mode(problem: SafetyProblem, init: ModeProposal, rng) -> ModeProposal:
    """Iterative importance-weighted mean update for one mode.

    Covariances stay fixed; each iteration draws K perturbed sequences,
    weights them by exp(-S/lambda) with S = -log max(p_safe, eps), and
    moves the mean to the weighted sample average (a convex combination,
    since weights are self-normalized).  Iterations with no feasible
    sample leave the mean untouched and mark the proposal stalled.

    Perturbations are drawn antithetically (in +/- pairs): the linear
    part of the estimator noise cancels, which tightens convergence by
    an order of magnitude at the same sample budget.
    """
    z = init.z
    if not 0 <= z < problem.n_modes:
        raise SafectrlError(f"mode {z} out of range")
    u = init.means.copy()
    covs = init.covs
    chol = np.linalg.cholesky(covs)  # (H, 2, 2)
    floor = float(np.log(problem.eps))
    proposal = ModeProposal(z, u, covs)
    for _ in range(problem.iterations):
        half = rng.standard_normal(((problem.samples + 1) // 2, problem.horizon, 2))
        noise = np.concatenate([half, -half])[: problem.samples]
        samples = u[None] + np.einsum("hij,khj->khi", chol, noise)
        feasible = _paths_feasible(problem, samples)
        lls = np.full(problem.samples, floor)
        if feasible.any():
            dens = _seq_log_density(samples[feasible], problem.means[z], problem.covs[z])
            lls[feasible] = np.maximum(dens, floor)
        costs = -lls
        shifted = -(costs - costs.min()) / problem.lam
        w = np.exp(shifted)
        w /= w.sum()
        if not feasible.any():
            proposal.stalled = True
            proposal.trace.append(
                {"weights": w, "mean": u.copy(), "feasible_frac": 0.0, "ll": floor}
            )
            continue
        u = u + np.einsum("k,khi->hi", w, samples - u[None])
        proposal.trace.append(
            {
                "weights": w,
                "mean": u.copy(),
                "feasible_frac": float(feasible.mean()),
                "ll": safety_log_likelihood(problem, z, u),
            }
        )
    proposal.means = u
    return proposal


def safe_action(problem: SafetyProblem, rng) -> SafeAction:
    """Optimize every mode, pick the safest, execute its first action.

    Mode selection maximizes the safety log-likelihood plus the log
    posterior mode weight, so an uninformative tie goes to the mode the
    fused intent already favors.  If every mode's optimized path is
    infeasible the controller emits zero velocity with the flag cleared.
    """
    lls = np.full(problem.n_modes, -np.inf)
    proposals = []
    for z in range(problem.n_modes):
        prop = mppi_optimize_mode(problem, initial_proposal(problem, z), rng)
        proposals.append(prop)
        lls[z] = safety_log_likelihood(problem, z, prop.means)
    floor = float(np.log(problem.eps))
    feasible_modes = [
        z for z in range(problem.n_modes)
        if lls[z] > floor and _paths_feasible(problem, proposals[z].means[None])[0]
    ]
    if not feasible_modes:
        return SafeAction(
            z_star=-1,
            sequence=np.zeros((problem.horizon, 2)),
            action=np.zeros(2),
            feasible=False,
            mode_log_likelihoods=lls,
        )
    logw = np.log(np.maximum(problem.mode_weights, 1e-300))
    z_star = max(feasible_modes, key=lambda z: lls[z] + logw[z])
    seq = proposals[z_star].means
    return SafeAction(
        z_star=z_star,
        sequence=seq,
        action=clamp_speed(seq[0], problem.v_max),
        feasible=True,
        mode_log_likelihoods=lls,
    )


# ---------------------------------------------------------------------------
# takeover guard


def command_unsafe(workspace: worldsim.Workspace, position, cmd_action, dt) -> bool:
    """Would directly executing the command for one tick collide or leave
    the workspace?"""
    nxt = worldsim.step_dynamics(position, cmd_action, dt)
    return bool(
        worldsim.collides(workspace, nxt[None])[0]
        or worldsim.out_of_bounds(workspace, nxt[None])[0]
    )


class TakeoverGuard:
    """Suppresses user-command fusion for a fixed number of ticks after an
    unsafe command; the session then runs on prior-only intent."""

    def __init__(self, hold_ticks: int = 3):
        if hold_ticks < 1:
            raise SafectrlError("hold_ticks must be >= 1")
        self.hold_ticks = hold_ticks
        self.remaining = 0

    def tick(self, workspace, position, cmd_action, dt) -> bool:
        """Advance one tick; returns True when fusion must be suppressed."""
        if self.remaining > 0:
            self.remaining -= 1
            return True
        if command_unsafe(workspace, position, cmd_action, dt):
            self.remaining = self.hold_ticks - 1
            return True
        return False
