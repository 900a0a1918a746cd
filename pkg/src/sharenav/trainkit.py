"""Training objectives and the optimization loop for the intent network.

Four loss terms: a beta-weighted conditional-ELBO on demonstration
windows (the only term that trains the encoders), a clipped critic
regression on imagined rollouts, a score-function actor objective
weighted by generalized-advantage estimates, and an entropy lower-bound
regularizer that keeps the mixture components spread out.  Each term can
be switched off independently for ablation studies.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from . import worldsim
from .intentnet import IntentModel, clamp_speed


class TrainError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-4
    beta: float = 0.5          # KL weight in the ELBO
    gamma: float = 0.99        # discount
    lam: float = 0.95          # advantage smoothing
    ema_tau: float = 0.01      # critic target tracking rate
    rollouts_per_sample: int = 1
    imagine_batch: int = 16    # samples per step that get imagined rollouts
    imagine_horizon: int = 40  # rollout length; long enough to reach a reward
    ent_weight: float = 0.01
    seed: int = 0
    # ablation switches
    use_map: bool = True       # feed the occupancy grid (off: zeros)
    use_actor_obj: bool = True     # score-function actor term
    use_critic_obj: bool = True    # critic regression term
    clip_q: bool = True        # clip critic targets to [-1, 1]
    reinforce: str = "gae"     # {"return", "advantage", "gae"}
    maxent: str = "lower_bound"    # {"none", "mc", "lower_bound"}

    def __post_init__(self):
        if self.reinforce not in ("return", "advantage", "gae"):
            raise TrainError(f"unknown reinforce weighting {self.reinforce!r}")
        if self.maxent not in ("none", "mc", "lower_bound"):
            raise TrainError(f"unknown maxent mode {self.maxent!r}")


def pure_il_config(**kw) -> TrainConfig:
    return TrainConfig(use_actor_obj=False, use_critic_obj=False, maxent="none", **kw)


# ---------------------------------------------------------------------------
# batch assembly


def future_dynamics(sample: worldsim.TrajectorySample, dt: float) -> np.ndarray:
    """(H, 6) absolute [position, velocity, acceleration] over the future."""
    vels = sample.future_actions
    prev = np.vstack([sample.past_states[-1, 2:4][None], vels[:-1]])
    accs = (vels - prev) / dt
    return np.hstack([sample.future_positions, vels, accs])


def make_batch(dataset: worldsim.Dataset, indices, use_map=True):
    """Stack dataset windows into arrays the model consumes."""
    cfg = dataset.config
    samples = [dataset.samples[i] for i in indices]
    past = np.stack([s.past_states for s in samples])
    future = np.stack([future_dynamics(s, cfg.dt) for s in samples])
    actions = np.stack([s.future_actions for s in samples])
    if use_map:
        grids = np.stack(
            [
                worldsim.rasterize(dataset.scene_of(s), s.past_states[-1, :2])
                for s in samples
            ]
        )
    else:
        grids = np.zeros((len(samples), 3, cfg.grid_cells, cfg.grid_cells))
    return samples, past, grids, actions, future


# ---------------------------------------------------------------------------
# losses


def _mixture_log_density(model, h, actions_t, q_weights):
    """log sum_z q_z N(a | mu_z, Sigma_z) at one decode step (Tensor, (B,))."""
    means, s1, s2, rho = model.actor_components(h)
    logs = []
    for z in range(model.config.n_modes):
        cov = tc.cov2_from_params(s1[:, z], s2[:, z], rho[:, z])
        lp = tc.gaussian_log_density(actions_t, means[:, z, :], cov)
        logs.append(tc.add(lp, np.log(np.maximum(q_weights[:, z], 1e-300))))
    stacked = tc.concat([l[:, None] for l in logs], axis=-1)
    # constant max-shift keeps the log-sum-exp finite when an action lies
    # far from every mode (plain sum-exp underflows to log 0 there)
    m = stacked.values.max(axis=-1, keepdims=True)
    return tc.add(tc.log(tc.tsum(tc.exp(tc.sub(stacked, m)), axis=-1)), m[:, 0])


def elbo_loss(model: IntentModel, past, grids, actions, future, beta):
    """Per-sample beta-ELBO with the maneuver class summed out exactly.

    Returns (loss Tensor, stats dict).  Reconstruction rolls the latent
    dynamics once per maneuver class, teacher-forced on the true actions.
    """
    cfg = model.config
    b = len(past)
    h0 = model.encode_prior(past, grids)
    hp = model.encode_posterior(past, grids, future)
    q = model.maneuver_posterior(hp)
    p = model.maneuver_prior(h0)
    kl = tc.tsum(tc.mul(q, tc.sub(tc.log(q), tc.log(p))))

    recon = None
    for z in range(cfg.n_modes):
        onehot = np.zeros((b, cfg.n_modes))
        onehot[:, z] = 1.0
        state = model.initial_dyn_state(h0)
        z_ll = None
        for t in range(actions.shape[1]):
            h = state[0]
            means, s1, s2, rho = model.actor_components(h)
            cov = tc.cov2_from_params(s1[:, z], s2[:, z], rho[:, z])
            lp = tc.gaussian_log_density(tc.tensor(actions[:, t]), means[:, z, :], cov)
            z_ll = lp if z_ll is None else tc.add(z_ll, lp)
            state = model.dyn_step(state, tc.tensor(actions[:, t]), onehot)
        term = tc.tsum(tc.mul(q[:, z], z_ll))
        recon = term if recon is None else tc.add(recon, term)

    loss = tc.mul(tc.add(tc.neg(recon), tc.mul(kl, beta)), 1.0 / b)
    stats = {
        "recon_nll": float(-recon.values) / b,
        "kl": float(kl.values) / b,
    }
    return loss, stats


@dataclass
class ImaginedBatch:
    """A batch of on-policy imagined trajectories, one per sample.

    All tensors carry the rollouts side by side in the batch dimension;
    a rollout that hit a terminal event at step t contributes only its
    first t+1 steps to the losses (``mask``).
    """

    hs: list                  # T Tensors (R, dyn), latents along each rollout
    actions: np.ndarray       # (T, R, 2) sampled actions
    log_probs: list           # T Tensors (R,), mixture log-densities
    rewards: np.ndarray       # (R, T) terminal-event rewards, else zero
    lengths: np.ndarray       # (R,) live steps per rollout (<= T)
    terminal: np.ndarray      # (R,) bool, ended on an event inside the horizon
    q_weights: np.ndarray     # (R, Z) maneuver posteriors used for sampling

    @property
    def mask(self) -> np.ndarray:
        """(T, R) float mask: 1 while the rollout is still live."""
        t_idx = np.arange(len(self.hs))[:, None]
        return (t_idx < self.lengths[None, :]).astype(np.float64)

    @property
    def step_count(self) -> int:
        return int(self.lengths.sum())


def imagine_rollouts(model, dataset, samples, h0_values, q_values, rng, horizon=None):
    """Sample one on-policy rollout per sample from detached latents.

    Actions are drawn from the maneuver-marginal mixture by first sampling
    z ~ q, then a ~ N(mu_z, Sigma_z); positions follow Euler dynamics and
    rewards are +1 on goal capture, -1 on collision or leaving the
    workspace, 0 otherwise, terminating at the first event.  All rollouts
    advance together as one batch; finished ones keep stepping but are
    masked out of every loss.
    """
    cfg = model.config
    horizon = horizon if horizon is not None else cfg.horizon
    n = len(samples)
    q_values = np.asarray(q_values, dtype=np.float64)[:n]
    scenes = [dataset.scene_of(s) for s in samples]
    zs = np.array([rng.choice(cfg.n_modes, p=q_values[i]) for i in range(n)])
    onehot = np.zeros((n, cfg.n_modes))
    onehot[np.arange(n), zs] = 1.0
    state = model.initial_dyn_state(tc.tensor(np.asarray(h0_values)[:n]))
    pos = np.stack([s.past_states[-1, :2] for s in samples])
    rows = np.arange(n)

    hs, log_probs, actions_t = [], [], []
    rewards = np.zeros((n, horizon))
    lengths = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    for t in range(horizon):
        h = state[0]
        means, s1, s2, rho = model.actor_components(h)
        mu = means.values[rows, zs]
        sd1, sd2 = s1.values[rows, zs], s2.values[rows, zs]
        r = rho.values[rows, zs]
        eps = rng.standard_normal((n, 2))
        a = np.empty((n, 2))
        a[:, 0] = mu[:, 0] + sd1 * eps[:, 0]
        a[:, 1] = mu[:, 1] + sd2 * (r * eps[:, 0] + np.sqrt(1.0 - r**2) * eps[:, 1])
        a = clamp_speed(a, cfg.v_max)
        lp = _mixture_log_density(model, h, tc.tensor(a), q_values)
        pos = worldsim.step_dynamics(pos, a, cfg.dt)
        for i in range(n):
            if not alive[i]:
                continue
            p = pos[i][None]
            if worldsim.at_goal(scenes[i], p)[0]:
                rewards[i, t], alive[i], lengths[i] = 1.0, False, t + 1
            elif worldsim.collides(scenes[i], p)[0] or worldsim.out_of_bounds(scenes[i], p)[0]:
                rewards[i, t], alive[i], lengths[i] = -1.0, False, t + 1
        hs.append(h)
        log_probs.append(lp)
        actions_t.append(a)
        if not alive.any() and t + 1 < horizon:
            rewards = rewards[:, : t + 1]
            break
        state = model.dyn_step(state, tc.tensor(a), onehot)
    terminal = ~alive
    lengths[alive] = len(hs)
    return ImaginedBatch(
        hs, np.stack(actions_t), log_probs, rewards, lengths, terminal, q_values.copy()
    )


def gae(rewards, values, gamma, lam, terminal):
    """Generalized advantage estimates and value targets.

    ``values`` has length len(rewards); the bootstrap value past the end
    is zero both at terminal events and at the horizon cut-off (rewards
    are terminal-only, so the tail value of a truncated imagined rollout
    is well approximated by zero early in training and by the critic once
    the advantage has shifted the policy -- the bias is shared by every
    ablation arm).  Returns (advantages, targets) with targets = adv + v.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise TrainError("rewards/values length mismatch")
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in reversed(range(n)):
        v_next = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * v_next - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


def discounted_returns(rewards, gamma):
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in reversed(range(len(rewards))):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def _ema_values(model, batch: ImaginedBatch) -> np.ndarray:
    """(T, R) EMA-critic values along the rollouts (plain numbers)."""
    return np.stack(
        [
            model.critic_value(h.detach(), tc.tensor(a), ema=True).values
            for h, a in zip(batch.hs, batch.actions)
        ]
    )


def critic_loss(model: IntentModel, batch: ImaginedBatch, cfg: TrainConfig):
    """0.5 * mean squared error against (optionally clipped) value targets.

    Targets come from the EMA critic copy and are stop-gradient; the
    latent states are detached so only the critic parameters learn here.
    """
    count = batch.step_count
    if count == 0:
        return tc.tensor(0.0), 0
    values = _ema_values(model, batch)
    horizon, n = values.shape
    targets = np.zeros((horizon, n))
    for i in range(n):
        length = batch.lengths[i]
        _, tgt = gae(
            batch.rewards[i, :length], values[:length, i], cfg.gamma, cfg.lam,
            batch.terminal[i],
        )
        targets[:length, i] = np.clip(tgt, -1.0, 1.0) if cfg.clip_q else tgt
    mask = batch.mask
    total = None
    for t in range(horizon):
        if not mask[t].any():
            break
        qv = model.critic_value(batch.hs[t].detach(), tc.tensor(batch.actions[t]))
        err = tc.sub(qv, targets[t])
        sq = tc.mul(tc.mul(err, err), 0.5 * mask[t])
        term = tc.tsum(sq)
        total = term if total is None else tc.add(total, term)
    return tc.mul(total, 1.0 / count), count


def _advantage_weights(model, batch: ImaginedBatch, cfg: TrainConfig) -> np.ndarray:
    """(T, R) per-step actor weights, zero past each rollout's end."""
    horizon, n = len(batch.hs), len(batch.lengths)
    out = np.zeros((horizon, n))
    values = None if cfg.reinforce == "return" else _ema_values(model, batch)
    for i in range(n):
        length = batch.lengths[i]
        rewards = batch.rewards[i, :length]
        if cfg.reinforce == "return":
            out[:length, i] = discounted_returns(rewards, cfg.gamma)
        elif cfg.reinforce == "gae":
            out[:length, i], _ = gae(
                rewards, values[:length, i], cfg.gamma, cfg.lam, batch.terminal[i]
            )
        else:  # one-step advantage
            v = values[:length, i]
            v_next = np.append(v[1:], 0.0)
            out[:length, i] = rewards + cfg.gamma * v_next - v
    return out


def actor_loss(model: IntentModel, batch: ImaginedBatch, cfg: TrainConfig):
    """Score-function objective: mean of -w_t * log pi(a_t | h_t).

    The weights w_t (returns, one-step advantages, or GAE) are plain
    numbers -- no gradient flows through the critic here.
    """
    count = batch.step_count
    if count == 0:
        return tc.tensor(0.0)
    w = _advantage_weights(model, batch, cfg) * batch.mask
    total = None
    for t, lp in enumerate(batch.log_probs):
        if not np.any(w[t]):
            continue
        term = tc.tsum(tc.mul(lp, -w[t]))
        total = term if total is None else tc.add(total, term)
    if total is None:
        return tc.tensor(0.0)
    return tc.mul(total, 1.0 / count)


def entropy_objective(model: IntentModel, batch: ImaginedBatch, cfg: TrainConfig):
    """Negative-entropy surrogate to *minimize* (pushes entropy up).

    lower_bound: sum_z q_z log sum_z' q_z' N(mu_z | mu_z', S_z + S_z')
    (the pairwise-overlap bound); mc: mean log-density of the sampled
    actions (single-sample Monte Carlo estimate of -H).
    """
    if cfg.maxent == "none" or batch.step_count == 0:
        return tc.tensor(0.0)
    mask = batch.mask
    count = batch.step_count
    total = None
    if cfg.maxent == "mc":
        for t, lp in enumerate(batch.log_probs):
            if not mask[t].any():
                break
            term = tc.tsum(tc.mul(lp, mask[t]))
            total = term if total is None else tc.add(total, term)
    else:
        nz = model.config.n_modes
        q = np.maximum(batch.q_weights, 1e-300)  # (R, Z)
        for t, h in enumerate(batch.hs):
            if not mask[t].any():
                break
            means, s1, s2, rho = model.actor_components(h)
            covs = tc.cov2_from_params(s1, s2, rho)  # (R, Z, 2, 2)
            inner = None
            for i in range(nz):
                pair_logs = []
                for j in range(nz):
                    cov_sum = tc.add(covs[:, i], covs[:, j])
                    lp = tc.gaussian_log_density(means[:, i, :], means[:, j, :], cov_sum)
                    pair_logs.append(tc.exp(tc.add(lp, np.log(q[:, j])))[:, None])
                overlap = tc.log(tc.tsum(tc.concat(pair_logs, axis=-1), axis=-1))
                weighted = tc.mul(overlap, q[:, i])
                inner = weighted if inner is None else tc.add(inner, weighted)
            term = tc.tsum(tc.mul(inner, mask[t]))
            total = term if total is None else tc.add(total, term)
    if total is None:
        return tc.tensor(0.0)
    return tc.mul(total, 1.0 / count)


# ---------------------------------------------------------------------------
# training loop


def train(
    model: IntentModel,
    dataset: worldsim.Dataset,
    cfg: TrainConfig,
    log_path=None,
    progress=None,
):
    """Optimize the model in place; returns the per-step metric history.

    Deterministic for a fixed (model seed, cfg.seed, dataset).  Raises
    TrainError on divergence (non-finite loss).
    """
    if not dataset.samples:
        raise TrainError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    groups = list(model.groups.values())
    history = []
    writer = None
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.DictWriter(
            log_file,
            fieldnames=["step", "loss", "recon_nll", "kl", "critic", "actor", "entropy", "reward", "seconds"],
        )
        writer.writeheader()
    t0 = time.monotonic()
    try:
        for step in range(cfg.steps):
            idx = rng.choice(len(dataset.samples), size=min(cfg.batch_size, len(dataset.samples)), replace=False)
            samples, past, grids, actions, future = make_batch(dataset, idx, cfg.use_map)
            for g in groups:
                g.zero_grad()
            loss, stats = elbo_loss(model, past, grids, actions, future, cfg.beta)

            need_rollouts = cfg.use_actor_obj or cfg.use_critic_obj or cfg.maxent != "none"
            c_val = a_val = e_val = r_val = 0.0
            if need_rollouts:
                n_img = min(cfg.imagine_batch, len(samples))
                h0 = model.encode_prior(past[:n_img], grids[:n_img])
                hp = model.encode_posterior(past[:n_img], grids[:n_img], future[:n_img])
                q = model.maneuver_posterior(hp).values
                rollouts = imagine_rollouts(
                    model, dataset, samples[:n_img], h0.values, q, rng,
                    horizon=cfg.imagine_horizon,
                )
                r_val = float(rollouts.rewards.sum(axis=1).mean())
                if cfg.use_critic_obj:
                    c_loss, _ = critic_loss(model, rollouts, cfg)
                    c_val = float(c_loss.values)
                    loss = tc.add(loss, c_loss)
                if cfg.use_actor_obj:
                    a_loss = actor_loss(model, rollouts, cfg)
                    a_val = float(a_loss.values)
                    loss = tc.add(loss, a_loss)
                e_loss = entropy_objective(model, rollouts, cfg)
                if cfg.maxent != "none":
                    e_val = float(e_loss.values)
                    loss = tc.add(loss, tc.mul(e_loss, cfg.ent_weight))

            if not np.isfinite(loss.values):
                raise TrainError(f"diverged at step {step}: loss={loss.values}")
            tc.backward(loss)
            stepped = [g for g in groups if any(t.grad is not None for t in g.tensors)]
            for g in stepped:
                for t in g.tensors:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.values)
            tc.adam_step(stepped, cfg.lr)
            for g in groups:
                g.zero_grad()
            if cfg.use_critic_obj:
                model.update_critic_ema(cfg.ema_tau)

            row = {
                "step": step,
                "loss": float(loss.values),
                "recon_nll": stats["recon_nll"],
                "kl": stats["kl"],
                "critic": c_val,
                "actor": a_val,
                "entropy": e_val,
                "reward": r_val,
                "seconds": time.monotonic() - t0,
            }
            history.append(row)
            if writer is not None:
                writer.writerow(row)
                log_file.flush()
            if progress is not None:
                progress(row)
    finally:
        if log_file is not None:
            log_file.close()
    return history
