"""The intent network: recurrent past encoder, convolutional context
encoder, bidirectional future encoder, maneuver-class heads, latent
dynamics cell, mixture actor head, and a critic with an EMA copy.

The actor emits a velocity-space Gaussian mixture per decoded timestep;
mixture weights come from the maneuver prior at inference and from the
maneuver posterior during training.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensorcore as tc
from . import worldsim
from .gmmlab import Gaussian2, GmmAction


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    history_len: int = 8
    horizon: int = 12
    n_modes: int = 6
    past_hidden: int = 64
    ctx_embed: int = 64
    future_hidden: int = 32  # per direction
    dyn_hidden: int = 128
    head_hidden: int = 64
    grid_cells: int = 32
    grid_resolution: float = 1.0
    v_max: float = 3.0
    dt: float = 0.1
    std_floor: float = 1e-2  # variance floor std_floor^2 keeps covariances SPD
    rho_max: float = 0.95

    @staticmethod
    def for_world(cfg: worldsim.WorldConfig, **overrides) -> "ModelConfig":
        base = ModelConfig(
            history_len=cfg.history_len,
            horizon=cfg.horizon,
            grid_cells=cfg.grid_cells,
            grid_resolution=cfg.grid_resolution,
            v_max=cfg.v_max,
            dt=cfg.dt,
        )
        return ModelConfig(**{**asdict(base), **overrides})


# feature scaling for raw dynamics [X, Xdot, Xddot] relative to the current position
_POS_SCALE = 0.2
_VEL_SCALE = 1.0 / 3.0
_ACC_SCALE = 0.02


def _batchify(states):
    """Promote a single (T, 6) window to a (1, T, 6) batch."""
    arr = np.asarray(states, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[-1] != 6:
        raise ModelError(f"expected (B, T, 6) dynamics, got {arr.shape}")
    return arr


def _mlp_params(rng, widths, name):
    params = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        scale = np.sqrt(2.0 / a)
        params.append(tc.parameter(rng.normal(0, scale, (a, b)), name=f"{name}.w{i}"))
        params.append(tc.parameter(np.zeros(b), name=f"{name}.b{i}"))
    return params


def _mlp_forward(params, x, final_linear=True):
    n = len(params) // 2
    for i in range(n):
        x = tc.add(tc.matmul(x, params[2 * i]), params[2 * i + 1])
        if i < n - 1 or not final_linear:
            x = tc.relu(x)
    return x


class IntentModel:
    """All learnable parameter groups of the shared-control network."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config

        self.past_cell = tc.RecurrentCell(6, c.past_hidden, rng, name="past")
        self.conv1 = tc.parameter(rng.normal(0, 0.15, (8, 3, 3, 3)), name="ctx.conv1")
        self.conv2 = tc.parameter(rng.normal(0, 0.1, (16, 8, 3, 3)), name="ctx.conv2")
        pooled = ((c.grid_cells - 2) // 2 - 2) // 2
        self.ctx_fc = _mlp_params(rng, [16 * pooled * pooled, c.ctx_embed], "ctx.fc")
        self.fut_fwd = tc.RecurrentCell(6, c.future_hidden, rng, name="fut_fwd")
        self.fut_bwd = tc.RecurrentCell(6, c.future_hidden, rng, name="fut_bwd")

        h0_width = c.past_hidden + c.ctx_embed
        post_width = 2 * c.future_hidden + h0_width
        self.prior_head = _mlp_params(rng, [h0_width, c.head_hidden, c.n_modes], "prior_head")
        self.post_head = _mlp_params(rng, [post_width, c.head_hidden, c.n_modes], "post_head")
        if c.dyn_hidden != h0_width:
            raise ModelError("latent-dynamics width must equal the prior latent width")
        self.dyn_cell = tc.RecurrentCell(2 + c.n_modes, c.dyn_hidden, rng, name="dyn")
        self.actor = _mlp_params(rng, [c.dyn_hidden, c.dyn_hidden, c.n_modes * 5], "actor")
        self.critic = _mlp_params(rng, [c.dyn_hidden + 2, c.dyn_hidden, 1], "critic")
        self.critic_ema = [tc.parameter(p.values.copy(), name=p.name + ".ema") for p in self.critic]

        self.groups = {
            "encoder": tc.ParamGroup(
                "encoder",
                self.past_cell.params() + [self.conv1, self.conv2] + self.ctx_fc,
            ),
            "future": tc.ParamGroup("future", self.fut_fwd.params() + self.fut_bwd.params()),
            "prior_head": tc.ParamGroup("prior_head", self.prior_head),
            "post_head": tc.ParamGroup("post_head", self.post_head),
            "dynamics": tc.ParamGroup("dynamics", self.dyn_cell.params()),
            "actor": tc.ParamGroup("actor", self.actor),
            "critic": tc.ParamGroup("critic", self.critic),
        }
        self._ema_group = tc.ParamGroup("critic_ema", self.critic_ema)
        self._critic_group = self.groups["critic"]

    # -- persistence --------------------------------------------------------

    def named_parameters(self):
        out = {}
        for g in self.groups.values():
            for p in g.tensors:
                out[p.name] = p
        for p in self.critic_ema:
            out[p.name] = p
        return out

    def save(self, path):
        arrays = {k: p.values for k, p in self.named_parameters().items()}
        tc.save_checkpoint(path, arrays, meta={"model_config": asdict(self.config)})

    @staticmethod
    def load(path) -> "IntentModel":
        arrays, meta = tc.load_checkpoint(path)
        model = IntentModel(ModelConfig(**meta["model_config"]))
        params = model.named_parameters()
        for k, arr in arrays.items():
            if k not in params:
                raise ModelError(f"unknown parameter {k!r} in checkpoint")
            if params[k].values.shape != arr.shape:
                raise ModelError(f"shape mismatch for {k!r}")
            params[k].values[...] = arr
        return model

    def update_critic_ema(self, tau: float):
        tc.ema_update(self._ema_group, self._critic_group, tau)

    # -- encoders -----------------------------------------------------------

    def _normalize_states(self, states, origin):
        """(B, T, 6) absolute dynamics -> scaled, current-position-relative."""
        out = np.array(states, dtype=np.float64)
        out[..., 0:2] -= origin[:, None, :]
        out[..., 0:2] *= _POS_SCALE
        out[..., 2:4] *= _VEL_SCALE
        out[..., 4:6] *= _ACC_SCALE
        return out

    def encode_context(self, grids) -> tc.Tensor:
        x = tc.tensor(np.asarray(grids, dtype=np.float64))
        x = tc.max_pool2(tc.relu(tc.conv2d(x, self.conv1)))
        x = tc.max_pool2(tc.relu(tc.conv2d(x, self.conv2)))
        b = x.shape[0]
        flat = x.values.reshape(b, -1)
        parents = x

        # reshape as a view op on the tape
        def bwd(g):
            tc._accumulate(parents, g.reshape(parents.shape))

        flat_t = tc.Tensor(flat, (parents,), bwd)
        return tc.relu(_mlp_forward(self.ctx_fc, flat_t))

    def encode_prior(self, past_states, grids) -> tc.Tensor:
        """h0 = [recurrent past encoding; context embedding], (B, dyn_hidden)."""
        past_states = _batchify(past_states)
        if past_states.shape[1] != self.config.history_len:
            raise ModelError(
                f"expected {self.config.history_len} past states, got {past_states.shape[1]}"
            )
        origin = past_states[:, -1, 0:2]
        xs = self._normalize_states(past_states, origin)
        h, cst = self.past_cell.zero_state(len(xs))
        for t in range(xs.shape[1]):
            h, cst = tc.recurrent_step(self.past_cell, tc.tensor(xs[:, t]), (h, cst))
        ctx = self.encode_context(grids)
        return tc.concat([h, ctx], axis=-1)

    def encode_posterior(self, past_states, grids, future_states) -> tc.Tensor:
        """Training-time latent: [bidirectional future encoding; h0]."""
        future_states = _batchify(future_states)
        if future_states.shape[1] == 0:
            raise ModelError("posterior encoding requires a non-empty future segment")
        h0 = self.encode_prior(past_states, grids)
        origin = _batchify(past_states)[:, -1, 0:2]
        xs = self._normalize_states(future_states, origin)
        hf, cf = self.fut_fwd.zero_state(len(xs))
        for t in range(xs.shape[1]):
            hf, cf = tc.recurrent_step(self.fut_fwd, tc.tensor(xs[:, t]), (hf, cf))
        hb, cb = self.fut_bwd.zero_state(len(xs))
        for t in reversed(range(xs.shape[1])):
            hb, cb = tc.recurrent_step(self.fut_bwd, tc.tensor(xs[:, t]), (hb, cb))
        return tc.concat([hf, hb, h0], axis=-1)

    # -- heads --------------------------------------------------------------

    def maneuver_prior(self, h0: tc.Tensor) -> tc.Tensor:
        return tc.softmax(_mlp_forward(self.prior_head, h0))

    def maneuver_posterior(self, h_post: tc.Tensor) -> tc.Tensor:
        return tc.softmax(_mlp_forward(self.post_head, h_post))

    def actor_components(self, h: tc.Tensor):
        """Mixture component parameters at one step.

        Returns (means, s1, s2, rho): means (B, Z, 2), others (B, Z);
        standard deviations are softplus-floored, correlation tanh-bounded.
        """
        z = self.config.n_modes
        raw = _mlp_forward(self.actor, h)
        b = raw.shape[0]

        def reshape_view(t, shape):
            def bwd(g):
                tc._accumulate(t, g.reshape(t.shape))

            return tc.Tensor(t.values.reshape(shape), (t,), bwd)

        raw = reshape_view(raw, (b, z, 5))
        means = raw[:, :, 0:2]
        s1 = tc.add(tc.softplus(raw[:, :, 2]), self.config.std_floor)
        s2 = tc.add(tc.softplus(raw[:, :, 3]), self.config.std_floor)
        rho = tc.mul(tc.tanh(raw[:, :, 4]), self.config.rho_max)
        return means, s1, s2, rho

    def critic_value(self, h: tc.Tensor, actions: tc.Tensor, ema=False) -> tc.Tensor:
        params = self.critic_ema if ema else self.critic
        x = tc.concat([h, actions], axis=-1)
        out = _mlp_forward(params, x)
        return out[:, 0]

    def dyn_step(self, h_state, actions: tc.Tensor, z_onehot: np.ndarray):
        inp = tc.concat([actions, tc.tensor(z_onehot)], axis=-1)
        return tc.recurrent_step(self.dyn_cell, inp, h_state)

    def initial_dyn_state(self, h0: tc.Tensor):
        c = tc.tensor(np.zeros_like(h0.values))
        return h0, c

    # -- decoding -----------------------------------------------------------

    def gmm_at(self, h: tc.Tensor, weights: np.ndarray) -> list[GmmAction]:
        """Concrete per-element mixtures from the actor head (no grads)."""
        means, s1, s2, rho = self.actor_components(h)
        m, a, b_, r = means.values, s1.values, s2.values, rho.values
        out = []
        for i in range(m.shape[0]):
            comps = []
            for z in range(self.config.n_modes):
                v1 = a[i, z] ** 2
                v2 = b_[i, z] ** 2
                c = r[i, z] * a[i, z] * b_[i, z]
                comps.append(Gaussian2(m[i, z], [[v1, c], [c, v2]]))
            out.append(GmmAction(comps, weights[i]))
        return out

    def decode_actions(self, h0: tc.Tensor, z: int, horizon=None, mode="argmax", rng=None, first_action=None):
        """Roll the latent dynamics for one maneuver class.

        Returns (actions (B,H,2), gmms list-of-list, weights source left to
        the caller).  ``mode`` is "argmax" (means) or "sample".
        ``first_action`` optionally overrides the action at t=0 (fusion).
        """
        cfg = self.config
        horizon = horizon if horizon is not None else cfg.horizon
        if horizon <= 0:
            raise ModelError("horizon must be positive")
        if not 0 <= z < cfg.n_modes:
            raise ModelError(f"maneuver class {z} out of range")
        if mode not in ("argmax", "sample"):
            raise ModelError(f"unknown decode mode {mode!r}")
        if mode == "sample" and rng is None:
            raise ModelError("sample mode needs an rng")
        b = h0.shape[0]
        onehot = np.zeros((b, cfg.n_modes))
        onehot[:, z] = 1.0
        state = self.initial_dyn_state(h0)
        actions = np.zeros((b, horizon, 2))
        comp_params = []
        for t in range(horizon):
            h = state[0]
            means, s1, s2, rho = self.actor_components(h)
            mu = means.values[:, z, :]
            if mode == "argmax":
                a_t = mu.copy()
            else:
                a_t = np.empty_like(mu)
                for i in range(b):
                    sd1, sd2 = s1.values[i, z], s2.values[i, z]
                    c = rho.values[i, z] * sd1 * sd2
                    cov = np.array([[sd1**2, c], [c, sd2**2]])
                    a_t[i] = rng.multivariate_normal(mu[i], cov)
            if t == 0 and first_action is not None:
                a_t = np.broadcast_to(np.asarray(first_action, dtype=float), a_t.shape).copy()
            actions[:, t] = a_t
            comp_params.append(
                (means.values.copy(), s1.values.copy(), s2.values.copy(), rho.values.copy())
            )
            state = self.dyn_step(state, tc.tensor(a_t), onehot)
        return actions, comp_params

    def predict_positions(self, past_states, grids, z, mode="argmax", rng=None):
        """Decode one maneuver class and integrate to positions."""
        past_states = _batchify(past_states)
        h0 = self.encode_prior(past_states, grids)
        actions, _ = self.decode_actions(h0, z, mode=mode, rng=rng)
        clipped = clamp_speed(actions, self.config.v_max)
        origins = past_states[:, -1, 0:2]
        return np.stack(
            [
                worldsim.integrate_actions(origins[i], clipped[i], self.config.dt)
                for i in range(len(origins))
            ]
        )


def clamp_speed(actions, v_max):
    actions = np.asarray(actions, dtype=np.float64)
    speed = np.linalg.norm(actions, axis=-1, keepdims=True)
    factor = np.minimum(1.0, v_max / np.maximum(speed, 1e-12))
    return actions * factor


def components_to_gmms(comp_params_t, z_weights) -> list[GmmAction]:
    """Build concrete mixtures for one decoded step from stored actor output."""
    means, s1, s2, rho = comp_params_t
    out = []
    for i in range(means.shape[0]):
        comps = []
        for z in range(means.shape[1]):
            v1 = s1[i, z] ** 2
            v2 = s2[i, z] ** 2
            c = rho[i, z] * s1[i, z] * s2[i, z]
            comps.append(Gaussian2(means[i, z], [[v1, c], [c, v2]]))
        out.append(GmmAction(comps, z_weights[i]))
    return out


# ---------------------------------------------------------------------------
# inference-time helpers


class HistoryBuffer:
    """Fixed-length rolling window of robot states for live control."""

    def __init__(self, config: ModelConfig, initial_position):
        self.config = config
        state = np.concatenate([np.asarray(initial_position, dtype=float), np.zeros(4)])
        self.states = [state.copy() for _ in range(config.history_len)]

    def push(self, position, velocity, prev_velocity):
        acc = (np.asarray(velocity) - np.asarray(prev_velocity)) / self.config.dt
        self.states.append(np.concatenate([position, velocity, acc]))
        self.states = self.states[-self.config.history_len :]

    def array(self) -> np.ndarray:
        return np.stack(self.states)[None]  # (1, T, 6)


def encode_live(model: IntentModel, workspace, history: HistoryBuffer):
    """(h0, prior weights) for the current control tick."""
    past = history.array()
    grid = worldsim.rasterize(workspace, past[0, -1, :2])[None]
    h0 = model.encode_prior(past, grid)
    weights = model.maneuver_prior(h0).values[0]
    return h0, weights


def rollout_best_of_k(model: IntentModel, past_states, grids, k, rng):
    """k sampled (maneuver, action) rollouts integrated to positions.

    Returns (positions (k, H, 2), z draws) for a single sample.
    """
    if k < 1:
        raise ModelError("k must be >= 1")
    past_states = _batchify(past_states)
    h0 = model.encode_prior(past_states, grids)
    weights = model.maneuver_prior(h0).values[0]
    outs = []
    zs = []
    for _ in range(k):
        z = int(rng.choice(model.config.n_modes, p=weights))
        zs.append(z)
        actions, _ = model.decode_actions(h0, z, mode="sample", rng=rng)
        clipped = clamp_speed(actions[0], model.config.v_max)
        outs.append(
            worldsim.integrate_actions(past_states[0, -1, 0:2], clipped, model.config.dt)
        )
    return np.stack(outs), zs


def nav_policy_action(model: IntentModel, workspace, history: HistoryBuffer):
    """Most-likely action: argmax maneuver class, argmax first action."""
    h0, weights = encode_live(model, workspace, history)
    z = int(np.argmax(weights))
    actions, _ = model.decode_actions(h0, z, horizon=1, mode="argmax")
    return clamp_speed(actions[0, 0], model.config.v_max)
