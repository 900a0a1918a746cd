"""Metrics and experiment drivers.

Trajectory-prediction scores (displacement errors and likelihoods),
closed-loop navigation episodes with success/collision/timeout
accounting, scripted user models standing in for human input, and
multi-method comparison tables.

Every controller speaks the same tick interface (``reset`` then
``tick(position, cmd) -> (action, info)``), so the session layer can
hot-swap the assistive method.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import baselines, worldsim
from .fusion import DEFAULT_SYS_COV, UserCommand, assistance_entropy, posterior_intent
from .intentnet import HistoryBuffer, IntentModel, clamp_speed, encode_live, rollout_best_of_k
from .safectrl import TakeoverGuard, build_problem, safe_action
from . import tensorcore as tc


class EvalError(Exception):
    pass


# ---------------------------------------------------------------------------
# displacement metrics


def ade_fde(pred, gt):
    """(average, final) Euclidean displacement between two position paths."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise EvalError(f"shape mismatch {pred.shape} vs {gt.shape}")
    d = np.linalg.norm(pred - gt, axis=1)
    return float(d.mean()), float(d[-1])


def constant_velocity_positions(sample: worldsim.TrajectorySample, dt: float) -> np.ndarray:
    """Extrapolate the last observed velocity over the horizon."""
    v = sample.past_states[-1, 2:4]
    h = len(sample.future_positions)
    actions = np.tile(v, (h, 1))
    return worldsim.integrate_actions(sample.past_states[-1, :2], actions, dt)


# ---------------------------------------------------------------------------
# prediction evaluation


@dataclass(frozen=True)
class PredictionReport:
    ade_best_of_k: float
    fde_best_of_k: float
    ade_most_likely: float
    fde_most_likely: float
    nll: float
    k: int
    n_samples: int

    def __post_init__(self):
        for f in ("ade_best_of_k", "fde_best_of_k", "ade_most_likely", "fde_most_likely"):
            if getattr(self, f) < 0:
                raise EvalError(f"{f} must be nonnegative")


def sequence_nll(model: IntentModel, past, grid, actions) -> float:
    """-log p(a_1..a_H | history), maneuver class summed out exactly,
    ground-truth actions driving the latent dynamics (teacher forcing)."""
    cfg = model.config
    h0 = model.encode_prior(past[None] if past.ndim == 2 else past, grid[None] if grid.ndim == 3 else grid)
    weights = model.maneuver_prior(h0).values[0]
    logs = np.full(cfg.n_modes, -np.inf)
    for z in range(cfg.n_modes):
        if weights[z] <= 0:
            continue
        onehot = np.zeros((1, cfg.n_modes))
        onehot[:, z] = 1.0
        state = model.initial_dyn_state(h0)
        total = np.log(weights[z])
        for t in range(len(actions)):
            h = state[0]
            means, s1, s2, rho = model.actor_components(h)
            cov = tc.cov2_from_params(s1[:, z], s2[:, z], rho[:, z])
            lp = tc.gaussian_log_density(tc.tensor(actions[t][None]), means[:, z, :], cov)
            total += float(lp.values[0])
            state = model.dyn_step(state, tc.tensor(actions[t][None]), onehot)
        logs[z] = total
    m = logs.max()
    return float(-(m + np.log(np.exp(logs - m).sum())))


def eval_prediction(model: IntentModel, dataset: worldsim.Dataset, k=20, seed=0) -> PredictionReport:
    cfg = model.config
    rng = np.random.default_rng(seed)
    ade_b, fde_b, ade_m, fde_m, nlls = [], [], [], [], []
    for sample in dataset.samples:
        scene = dataset.scene_of(sample)
        grid = worldsim.rasterize(scene, sample.past_states[-1, :2])
        z_star = int(np.argmax(
            model.maneuver_prior(model.encode_prior(sample.past_states[None], grid[None])).values[0]
        ))
        ml = model.predict_positions(sample.past_states[None], grid[None], z_star)[0]
        a, f = ade_fde(ml, sample.future_positions)
        ade_m.append(a)
        fde_m.append(f)
        # the most-likely decode is candidate 0, so best-of-k dominates it
        candidates = [ml]
        if k > 1:
            rollouts, _ = rollout_best_of_k(model, sample.past_states, grid[None], k - 1, rng)
            candidates.extend(rollouts)
        scores = [ade_fde(r, sample.future_positions) for r in candidates]
        best = min(range(len(candidates)), key=lambda i: scores[i][0])
        ade_b.append(scores[best][0])
        fde_b.append(scores[best][1])
        nlls.append(sequence_nll(model, sample.past_states, grid, sample.future_actions))
    return PredictionReport(
        ade_best_of_k=float(np.mean(ade_b)),
        fde_best_of_k=float(np.mean(fde_b)),
        ade_most_likely=float(np.mean(ade_m)),
        fde_most_likely=float(np.mean(fde_m)),
        nll=float(np.mean(nlls)),
        k=k,
        n_samples=len(dataset.samples),
    )


# ---------------------------------------------------------------------------
# controllers (shared tick interface)


class DirectController:
    """Pure user control."""

    def __init__(self, v_max=3.0):
        self.v_max = v_max

    def reset(self, scene, rng, start=(0.0, 0.0)):
        self.scene = scene

    def tick(self, position, cmd_action):
        return baselines.direct_passthrough(cmd_action, self.v_max), {}


class RandomController:
    """Sanity floor: uniformly random direction at full speed."""

    def __init__(self, v_max=3.0):
        self.v_max = v_max

    def reset(self, scene, rng, start=(0.0, 0.0)):
        self.rng = rng

    def tick(self, position, cmd_action):
        theta = self.rng.uniform(0, 2 * np.pi)
        return self.v_max * np.array([np.cos(theta), np.sin(theta)]), {}


class HoApfController:
    """Goal-belief tracking plus potential-field blending."""

    def __init__(self, config: baselines.ApfConfig | None = None):
        self.config = config or baselines.ApfConfig()

    def reset(self, scene, rng, start=(0.0, 0.0)):
        self.scene = scene
        self.belief = baselines.GoalBelief.uniform(len(scene.goals))

    def tick(self, position, cmd_action):
        self.belief = baselines.ho_update(
            self.belief, position, cmd_action, self.scene.goals, self.config
        )
        v = baselines.apf_velocity(self.config, self.belief, position, self.scene, cmd_action)
        return v, {"belief": self.belief.probs.copy()}


class IntentController:
    """The learned shared-control stack: intent inference, command fusion,
    and (optionally) the sampling-based constraint controller."""

    def __init__(
        self,
        model: IntentModel,
        use_constraint=True,
        use_fusion=True,
        sys_cov=DEFAULT_SYS_COV,
        guard_ticks=3,
        mppi_kw=None,
    ):
        self.model = model
        self.use_constraint = use_constraint
        self.use_fusion = use_fusion
        self.sys_cov = np.asarray(sys_cov, dtype=np.float64)
        self.guard_ticks = guard_ticks
        self.mppi_kw = dict(mppi_kw or {})

    def reset(self, scene, rng, start=(0.0, 0.0)):
        self.scene = scene
        self.rng = rng
        self.history = HistoryBuffer(self.model.config, start)
        self.guard = TakeoverGuard(self.guard_ticks)
        self.last_v = np.zeros(2)
        self.prev_v = np.zeros(2)
        self.started = False

    def tick(self, position, cmd_action):
        cfg = self.model.config
        position = np.asarray(position, dtype=np.float64)
        if self.started:
            self.history.push(position, self.last_v, self.prev_v)
        self.started = True

        h0, weights = encode_live(self.model, self.scene, self.history)
        mixture = self.model.gmm_at(h0, weights[None])[0]
        cmd = UserCommand(clamp_speed(cmd_action, cfg.v_max))
        guarded = False
        if self.use_fusion and not cmd.is_zero:
            guarded = self.guard.tick(self.scene, position, cmd.action, cfg.dt)
        effective = UserCommand([0.0, 0.0]) if (guarded or not self.use_fusion) else cmd
        intent = posterior_intent(mixture, effective, self.sys_cov)
        lb, ub = assistance_entropy(intent.first_step_mixture())

        info = {
            "mode_weights": intent.mode_weights.copy(),
            "entropy_lb": lb,
            "entropy_ub": ub,
            "guard": guarded,
        }
        if self.use_constraint:
            problem = build_problem(
                self.model, self.scene, position, h0, intent, **self.mppi_kw
            )
            out = safe_action(problem, self.rng)
            info["feasible"] = out.feasible
            info["z_star"] = out.z_star
            action = out.action
        else:
            z = int(np.argmax(intent.mode_weights))
            if intent.fused:
                first = intent.fused_first[z].mean
            else:
                first, _ = self.model.decode_actions(h0, z, horizon=1)
                first = first[0, 0]
            info["feasible"] = True
            info["z_star"] = z
            action = clamp_speed(first, cfg.v_max)

        self.prev_v = self.last_v
        self.last_v = np.asarray(action, dtype=np.float64)
        return self.last_v.copy(), info


# ---------------------------------------------------------------------------
# navigation episodes


@dataclass(frozen=True)
class NavReport:
    sr: float
    cr: float
    oot: float
    episodes: int
    seed: int

    def __post_init__(self):
        if abs(self.sr + self.cr + self.oot - 1.0) > 1e-9:
            raise EvalError("outcome rates must partition to 1")


def run_episode(
    controller,
    scene: worldsim.Workspace,
    rng,
    user=None,
    start=(0.0, 0.0),
    input_budget=None,
    goal_index=None,
):
    """Tick loop until goal/collision/limit; returns an episode record.

    ``user`` is an optional callable (position, tick) -> command action;
    without one the command is zero every tick (autonomous navigation).
    ``input_budget`` caps the number of command *changes* (key-down
    events); exceeding it ends the episode as a timeout.
    """
    cfg = scene.config
    controller.reset(scene, rng, start=start)
    position = np.asarray(start, dtype=np.float64)
    positions = [position.copy()]
    actions = []
    infos = []
    max_ticks = int(round(cfg.episode_time_limit / cfg.dt))
    inputs = 0
    prev_cmd = np.zeros(2)
    outcome = "timeout"
    for t in range(max_ticks):
        cmd = np.zeros(2) if user is None else np.asarray(user(position, t), dtype=np.float64)
        if np.any(cmd != prev_cmd) and np.linalg.norm(cmd) > 0:
            inputs += 1
        prev_cmd = cmd
        if input_budget is not None and inputs > input_budget:
            outcome = "timeout"
            break
        action, info = controller.tick(position, cmd)
        position = worldsim.step_dynamics(position, action, cfg.dt)
        positions.append(position.copy())
        actions.append(np.asarray(action, dtype=np.float64))
        infos.append(info)
        if worldsim.at_goal(scene, position[None], goal_index=goal_index)[0]:
            outcome = "goal"
            break
        if (
            worldsim.collides(scene, position[None])[0]
            or worldsim.out_of_bounds(scene, position[None])[0]
        ):
            outcome = "collision"
            break
    return {
        "outcome": outcome,
        "positions": np.asarray(positions),
        "actions": np.asarray(actions) if actions else np.zeros((0, 2)),
        "infos": infos,
        "ticks": len(actions),
        "inputs": inputs,
    }


def eval_navigation(controller_factory, config: worldsim.WorldConfig, episodes, seed) -> NavReport:
    """Autonomous navigation outcomes over fixed-seed scenes."""
    counts = {"goal": 0, "collision": 0, "timeout": 0}
    for i in range(episodes):
        rng = np.random.default_rng((seed, i))
        scene = worldsim.generate_scene(rng, config, scene_id=i)
        controller = controller_factory()
        episode = run_episode(controller, scene, rng)
        counts[episode["outcome"]] += 1
    return NavReport(
        sr=counts["goal"] / episodes,
        cr=counts["collision"] / episodes,
        oot=counts["timeout"] / episodes,
        episodes=episodes,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# scripted users


_DIRS = np.array(
    [[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]],
    dtype=np.float64,
)
_DIRS /= np.linalg.norm(_DIRS, axis=1, keepdims=True)


def quantize_8dir(vector, v_max):
    """Snap a desired velocity to the nearest of 8 keyboard directions."""
    vector = np.asarray(vector, dtype=np.float64)
    if np.linalg.norm(vector) < 1e-9:
        return np.zeros(2)
    idx = int(np.argmax(_DIRS @ (vector / np.linalg.norm(vector))))
    return v_max * _DIRS[idx]


def scripted_user(profile, scene: worldsim.Workspace, rng, goal_index=None, sigma=0.5, switch_fraction=0.5):
    """A (position, tick) -> command callable emulating a keyboard user.

    Profiles: greedy-8dir (straight at the goal), noisy-8dir (bearing
    perturbed by zero-mean Gaussian angle noise), detour-preferring
    (approaches at a biased heading until close), intent-switch (retargets
    to another goal after covering a fraction of the straight-line
    distance).
    """
    cfg = scene.config
    goal_index = scene.indicated_goal if goal_index is None else goal_index
    goal = scene.goals[goal_index]
    start_dist = None

    if profile == "greedy-8dir":

        def user(position, t):
            return quantize_8dir(goal - position, cfg.v_max)

    elif profile == "noisy-8dir":

        def user(position, t):
            bearing = goal - position
            theta = np.arctan2(bearing[1], bearing[0]) + rng.normal(0, sigma)
            return quantize_8dir([np.cos(theta), np.sin(theta)], cfg.v_max)

    elif profile == "detour-preferring":
        bias = np.pi / 3 if rng.random() < 0.5 else -np.pi / 3

        def user(position, t):
            bearing = goal - position
            angle = np.arctan2(bearing[1], bearing[0])
            if np.linalg.norm(bearing) > 1.5:
                angle += bias
            return quantize_8dir([np.cos(angle), np.sin(angle)], cfg.v_max)

    elif profile == "intent-switch":
        other = [i for i in range(len(scene.goals)) if i != goal_index]
        second = goal if not other else scene.goals[rng.choice(other)]

        def user(position, t, _state={"switched": False, "start": None}):
            if _state["start"] is None:
                _state["start"] = np.asarray(position, dtype=np.float64).copy()
                _state["total"] = np.linalg.norm(goal - _state["start"])
            traveled = np.linalg.norm(position - _state["start"])
            if traveled >= switch_fraction * _state["total"]:
                _state["switched"] = True
            target = second if _state["switched"] else goal
            return quantize_8dir(target - position, cfg.v_max)

    else:
        raise EvalError(f"unknown user profile {profile!r}")
    return user


# ---------------------------------------------------------------------------
# method comparison


@dataclass
class MethodSummary:
    method: str
    trials: int
    sr: float
    cr: float
    mean_inputs: float
    mean_time: float
    mean_length: float
    scaled_inputs: float
    scaled_time: float
    scaled_length: float


def compare_methods(
    methods: dict,
    config: worldsim.WorldConfig,
    profile: str,
    n_trials: int,
    seed: int,
    input_budget: int = 100,
    sigma: float = 0.5,
    csv_path=None,
):
    """Run every method on the same scenes/users; aggregate per method.

    ``methods`` maps name -> controller factory.  Scaled metrics divide
    by the success rate (unsuccessful trials drag the scaled scores up).
    """
    summaries = []
    per_trial_rows = []
    for name, factory in methods.items():
        succ, coll, inputs, times, lengths = 0, 0, [], [], []
        for i in range(n_trials):
            rng = np.random.default_rng((seed, i))
            scene = worldsim.generate_scene(rng, config, scene_id=i)
            user = scripted_user(profile, scene, np.random.default_rng((seed, i, 1)), sigma=sigma)
            controller = factory()
            ep = run_episode(
                controller,
                scene,
                np.random.default_rng((seed, i, 2)),
                user=user,
                input_budget=input_budget,
                goal_index=scene.indicated_goal,
            )
            success = ep["outcome"] == "goal"
            succ += success
            coll += ep["outcome"] == "collision"
            inputs.append(ep["inputs"])
            times.append(ep["ticks"] * config.dt)
            lengths.append(
                float(np.linalg.norm(np.diff(ep["positions"], axis=0), axis=1).sum())
            )
            per_trial_rows.append(
                {
                    "method": name,
                    "trial": i,
                    "outcome": ep["outcome"],
                    "inputs": ep["inputs"],
                    "time_s": times[-1],
                    "length_m": lengths[-1],
                }
            )
        sr = succ / n_trials
        scale = max(sr, 1e-9)
        summaries.append(
            MethodSummary(
                method=name,
                trials=n_trials,
                sr=sr,
                cr=coll / n_trials,
                mean_inputs=float(np.mean(inputs)),
                mean_time=float(np.mean(times)),
                mean_length=float(np.mean(lengths)),
                scaled_inputs=float(np.mean(inputs)) / scale,
                scaled_time=float(np.mean(times)) / scale,
                scaled_length=float(np.mean(lengths)) / scale,
            )
        )
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(per_trial_rows[0].keys()))
            writer.writeheader()
            writer.writerows(per_trial_rows)
    return summaries
