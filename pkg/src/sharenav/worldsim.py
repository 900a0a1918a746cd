"""2-D navigation world: scenes, occupancy rasterization, kinematics,
rewards, and roadmap-based demonstration generation.

Scenes place axis-aligned square obstacles in an annulus around the
robot's start at the origin and goals beyond the annulus.  Demonstrations
are planned with a probabilistic roadmap and tracked by a noisy
proportional controller; failed rollouts are filtered out.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree


class WorldError(Exception):
    pass


class SceneInfeasible(WorldError):
    pass


class DatasetFormatError(WorldError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    width: float = 8.0
    height: float = 12.0
    inner_radius: float = 1.5
    outer_radius: float = 3.5
    robot_radius: float = 0.5
    obstacle_side: float = 1.0
    goal_capture_radius: float = 0.5
    n_obstacles: tuple[int, int] = (1, 4)
    n_goals: tuple[int, int] = (2, 4)
    v_max: float = 3.0
    dt: float = 0.1
    history_len: int = 8  # T past states
    horizon: int = 12  # H future actions
    grid_cells: int = 32
    episode_time_limit: float = 40.0
    # noisy tracking controller
    kp: float = 6.0  # saturates v_max between waypoints; demos use the speed envelope
    tracking_noise_frac: float = 0.15  # sigma = frac * v_max
    waypoint_tolerance: float = 0.35
    prm_nodes: int = 160
    prm_neighbors: int = 10

    @property
    def grid_resolution(self) -> float:
        return float(np.hypot(self.width, self.height)) / self.grid_cells

    @property
    def bounds(self):
        return (-self.width / 2, self.width / 2, -self.height / 2, self.height / 2)


def desk_config(**overrides) -> WorldConfig:
    """Default desk-scale world (reduced from the full-scale benchmark)."""
    return replace(WorldConfig(), **overrides)


def full_scale_config(**overrides) -> WorldConfig:
    """Full-scale workspace geometry (13 x 18 m, 1.3 m obstacles)."""
    base = WorldConfig(
        width=13.0,
        height=18.0,
        inner_radius=2.0,
        outer_radius=5.0,
        obstacle_side=1.3,
        n_obstacles=(2, 6),
    )
    return replace(base, **overrides)


@dataclass(frozen=True)
class Workspace:
    """Static scene: goals, square obstacles, bounds, and scene metadata.

    ``indicated_goal`` is the goal identity used for evaluation and
    session scoring; it is never exposed to the intent model.
    """

    config: WorldConfig
    goals: np.ndarray  # (M, 2)
    obstacles: np.ndarray  # (N, 2) centers; side length from config
    indicated_goal: int = 0
    scene_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "goals", np.asarray(self.goals, dtype=np.float64).reshape(-1, 2))
        obs = np.asarray(self.obstacles, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "obstacles", obs)
        if len(self.goals) < 1:
            raise WorldError("workspace needs at least one goal")

    def to_json(self) -> dict:
        return {
            "bounds": list(self.config.bounds),
            "goals": self.goals.tolist(),
            "obstacles": self.obstacles.tolist(),
            "obstacle_side": self.config.obstacle_side,
            "robot_radius": self.config.robot_radius,
            "goal_capture_radius": self.config.goal_capture_radius,
            "indicated_goal": int(self.indicated_goal),
            "scene_id": int(self.scene_id),
        }

    def with_extra_obstacle(self, center) -> "Workspace":
        obs = np.vstack([self.obstacles, np.asarray(center, dtype=np.float64).reshape(1, 2)])
        return replace(self, obstacles=obs)


@dataclass
class RobotState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(2)
        self.acceleration = np.asarray(self.acceleration, dtype=np.float64).reshape(2)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.acceleration])

    @staticmethod
    def at_rest(position) -> "RobotState":
        return RobotState(np.asarray(position, dtype=float), np.zeros(2), np.zeros(2))


@dataclass(frozen=True)
class TrajectorySample:
    """One training/evaluation window: T past states, H future actions."""

    scene_id: int
    past_states: np.ndarray  # (T, 6) absolute [X, Xdot, Xddot]
    past_actions: np.ndarray  # (T-1, 2)
    future_actions: np.ndarray  # (H, 2)
    future_positions: np.ndarray  # (H, 2)

    def current_position(self) -> np.ndarray:
        return self.past_states[-1, :2]


# ---------------------------------------------------------------------------
# geometry


def obstacle_distances(workspace: Workspace, points) -> np.ndarray:
    """Distance from each point to the nearest obstacle square surface."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(workspace.obstacles) == 0:
        return np.full(len(pts), np.inf)
    half = workspace.config.obstacle_side / 2.0
    d = np.abs(pts[:, None, :] - workspace.obstacles[None, :, :]) - half
    outside = np.maximum(d, 0.0)
    dist_out = np.linalg.norm(outside, axis=-1)
    inside = np.minimum(np.maximum(d[..., 0], d[..., 1]), 0.0)
    return (dist_out + inside).min(axis=1)


def collides(workspace: Workspace, points) -> np.ndarray:
    """Per-point collision predicate (obstacles inflated by robot radius)."""
    return obstacle_distances(workspace, points) < workspace.config.robot_radius


def out_of_bounds(workspace: Workspace, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    xmin, xmax, ymin, ymax = workspace.config.bounds
    return (
        (pts[:, 0] < xmin) | (pts[:, 0] > xmax) | (pts[:, 1] < ymin) | (pts[:, 1] > ymax)
    )


def at_goal(workspace: Workspace, points, goal_index=None) -> np.ndarray:
    """Per-point goal capture predicate; any goal unless an index is given."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    goals = workspace.goals if goal_index is None else workspace.goals[[goal_index]]
    d = np.linalg.norm(pts[:, None, :] - goals[None, :, :], axis=-1)
    return (d < workspace.config.goal_capture_radius).any(axis=1)


def score_rollout(workspace: Workspace, positions):
    """Reward of a position path: +1 goal, -1 collision, 0 neither.

    The first event along the path decides; returns (reward, event_index)
    with event_index = -1 when nothing happened.
    """
    pts = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    if len(pts) == 0:
        raise WorldError("empty rollout")
    hit = collides(workspace, pts)
    goal = at_goal(workspace, pts)
    hit_idx = int(np.argmax(hit)) if hit.any() else len(pts)
    goal_idx = int(np.argmax(goal)) if goal.any() else len(pts)
    if hit_idx == goal_idx == len(pts):
        return 0, -1
    if goal_idx <= hit_idx:
        return 1, goal_idx
    return -1, hit_idx


def step_dynamics(position, action, dt):
    """Euler position update X' = X + a * dt."""
    return np.asarray(position, dtype=np.float64) + np.asarray(action, dtype=np.float64) * dt


def integrate_actions(position, actions, dt):
    """Positions after each action in sequence, shape (H, 2)."""
    steps = np.cumsum(np.asarray(actions, dtype=np.float64) * dt, axis=0)
    return np.asarray(position, dtype=np.float64)[None, :] + steps


# ---------------------------------------------------------------------------
# scene generation


def generate_scene(rng, config: WorldConfig, scene_id: int = 0, max_tries: int = 200) -> Workspace:
    """Sample a workspace satisfying the placement invariants."""
    xmin, xmax, ymin, ymax = config.bounds
    for _ in range(max_tries):
        n_obs = int(rng.integers(config.n_obstacles[0], config.n_obstacles[1] + 1))
        n_goal = int(rng.integers(config.n_goals[0], config.n_goals[1] + 1))
        half = config.obstacle_side / 2.0
        obstacles = []
        ok = True
        for _ in range(n_obs):
            for _ in range(50):
                r = rng.uniform(config.inner_radius, config.outer_radius)
                th = rng.uniform(0, 2 * np.pi)
                c = np.array([r * np.cos(th), r * np.sin(th)])
                in_bounds = (
                    xmin + half <= c[0] <= xmax - half and ymin + half <= c[1] <= ymax - half
                )
                clear = all(np.max(np.abs(c - o)) > config.obstacle_side * 1.2 for o in obstacles)
                if in_bounds and clear:
                    obstacles.append(c)
                    break
            else:
                ok = False
        if not ok:
            continue
        ws_partial = Workspace(config, np.zeros((1, 2)), np.array(obstacles).reshape(-1, 2))
        goals = []
        for _ in range(n_goal):
            for _ in range(80):
                g = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
                if np.linalg.norm(g) <= config.outer_radius:
                    continue
                if obstacle_distances(ws_partial, g[None])[0] < config.robot_radius + 0.3:
                    continue
                if any(np.linalg.norm(g - q) < 2.5 * config.goal_capture_radius for q in goals):
                    continue
                goals.append(g)
                break
            else:
                ok = False
        if not ok or len(goals) < 1:
            continue
        indicated = int(rng.integers(len(goals)))
        return Workspace(config, np.array(goals), np.array(obstacles).reshape(-1, 2), indicated, scene_id)
    raise SceneInfeasible(f"could not place scene after {max_tries} tries")


def check_scene_invariants(workspace: Workspace) -> list[str]:
    """Geometric predicate scan; returns a list of violations (empty = ok)."""
    cfg = workspace.config
    problems = []
    for c in workspace.obstacles:
        r = np.linalg.norm(c)
        if not (cfg.inner_radius - 1e-9 <= r <= cfg.outer_radius + 1e-9):
            problems.append(f"obstacle at {c} outside annulus")
    xmin, xmax, ymin, ymax = cfg.bounds
    for g in workspace.goals:
        if np.linalg.norm(g) <= cfg.outer_radius:
            problems.append(f"goal at {g} inside outer radius")
        if not (xmin <= g[0] <= xmax and ymin <= g[1] <= ymax):
            problems.append(f"goal at {g} out of bounds")
    return problems


# ---------------------------------------------------------------------------
# occupancy rasterization


def rasterize(workspace: Workspace, center, grid_cells=None, resolution=None) -> np.ndarray:
    """Robot-centered 3-channel occupancy grid.

    Channel 0: single set cell at the robot (grid center).
    Channel 1: cells containing a goal center.
    Channel 2: cells overlapped by any obstacle footprint.
    """
    cfg = workspace.config
    h = grid_cells if grid_cells is not None else cfg.grid_cells
    res = resolution if resolution is not None else cfg.grid_resolution
    center = np.asarray(center, dtype=np.float64).reshape(2)
    grid = np.zeros((3, h, h), dtype=np.float64)
    mid = h // 2
    grid[0, mid, mid] = 1.0
    origin = center - res * np.array([mid, mid])  # cell (i, j) covers origin + res*[j, i]

    def cell_of(p):
        ij = np.floor((p - origin) / res).astype(int)
        return ij[1], ij[0]  # row = y, col = x

    for g in workspace.goals:
        i, j = cell_of(g)
        if 0 <= i < h and 0 <= j < h:
            grid[1, i, j] = 1.0
    half = cfg.obstacle_side / 2.0
    for c in workspace.obstacles:
        lo = np.floor((c - half - origin) / res).astype(int)
        hi = np.floor((c + half - origin - 1e-12) / res).astype(int)
        for jj in range(max(lo[0], 0), min(hi[0], h - 1) + 1):
            for ii in range(max(lo[1], 0), min(hi[1], h - 1) + 1):
                grid[2, ii, jj] = 1.0
    return grid


# ---------------------------------------------------------------------------
# PRM demonstrations


def _segment_clear(workspace: Workspace, a, b, clearance, step=0.1):
    n = max(int(np.ceil(np.linalg.norm(b - a) / step)), 1)
    ts = np.linspace(0.0, 1.0, n + 1)
    pts = a[None] + ts[:, None] * (b - a)[None]
    return bool(np.all(obstacle_distances(workspace, pts) >= clearance))


def plan_roadmap_path(workspace: Workspace, start, goal, rng):
    """PRM shortest path from start to goal, or None if disconnected."""
    cfg = workspace.config
    xmin, xmax, ymin, ymax = cfg.bounds
    clearance = cfg.robot_radius + 0.05
    margin = cfg.robot_radius
    samples = []
    while len(samples) < cfg.prm_nodes:
        p = np.array(
            [rng.uniform(xmin + margin, xmax - margin), rng.uniform(ymin + margin, ymax - margin)]
        )
        if obstacle_distances(workspace, p[None])[0] >= clearance:
            samples.append(p)
    nodes = np.vstack([np.asarray(start, dtype=float), np.asarray(goal, dtype=float), samples])
    tree = cKDTree(nodes)
    rows, cols, data = [], [], []
    k = min(cfg.prm_neighbors + 1, len(nodes))
    dists, idxs = tree.query(nodes, k=k)
    for i in range(len(nodes)):
        for d, j in zip(dists[i][1:], idxs[i][1:]):
            if _segment_clear(workspace, nodes[i], nodes[j], clearance):
                rows.append(i)
                cols.append(int(j))
                data.append(float(d))
    graph = csr_matrix((data, (rows, cols)), shape=(len(nodes), len(nodes)))
    dist, pred = dijkstra(graph, directed=False, indices=0, return_predecessors=True)
    if not np.isfinite(dist[1]):
        return None
    path = [1]
    while path[-1] != 0:
        path.append(int(pred[path[-1]]))
    return nodes[path[::-1]]


def track_path(workspace: Workspace, waypoints, rng):
    """Track waypoints with a noisy P controller at the control period.

    Returns (positions (L+1, 2), actions (L, 2), outcome) where actions
    are the executed velocities; positions integrate them exactly.
    """
    cfg = workspace.config
    sigma = cfg.tracking_noise_frac * cfg.v_max
    max_ticks = int(cfg.episode_time_limit / cfg.dt)
    x = waypoints[0].copy()
    positions = [x.copy()]
    actions = []
    wp_idx = 1
    goal = waypoints[-1]
    for _ in range(max_ticks):
        while (
            wp_idx < len(waypoints) - 1
            and np.linalg.norm(waypoints[wp_idx] - x) < cfg.waypoint_tolerance
        ):
            wp_idx += 1
        cmd = cfg.kp * (waypoints[wp_idx] - x)
        speed = np.linalg.norm(cmd)
        if speed > cfg.v_max:
            cmd = cmd * (cfg.v_max / speed)
        cmd = cmd + rng.normal(0.0, sigma, 2)
        speed = np.linalg.norm(cmd)
        if speed > cfg.v_max:
            cmd = cmd * (cfg.v_max / speed)
        x = step_dynamics(x, cmd, cfg.dt)
        positions.append(x.copy())
        actions.append(cmd)
        if collides(workspace, x[None])[0]:
            return np.array(positions), np.array(actions), "collision"
        if np.linalg.norm(x - goal) < cfg.goal_capture_radius:
            return np.array(positions), np.array(actions), "goal"
    return np.array(positions), np.array(actions), "timeout"


def episode_to_samples(workspace: Workspace, positions, actions) -> list[TrajectorySample]:
    """Slice an episode into sliding windows of T past states, H future actions.

    History before the episode start is padded with the at-rest initial
    state so startup behavior is learnable.
    """
    cfg = workspace.config
    t_hist, horizon, dt = cfg.history_len, cfg.horizon, cfg.dt
    n_act = len(actions)
    if n_act < horizon:
        return []
    # velocities/accelerations as observed at each tick
    vels = np.vstack([np.zeros((1, 2)), actions])  # v_t = executed action at t-1
    accs = np.vstack([np.zeros((1, 2)), np.diff(vels, axis=0) / dt])
    samples = []
    for t0 in range(0, n_act - horizon + 1):
        past_idx = np.arange(t0 - t_hist + 1, t0 + 1)
        clipped = np.clip(past_idx, 0, None)
        past_states = np.hstack([positions[clipped], vels[clipped], accs[clipped]])
        past_states[past_idx < 0, 2:] = 0.0  # padded history is at rest
        pa_idx = np.arange(t0 - t_hist + 1, t0)
        past_actions = np.where(
            (pa_idx >= 0)[:, None], actions[np.clip(pa_idx, 0, None)], 0.0
        )
        future_actions = actions[t0 : t0 + horizon]
        future_positions = positions[t0 + 1 : t0 + horizon + 1]
        samples.append(
            TrajectorySample(
                workspace.scene_id,
                past_states,
                past_actions,
                future_actions.copy(),
                future_positions.copy(),
            )
        )
    return samples


def prm_demonstrate(workspace: Workspace, target_goal: int, rng):
    """One collision-free demonstration toward a goal, as window samples.

    Failed rollouts (collision/timeout) are filtered out; a disconnected
    roadmap yields an empty list with no exception.
    """
    goal = workspace.goals[target_goal]
    waypoints = plan_roadmap_path(workspace, np.zeros(2), goal, rng)
    if waypoints is None:
        return []
    positions, actions, outcome = track_path(workspace, waypoints, rng)
    if outcome != "goal":
        return []
    return episode_to_samples(workspace, positions, actions)


# ---------------------------------------------------------------------------
# dataset container


@dataclass
class Dataset:
    config: WorldConfig
    scenes: list[Workspace]
    samples: list[TrajectorySample]

    def scene_of(self, sample: TrajectorySample) -> Workspace:
        return self.scenes[sample.scene_id]


def generate_dataset(seed: int, config: WorldConfig, n_samples: int, progress=None) -> Dataset:
    """Generate scenes + demonstrations until ``n_samples`` windows exist."""
    rng = np.random.default_rng(seed)
    scenes: list[Workspace] = []
    samples: list[TrajectorySample] = []
    while len(samples) < n_samples:
        try:
            ws = generate_scene(rng, config, scene_id=len(scenes))
        except SceneInfeasible:
            continue
        scene_used = False
        for target in range(len(ws.goals)):
            new = prm_demonstrate(ws, target, rng)
            if new:
                scene_used = True
                samples.extend(new)
            if len(samples) >= n_samples:
                break
        if scene_used:
            scenes.append(ws)
        if progress is not None:
            progress(len(samples))
    return Dataset(config, scenes, samples[:n_samples])


_MAGIC = b"SHNAV1\n"


def _config_to_json(cfg: WorldConfig) -> dict:
    d = dict(cfg.__dict__)
    d["n_obstacles"] = list(cfg.n_obstacles)
    d["n_goals"] = list(cfg.n_goals)
    return d


def _config_from_json(d: dict) -> WorldConfig:
    d = dict(d)
    d["n_obstacles"] = tuple(d["n_obstacles"])
    d["n_goals"] = tuple(d["n_goals"])
    return WorldConfig(**d)


def write_dataset(path, ds: Dataset):
    """Length-prefixed binary container with a JSON header."""
    header = {
        "version": 1,
        "config": _config_to_json(ds.config),
        "count": len(ds.samples),
        "scenes": [s.to_json() for s in ds.scenes],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for s in ds.samples:
            rec = io.BytesIO()
            rec.write(struct.pack("<i", s.scene_id))
            for arr in (s.past_states, s.past_actions, s.future_actions, s.future_positions):
                rec.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
            blob = rec.getvalue()
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise DatasetFormatError("bad magic")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        if header.get("version") != 1:
            raise DatasetFormatError(f"unsupported dataset version {header.get('version')!r}")
        cfg = _config_from_json(header["config"])
        scenes = []
        for sj in header["scenes"]:
            scenes.append(
                Workspace(
                    cfg,
                    np.array(sj["goals"]),
                    np.array(sj["obstacles"]).reshape(-1, 2),
                    sj["indicated_goal"],
                    sj["scene_id"],
                )
            )
        t, h = cfg.history_len, cfg.horizon
        rec_len = 4 + 8 * (t * 6 + (t - 1) * 2 + h * 2 + h * 2)
        samples = []
        for i in range(header["count"]):
            raw = f.read(4)
            if len(raw) < 4:
                raise DatasetFormatError(f"truncated at record {i}")
            (blen,) = struct.unpack("<I", raw)
            if blen != rec_len:
                raise DatasetFormatError(f"corrupt length prefix at record {i}")
            blob = f.read(blen)
            if len(blob) < blen:
                raise DatasetFormatError(f"truncated at record {i}")
            (scene_id,) = struct.unpack("<i", blob[:4])
            off = 4
            arrs = []
            for shape in ((t, 6), (t - 1, 2), (h, 2), (h, 2)):
                n = shape[0] * shape[1] * 8
                arrs.append(np.frombuffer(blob[off : off + n], dtype=np.float64).reshape(shape).copy())
                off += n
            samples.append(TrajectorySample(scene_id, *arrs))
    return Dataset(cfg, scenes, samples)
