"""Shared-control session core: the fixed-rate tick loop, mid-trial scene
events, persisted session records, and deterministic replay.

A session is one scene plus one assistive method.  Each tick consumes the
latest keyboard bitmask, runs the controller, advances the world, and
appends a log entry; the whole session serializes to one JSONL line and
re-simulates bit-for-bit from the log (same seed, same command stream).
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from .. import worldsim
from ..evalkit import DirectController, HoApfController, IntentController
from ..intentnet import IntentModel

RECORD_VERSION = 1

# keyboard bitmask bits
KEY_UP = 1
KEY_DOWN = 2
KEY_LEFT = 4
KEY_RIGHT = 8

METHODS = ("direct", "ho-apf", "intent")


class SessionError(Exception):
    pass


class ReplayError(SessionError):
    pass


def bitmask_to_command(mask: int, v_max: float) -> np.ndarray:
    """Map a 4-key bitmask to one of 8 directions at full speed.

    Opposing keys cancel; no keys (or full cancellation) means a zero
    command, which the fusion layer treats as "no measurement".
    """
    if not 0 <= mask <= 15:
        raise SessionError(f"bitmask out of range: {mask}")
    dx = (1 if mask & KEY_RIGHT else 0) - (1 if mask & KEY_LEFT else 0)
    dy = (1 if mask & KEY_UP else 0) - (1 if mask & KEY_DOWN else 0)
    if dx == 0 and dy == 0:
        return np.zeros(2)
    v = np.array([dx, dy], dtype=np.float64)
    return v_max * v / np.linalg.norm(v)


def count_key_downs(prev_mask: int, mask: int) -> int:
    """Newly pressed keys between two bitmask samples."""
    return bin(mask & ~prev_mask).count("1")


def make_controller(method: str, model: IntentModel | None = None, mppi_kw=None):
    if method == "direct":
        return DirectController()
    if method == "ho-apf":
        return HoApfController()
    if method == "intent":
        if model is None:
            raise SessionError("the intent method needs a model")
        return IntentController(model, mppi_kw=mppi_kw)
    raise SessionError(f"unknown method {method!r}; expected one of {METHODS}")


# ---------------------------------------------------------------------------
# scene events


def validate_event(event: dict, config: worldsim.WorldConfig):
    kind = event.get("type")
    if kind == "spawn-obstacle":
        at = np.asarray(event["at"], dtype=np.float64)
        when = int(event["when_tick"])
        if when < 0:
            raise SessionError("event tick must be nonnegative")
    elif kind == "respawn-target":
        at = np.asarray(event["to"], dtype=np.float64)
        frac = float(event["when_fraction"])
        if not 0.0 < frac < 1.0:
            raise SessionError("respawn fraction must be in (0, 1)")
    else:
        raise SessionError(f"unknown scene event {kind!r}")
    xmin, xmax, ymin, ymax = config.bounds
    if not (xmin <= at[0] <= xmax and ymin <= at[1] <= ymax):
        raise SessionError("scene event target outside workspace bounds")


# ---------------------------------------------------------------------------
# the session


@dataclass
class Session:
    scene: worldsim.Workspace
    method: str
    seed: int
    controller: object
    input_budget: int = 100
    events: list = field(default_factory=list)
    start: tuple = (0.0, 0.0)
    session_id: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise SessionError(f"unknown method {self.method!r}")
        for ev in self.events:
            validate_event(ev, self.scene.config)
        self.session_id = self.session_id or uuid.uuid4().hex
        self._initial_scene_json = self.scene.to_json()
        cfg = self.scene.config
        self.rng = np.random.default_rng(self.seed)
        self.controller.reset(self.scene, self.rng, start=self.start)
        self.position = np.asarray(self.start, dtype=np.float64)
        self.velocity = np.zeros(2)
        self.t = 0
        self.inputs = 0
        self.prev_mask = 0
        self.outcome = None
        self.ticks = []
        self.fired_events = []
        self.max_ticks = int(round(cfg.episode_time_limit / cfg.dt))
        self._goal_dist0 = float(
            np.linalg.norm(self.scene.goals[self.scene.indicated_goal] - self.position)
        )
        self._tick_seconds = []

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def _apply_events(self):
        for i, ev in enumerate(self.events):
            if i in self.fired_events:
                continue
            fire = False
            if ev["type"] == "spawn-obstacle":
                fire = self.t >= int(ev["when_tick"])
            else:  # respawn-target
                traveled = self._goal_dist0 - float(
                    np.linalg.norm(
                        self.scene.goals[self.scene.indicated_goal] - self.position
                    )
                )
                fire = traveled >= float(ev["when_fraction"]) * self._goal_dist0
            if not fire:
                continue
            if ev["type"] == "spawn-obstacle":
                self.scene = self.scene.with_extra_obstacle(ev["at"])
            else:
                goals = np.array(self.scene.goals, dtype=np.float64)
                goals[self.scene.indicated_goal] = np.asarray(ev["to"], dtype=np.float64)
                self.scene = worldsim.Workspace(
                    self.scene.config,
                    goals,
                    self.scene.obstacles,
                    indicated_goal=self.scene.indicated_goal,
                    scene_id=self.scene.scene_id,
                )
            self.fired_events.append(i)
            self.controller.scene = self.scene  # all controllers keep a scene ref

    def step(self, mask: int) -> dict:
        """Advance one control tick with the latest key bitmask."""
        if self.done:
            raise SessionError("session already finished")
        started = time.perf_counter()
        cfg = self.scene.config
        self._apply_events()
        self.inputs += count_key_downs(self.prev_mask, mask)
        self.prev_mask = mask
        cmd = bitmask_to_command(mask, cfg.v_max)
        action, info = self.controller.tick(self.position, cmd)
        self.position = worldsim.step_dynamics(self.position, action, cfg.dt)
        self.velocity = np.asarray(action, dtype=np.float64)

        entry = {
            "t": self.t,
            "mask": int(mask),
            "cmd": cmd.tolist(),
            "action": np.asarray(action, dtype=np.float64).tolist(),
            "position": self.position.tolist(),
            "mode_weights": np.asarray(info.get("mode_weights", [])).tolist(),
            "entropy_lb": float(info.get("entropy_lb", 0.0)),
            "entropy_ub": float(info.get("entropy_ub", 0.0)),
            "guard": bool(info.get("guard", False)),
            "feasible": bool(info.get("feasible", True)),
        }
        self.ticks.append(entry)
        self.t += 1

        if worldsim.at_goal(self.scene, self.position[None], self.scene.indicated_goal)[0]:
            self.outcome = "goal"
        elif (
            worldsim.collides(self.scene, self.position[None])[0]
            or worldsim.out_of_bounds(self.scene, self.position[None])[0]
        ):
            self.outcome = "collision"
        elif self.inputs > self.input_budget or self.t >= self.max_ticks:
            self.outcome = "timeout"
        self._tick_seconds.append(time.perf_counter() - started)
        return entry

    def record(self) -> dict:
        if not self.done:
            raise SessionError("session still running")
        secs = np.asarray(self._tick_seconds) if self._tick_seconds else np.zeros(1)
        return {
            "version": RECORD_VERSION,
            "session_id": self.session_id,
            "method": self.method,
            "seed": self.seed,
            "scene": self.scene_json,
            "events": self.events,
            "input_budget": self.input_budget,
            "start": list(self.start),
            "ticks": self.ticks,
            "outcome": self.outcome,
            "inputs": self.inputs,
            "timing": {
                "mean_tick_s": float(secs.mean()),
                "p99_tick_s": float(np.quantile(secs, 0.99)),
            },
        }

    @property
    def scene_json(self):
        # the *initial* scene; events are replayed from the log
        return self._initial_scene_json


def scene_from_json(blob: dict, config: worldsim.WorldConfig) -> worldsim.Workspace:
    return worldsim.Workspace(
        config,
        np.asarray(blob["goals"], dtype=np.float64),
        np.asarray(blob["obstacles"], dtype=np.float64),
        indicated_goal=int(blob.get("indicated_goal", 0)),
        scene_id=int(blob.get("scene_id", 0)),
    )


# ---------------------------------------------------------------------------
# persistence


def append_record(path, record: dict):
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    records = []
    with open(path) as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ReplayError(f"line {i + 1}: malformed record") from e
            if rec.get("version") != RECORD_VERSION:
                raise ReplayError(f"line {i + 1}: unsupported record version")
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# replay


@dataclass(frozen=True)
class ReplayResult:
    max_position_error: float
    outcome_matches: bool
    ticks: int

    @property
    def ok(self) -> bool:
        return self.max_position_error < 1e-9 and self.outcome_matches


def replay(
    record: dict,
    config: worldsim.WorldConfig,
    model: IntentModel | None = None,
    method: str | None = None,
    mppi_kw=None,
) -> ReplayResult:
    """Re-simulate a session from its record and compare trajectories.

    ``method`` overrides the recorded method (useful to demonstrate that
    a swap is detected as divergence).  Raises ReplayError on incomplete
    records.
    """
    for key in ("ticks", "scene", "seed", "outcome", "method"):
        if key not in record:
            raise ReplayError(f"record missing {key!r}")
    if not record["ticks"]:
        raise ReplayError("record has no ticks")
    scene = scene_from_json(record["scene"], config)
    controller = make_controller(method or record["method"], model=model, mppi_kw=mppi_kw)
    session = Session(
        scene=scene,
        method=method or record["method"],
        seed=record["seed"],
        controller=controller,
        input_budget=record.get("input_budget", 100),
        events=list(record.get("events", [])),
        start=tuple(record.get("start", (0.0, 0.0))),
    )
    max_err = 0.0
    for logged in record["ticks"]:
        if session.done:
            raise ReplayError("record longer than the replayed session")
        entry = session.step(int(logged["mask"]))
        err = float(
            np.linalg.norm(np.asarray(entry["position"]) - np.asarray(logged["position"]))
        )
        max_err = max(max_err, err)
    outcome_matches = session.done and session.outcome == record["outcome"]
    return ReplayResult(max_err, outcome_matches, len(record["ticks"]))
