"""Websocket session service: hosts live shared-control trials for the
browser client and serves its static assets.

Wire protocol (JSON frames, ``v`` = schema version):

client -> server
    {"type": "join"}
    {"type": "select-method", "method": "direct" | "ho-apf" | "intent"}
    {"type": "key-state", "mask": 0..15}
    {"type": "start-trial", "seed": int, "events": [...]?}
    {"type": "abort"}

server -> client
    {"type": "joined", "methods": [...], "input_budget": int, "tick_seconds": float}
    {"type": "method-selected", "method": str}
    {"type": "scene", "trial": str, "scene": {...}, "start": [x, y]}
    {"type": "tick-state", "t": int, "position": [...], "action": [...],
     "inputs": int, "budget": int}
    {"type": "entropy", "t": int, "lb": float, "ub": float, "mode_weights": [...]}
    {"type": "trial-result", "outcome": str, "ticks": int, "inputs": int,
     "aborted": bool}
    {"type": "error", "message": str}

One simulation loop runs per active trial; the loop owns the session
state and reads the latest key bitmask (latest-wins) each tick.
"""

from __future__ import annotations

import asyncio
import os
import time
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

import numpy as np

from .. import worldsim
from . import session as sess

WIRE_VERSION = 1


class ClientState:
    def __init__(self):
        self.method = "direct"
        self.mask = 0
        self.trial_task: asyncio.Task | None = None
        self.aborted = False


def create_app(
    config: worldsim.WorldConfig | None = None,
    model=None,
    record_path=None,
    static_dir=None,
    tick_seconds: float = 0.1,
    input_budget: int = 100,
    mppi_kw: dict | None = None,
) -> FastAPI:
    """Build the service app.

    ``model`` is required only for the "intent" method.  ``record_path``
    (a JSONL file) receives one SessionRecord per finished trial;
    defaults to ``$SHARENAV_DATA/sessions.jsonl`` when the env var is
    set.  ``tick_seconds`` paces the live loop (0 disables pacing, for
    tests).
    """
    config = config or worldsim.desk_config()
    if record_path is None and os.environ.get("SHARENAV_DATA"):
        record_path = Path(os.environ["SHARENAV_DATA"]) / "sessions.jsonl"
    app = FastAPI()
    app.state.config = config
    app.state.model = model
    app.state.record_path = record_path
    app.state.tick_seconds = tick_seconds
    app.state.input_budget = input_budget
    app.state.mppi_kw = mppi_kw

    @app.websocket("/ws")
    async def ws_endpoint(socket: WebSocket):
        await socket.accept()
        state = ClientState()
        try:
            while True:
                frame = await socket.receive_json()
                await _handle(app, socket, state, frame)
        except WebSocketDisconnect:
            pass
        finally:
            if state.trial_task is not None:
                state.trial_task.cancel()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


async def _handle(app, socket, state: ClientState, frame: dict):
    kind = frame.get("type")
    if kind == "join":
        await socket.send_json(
            {
                "type": "joined",
                "v": WIRE_VERSION,
                "methods": list(sess.METHODS),
                "input_budget": app.state.input_budget,
                "tick_seconds": app.state.tick_seconds,
            }
        )
    elif kind == "select-method":
        method = frame.get("method")
        if method not in sess.METHODS:
            await socket.send_json({"type": "error", "message": f"unknown method {method!r}"})
            return
        if method == "intent" and app.state.model is None:
            await socket.send_json(
                {"type": "error", "message": "no model loaded for the intent method"}
            )
            return
        state.method = method
        await socket.send_json({"type": "method-selected", "method": method})
    elif kind == "key-state":
        try:
            mask = int(frame["mask"])
            sess.bitmask_to_command(mask, 1.0)
        except (KeyError, TypeError, ValueError, sess.SessionError):
            await socket.send_json({"type": "error", "message": "bad key-state frame"})
            return
        state.mask = mask  # latest wins; the trial loop samples it
    elif kind == "start-trial":
        if state.trial_task is not None and not state.trial_task.done():
            await socket.send_json({"type": "error", "message": "trial already running"})
            return
        try:
            seed = int(frame.get("seed", 0))
            events = list(frame.get("events", []))
            trial = _make_session(app, state, seed, events)
        except (sess.SessionError, worldsim.WorldError, TypeError, ValueError) as e:
            await socket.send_json({"type": "error", "message": str(e)})
            return
        state.mask = 0
        state.aborted = False
        state.trial_task = asyncio.create_task(_run_trial(app, socket, state, trial))
    elif kind == "abort":
        state.aborted = True
    else:
        await socket.send_json({"type": "error", "message": f"unknown frame {kind!r}"})


def _make_session(app, state: ClientState, seed: int, events: list) -> sess.Session:
    scene = worldsim.generate_scene(np.random.default_rng(seed), app.state.config, scene_id=seed)
    controller = sess.make_controller(
        state.method, model=app.state.model, mppi_kw=app.state.mppi_kw
    )
    return sess.Session(
        scene=scene,
        method=state.method,
        seed=seed,
        controller=controller,
        input_budget=app.state.input_budget,
        events=events,
    )


async def _run_trial(app, socket, state: ClientState, trial: sess.Session):
    await socket.send_json(
        {
            "type": "scene",
            "v": WIRE_VERSION,
            "trial": trial.session_id,
            "scene": trial.scene_json,
            "start": list(trial.start),
        }
    )
    period = app.state.tick_seconds
    next_tick = time.perf_counter()
    while not trial.done and not state.aborted:
        entry = trial.step(state.mask)
        await socket.send_json(
            {
                "type": "tick-state",
                "t": entry["t"],
                "position": entry["position"],
                "action": entry["action"],
                "inputs": trial.inputs,
                "budget": trial.input_budget,
            }
        )
        await socket.send_json(
            {
                "type": "entropy",
                "t": entry["t"],
                "lb": entry["entropy_lb"],
                "ub": entry["entropy_ub"],
                "mode_weights": entry["mode_weights"],
            }
        )
        if period > 0:
            next_tick += period
            delay = next_tick - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_tick = time.perf_counter()
        else:
            await asyncio.sleep(0)
    aborted = not trial.done
    if aborted:
        trial.outcome = "timeout"  # client disconnect / abort flagged below
    record = trial.record()
    record["aborted"] = aborted
    if app.state.record_path is not None:
        Path(app.state.record_path).parent.mkdir(parents=True, exist_ok=True)
        sess.append_record(app.state.record_path, record)
    await socket.send_json(
        {
            "type": "trial-result",
            "outcome": trial.outcome,
            "ticks": trial.t,
            "inputs": trial.inputs,
            "aborted": aborted,
        }
    )
