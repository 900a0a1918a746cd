"""Command-line front end: data generation, training, evaluation,
method comparison, the live session service, and session replay.

The data directory defaults to $SHARENAV_DATA (falling back to the
current directory); per-command flags override it.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .. import evalkit, trainkit, worldsim
from ..intentnet import IntentModel, ModelConfig
from . import session as sess


def _data_dir() -> Path:
    return Path(os.environ.get("SHARENAV_DATA", "."))


@click.group()
def main():
    """Shared-control navigation toolkit."""


@main.command("generate-data")
@click.option("--n", default=20000, show_default=True, help="Number of trajectory samples.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Output dataset file [default: $SHARENAV_DATA/dataset.bin].")
def generate_data(n, seed, out):
    """Simulate scripted navigation episodes into a training dataset."""
    out = Path(out) if out else _data_dir() / "dataset.bin"
    cfg = worldsim.desk_config()
    ds = worldsim.generate_dataset(
        seed, cfg, n,
        progress=lambda k: k % 1000 < 10 and click.echo(f"  {k}/{n} samples", err=True),
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    worldsim.write_dataset(out, ds)
    click.echo(f"wrote {len(ds.samples)} samples / {len(ds.scenes)} scenes to {out}")


@main.command("train")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Dataset file [default: $SHARENAV_DATA/dataset.bin].")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint file [default: $SHARENAV_DATA/model.ckpt].")
@click.option("--steps", default=2000, show_default=True)
@click.option("--batch-size", default=64, show_default=True)
@click.option("--lr", default=3e-4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pure-il", is_flag=True, help="Reconstruction-only training (no actor/critic).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file of TrainConfig overrides.")
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None,
              help="CSV training log.")
def train_cmd(data, out, steps, batch_size, lr, seed, pure_il, config_path, log_path):
    """Train the intent model on a generated dataset."""
    data = Path(data) if data else _data_dir() / "dataset.bin"
    out = Path(out) if out else _data_dir() / "model.ckpt"
    ds = worldsim.read_dataset(data)
    overrides = dict(steps=steps, batch_size=batch_size, lr=lr, seed=seed)
    if config_path:
        overrides.update(json.loads(Path(config_path).read_text()))
    try:
        cfg = trainkit.pure_il_config(**overrides) if pure_il else trainkit.TrainConfig(**overrides)
    except (TypeError, trainkit.TrainError) as e:
        raise click.UsageError(str(e))
    model = IntentModel(ModelConfig.for_world(worldsim.desk_config()), seed=seed)
    trainkit.train(model, ds, cfg, log_path=log_path,
                   progress=lambda row: row["step"] % 100 == 0 and click.echo(
                       f"  step {row['step']}: loss={row['loss']:.4f}", err=True))
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    click.echo(f"saved checkpoint to {out}")


def _load_model(path) -> IntentModel:
    path = Path(path) if path else _data_dir() / "model.ckpt"
    if not path.exists():
        raise click.UsageError(f"checkpoint not found: {path}")
    return IntentModel.load(path)


@main.command("eval-pred")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--k", default=20, show_default=True, help="Best-of-k candidates.")
@click.option("--seed", default=0, show_default=True)
def eval_pred(model_path, data, k, seed):
    """Report displacement errors and sequence likelihood on a dataset."""
    model = _load_model(model_path)
    data = Path(data) if data else _data_dir() / "dataset.bin"
    ds = worldsim.read_dataset(data)
    report = evalkit.eval_prediction(model, ds, k=k, seed=seed)
    click.echo(json.dumps(report.__dict__, indent=2, sort_keys=True))


@main.command("eval-nav")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None)
@click.option("--episodes", default=100, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--no-constraint", is_flag=True, help="Skip the sampling-based safety layer.")
def eval_nav(model_path, episodes, seed, no_constraint):
    """Run closed-loop navigation episodes and report SR/CR/timeout rates."""
    model = _load_model(model_path)
    cfg = worldsim.desk_config()

    def factory():
        return evalkit.IntentController(model, use_constraint=not no_constraint)

    report = evalkit.eval_navigation(factory, cfg, episodes=episodes, seed=seed)
    click.echo(json.dumps(report.__dict__, indent=2, sort_keys=True))


@main.command("compare")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None)
@click.option("--trials", default=200, show_default=True)
@click.option("--profile", default="noisy-8dir", show_default=True)
@click.option("--sigma", default=0.5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
def compare(model_path, trials, profile, sigma, seed, csv_path):
    """Compare assistive methods under a scripted user."""
    model = _load_model(model_path)
    cfg = worldsim.desk_config()
    methods = {
        "direct": evalkit.DirectController,
        "ho-apf": evalkit.HoApfController,
        "intent": lambda: evalkit.IntentController(model),
    }
    out = evalkit.compare_methods(
        methods, cfg, profile, n_trials=trials, seed=seed, sigma=sigma, csv_path=csv_path
    )
    for summary in out:
        click.echo(json.dumps(summary.__dict__, sort_keys=True))


@main.command("serve")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint for the intent method (optional).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--static", "static_dir", type=click.Path(file_okay=False), default=None,
              help="Directory of built UI assets to serve at /.")
@click.option("--records", type=click.Path(dir_okay=False), default=None,
              help="JSONL file for session records.")
def serve(model_path, host, port, static_dir, records):
    """Run the live session service (websocket at /ws)."""
    import uvicorn

    from .service import create_app

    model = None
    if model_path or (_data_dir() / "model.ckpt").exists():
        try:
            model = _load_model(model_path)
        except click.UsageError:
            model = None
    app = create_app(model=model, record_path=records, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


@main.command("replay")
@click.argument("records", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint, needed to replay intent-method sessions.")
def replay_cmd(records, model_path):
    """Re-simulate recorded sessions and verify determinism."""
    model = None
    if any(r["method"] == "intent" for r in sess.read_records(records)):
        model = _load_model(model_path)
    cfg = worldsim.desk_config()
    failures = 0
    for rec in sess.read_records(records):
        result = sess.replay(rec, cfg, model=model)
        status = "ok" if result.ok else "DIVERGED"
        if not result.ok:
            failures += 1
        click.echo(
            f"{rec['session_id']} [{rec['method']}] {status}: "
            f"max err {result.max_position_error:.2e} over {result.ticks} ticks"
        )
    if failures:
        click.echo(f"{failures} session(s) diverged", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
