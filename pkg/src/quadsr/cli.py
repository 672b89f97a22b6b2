"""Command-line client for the pipeline (thin wrapper over the service)."""

from __future__ import annotations

import sys
from typing import Optional

import click
from pydantic import ValidationError

from . import service
from .config import ConfigError, load_config
from .plant import IntegrationError
from .types import GimbalLockError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load(config_path: Optional[str], seed: Optional[int]):
    cfg = load_config(config_path)
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    return cfg


def _run(fn):
    try:
        return fn()
    except (ConfigError, ValidationError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except (IntegrationError, GimbalLockError) as e:
        click.echo(f"numerical failure: {e}", err=True)
        sys.exit(EXIT_NUMERICAL)


config_opt = click.option("--config", "config_path", default=None,
                          metavar="PATH", help="YAML run configuration.")
seed_opt = click.option("--seed", type=int, default=None,
                        help="Override the run seed.")
out_opt = click.option("--out", "out_dir", default="out", metavar="DIR",
                       show_default=True, help="Output directory.")


@click.group()
def main() -> None:
    """Quadrotor dynamics discovery and learned-model tracking control."""


@main.command("generate-data")
@config_opt
@seed_opt
@out_opt
def generate_data(config_path, seed, out_dir) -> None:
    """Simulate the plant under excitation and write training CSVs."""
    def work():
        cfg = _load(config_path, seed)
        return service.run_generate_data(cfg, out_dir)
    res = _run(work)
    for f in res.files:
        click.echo(f"wrote {f.path} ({f.rows} rows, speeds {f.lo:g}..{f.hi:g})")


@main.command("fit")
@config_opt
@seed_opt
@out_opt
@click.option("--data", "dataset_path", required=True, metavar="CSV",
              help="Training dataset produced by generate-data.")
@click.option("--channel", default="dwz", show_default=True,
              help="Acceleration channel to fit (ax ay az dwx dwy dwz).")
def fit(config_path, seed, out_dir, dataset_path, channel) -> None:
    """Learn a symbolic expression for one acceleration channel."""
    def work():
        cfg = _load(config_path, seed)
        return service.run_fit(cfg, channel=channel,
                               dataset_path=dataset_path, out_dir=out_dir)
    res = _run(work)
    click.echo(f"channel {res.channel}: front of {len(res.front)} "
               f"after {res.generations_run} generations")
    for e in res.front:
        marker = "*" if e.expr == res.best.expr else " "
        click.echo(f" {marker} [{e.complexity:3d}] fitness={e.fitness:.6g} "
                   f"r2={e.r2:.6f}  {e.expr}")
    for path in res.files:
        click.echo(f"wrote {path}")


@main.command("validate")
@config_opt
@seed_opt
@out_opt
def validate(config_path, seed, out_dir) -> None:
    """Score the identified model against the plant on the test excitation."""
    def work():
        cfg = _load(config_path, seed)
        return service.run_validate(cfg, out_dir)
    res = _run(work)
    click.echo(f"validation on {res.n_samples} samples ({res.excitation})")
    for m in res.channels:
        click.echo(f"  {m.name:4s} rmse={m.rmse:.6g} mae={m.mae:.6g} "
                   f"r2={m.r2:.6f}")
    for path in res.files:
        click.echo(f"wrote {path}")


@main.command("track")
@config_opt
@seed_opt
@out_opt
def track(config_path, seed, out_dir) -> None:
    """Fly a tracking scenario in closed loop and summarize the errors."""
    def work():
        cfg = _load(config_path, seed)
        return service.run_track(cfg, out_dir)
    res = _run(work)
    click.echo(f"scenario {res.scenario} ({res.duration:g} s)")
    for c in res.channels:
        settle = "never" if c.settling_time is None else f"{c.settling_time:.3f} s"
        click.echo(f"  {c.name:3s} settle({c.band:g})={settle} "
                   f"steady={c.steady_state_error:.6g} "
                   f"max={c.max_abs_error:.6g}")
    for path in res.files:
        click.echo(f"wrote {path}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("quadsr.api:app", host=host, port=port)


if __name__ == "__main__":
    main()
