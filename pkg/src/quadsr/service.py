"""Orchestration shared by the CLI and the HTTP API.

Each run_* function takes a validated RunConfig, performs one unit of
work (dataset generation, a regression fit, model validation, or a
closed-loop tracking run), optionally persists the canonical artifacts,
and returns a pydantic result. All outputs are deterministic functions
of the config: float text uses 17 significant digits and JSON keys are
sorted, so identical seeds give byte-identical files.
"""

from __future__ import annotations

import io
import json
import math
import os
from typing import Optional

import numpy as np
from pydantic import BaseModel

from .config import ConfigError, RunConfig, scenario_reference
from .control import Controller, TrackingRun, run_tracking
from .learned import evaluate_channel
from .metrics import (
    VALIDATION_CHANNELS,
    ValidationReport,
    mae,
    r2,
    rmse,
    tracking_summary,
)
from .plant import (
    IntegrationError,
    LABEL_NAMES,
    PlantModel,
    RandomDwellExcitation,
    Sample,
    generate_dataset,
    integrate,
    make_excitation,
    read_dataset_csv,
    sinusoid_excitation,
    write_dataset_csv,
)
from .sr.engine import evolve
from .sr.expr import (
    Binary,
    Const,
    Var,
    eval_tree,
    render,
    simplify,
    substitute_vars,
)
from .types import State, wrap_angle

# Feature subsets offered to the regression per target channel, mirroring
# which inputs can physically enter each acceleration.  Rotor thrust and
# drag torques go with the *square* of rotor speed, so the body-rate
# channels see squared speeds (appended via add_squared_inputs) and not
# the raw ones; offering both would let the search chase a linear
# surrogate (u and u^2 are strongly correlated over a one-sided range)
# instead of the physical form.
DEFAULT_FEATURES: dict[str, tuple[str, ...]] = {
    "ax": ("phi", "theta", "psi", "u1", "u2", "u3", "u4"),
    "ay": ("phi", "theta", "psi", "u1", "u2", "u3", "u4"),
    "az": ("phi", "theta", "vz", "u1", "u2", "u3", "u4"),
    "dwx": ("wx", "wy", "wz"),
    "dwy": ("wx", "wy", "wz"),
    "dwz": ("wx", "wy", "wz"),
}

TRACK_BANDS = {"x": 0.05, "y": 0.05, "z": 0.05, "psi": 0.02}


def feature_scale(name: str) -> float:
    """Normalization divisor applied to a feature before the SR search.

    Rotor speeds span 0..1000 (their squares 0..1e6); everything else in
    the dataset is already O(1).
    """
    if name in ("u1", "u2", "u3", "u4"):
        return 1000.0
    if name in ("u1sq", "u2sq", "u3sq", "u4sq"):
        return 1.0e6
    return 1.0


class DatasetFileInfo(BaseModel):
    path: str
    lo: float
    hi: float
    rows: int


class GenerateDataResult(BaseModel):
    seed: int
    files: list[DatasetFileInfo]


class FrontEntryResult(BaseModel):
    expr: str
    complexity: int
    fitness: float
    r2: float
    rmse: float
    mae: float


class FitResult(BaseModel):
    channel: str
    features: list[str]
    front: list[FrontEntryResult]
    best: FrontEntryResult
    generations_run: int
    files: list[str]


class ChannelMetrics(BaseModel):
    name: str
    rmse: float
    mae: float
    r2: float


class ValidateResult(BaseModel):
    excitation: str
    n_samples: int
    channels: list[ChannelMetrics]
    files: list[str]


class TrackChannelResult(BaseModel):
    name: str
    band: float
    settling_time: Optional[float]
    steady_state_error: float
    max_abs_error: float


class TrackResult(BaseModel):
    scenario: str
    duration: float
    channels: list[TrackChannelResult]
    files: list[str]


def _ensure_dir(out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)


def _row(values) -> str:
    return ",".join("%.17g" % v for v in values)


def _write_json(path: str, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def run_generate_data(cfg: RunConfig, out_dir: str) -> GenerateDataResult:
    """Generate one training CSV per configured excitation range."""
    _ensure_dir(out_dir)
    plant = PlantModel(cfg.plant.to_params())
    ds = cfg.dataset
    # Two independent integer seeds per range, derived from the run seed.
    state = np.random.SeedSequence(cfg.seed).generate_state(
        2 * len(ds.ranges), dtype=np.uint64)
    files = []
    for i, (lo, hi) in enumerate(ds.ranges):
        exc = RandomDwellExcitation(lo, hi, seed=int(state[2 * i]),
                                    dwell=ds.dwell)
        samples = generate_dataset(
            plant, exc,
            n_samples=ds.n_samples, sample_dt=ds.sample_dt, dt=ds.dt,
            seed=int(state[2 * i + 1]), segment_len=ds.segment_len,
            init_rate_scale=ds.init_rate_scale,
            init_vz_scale=ds.init_vz_scale, noise_sigma=ds.noise_sigma)
        path = os.path.join(out_dir, f"train_{lo:g}_{hi:g}.csv")
        write_dataset_csv(samples, path)
        files.append(DatasetFileInfo(path=path, lo=lo, hi=hi,
                                     rows=len(samples)))
    return GenerateDataResult(seed=cfg.seed, files=files)


def _load_fit_data(dataset_path: Optional[str],
                   dataset_csv: Optional[str]) -> dict[str, np.ndarray]:
    if (dataset_path is None) == (dataset_csv is None):
        raise ConfigError("provide exactly one of dataset_path/dataset_csv")
    if dataset_path is not None:
        if not os.path.exists(dataset_path):
            raise ConfigError(f"dataset not found: {dataset_path}")
        return read_dataset_csv(dataset_path)
    buf = io.StringIO(dataset_csv)
    header = buf.readline().strip().split(",")
    data = np.loadtxt(buf, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise ConfigError("inline dataset column count mismatch")
    return {name: data[:, i].copy() for i, name in enumerate(header)}


def run_fit(cfg: RunConfig, channel: str = "dwz",
            dataset_path: Optional[str] = None,
            dataset_csv: Optional[str] = None,
            out_dir: Optional[str] = None) -> FitResult:
    """Fit one acceleration channel symbolically from a dataset."""
    if channel not in LABEL_NAMES:
        raise ConfigError(
            f"unknown fit channel {channel!r}; pick one of {LABEL_NAMES}")
    cols = _load_fit_data(dataset_path, dataset_csv)

    feats = tuple(cfg.sr.features) if cfg.sr.features else \
        DEFAULT_FEATURES[channel]
    for f in feats:
        if f not in cols:
            raise ConfigError(f"feature {f!r} not present in the dataset")
    names = list(feats)
    columns = [np.asarray(cols[f], dtype=float) for f in feats]
    if cfg.sr.add_squared_inputs:
        for un in ("u1", "u2", "u3", "u4"):
            if un in cols:
                names.append(un + "sq")
                columns.append(np.asarray(cols[un], dtype=float) ** 2)
    if channel not in cols:
        raise ConfigError(f"channel {channel!r} not present in the dataset")
    y = np.asarray(cols[channel], dtype=float)

    # Normalize wide-range features to O(1) before the search (rotor
    # speeds run 0..1000, so squared-speed terms would need constants
    # ~1e-6 that uniform constant initialization never reaches), then
    # substitute x -> x/scale back into the trees so every reported
    # expression is in original units.  The substitution reproduces the
    # same floating-point values the fit saw.
    scales = [feature_scale(n) for n in names]
    X = np.column_stack([c / s for c, s in zip(columns, scales)])

    front = evolve(cfg.sr.to_engine_config(cfg.seed), X, y)
    names_t = tuple(names)
    unscale = {i: Binary("/", Var(i), Const(s))
               for i, s in enumerate(scales) if s != 1.0}
    entries = []
    trees = []
    for e in front.entries:
        pred = eval_tree(e.tree, X)
        tree_phys = simplify(substitute_vars(e.tree, unscale))
        trees.append(tree_phys)
        entries.append(FrontEntryResult(
            expr=render(tree_phys, names_t), complexity=e.complexity,
            fitness=e.fitness, r2=r2(pred, y), rmse=rmse(pred, y),
            mae=mae(pred, y)))
    best_entry = front.select(0.05)
    best = next(r for r in entries if r.complexity == best_entry.complexity)

    files: list[str] = []
    if out_dir is not None:
        _ensure_dir(out_dir)
        path = os.path.join(out_dir, f"fit_{channel}.json")
        _write_json(path, [e.model_dump() for e in entries])
        files.append(path)
    return FitResult(channel=channel, features=names, front=entries,
                     best=best, generations_run=front.generations_run,
                     files=files)


def _sample_columns(samples: list[Sample]) -> dict[str, np.ndarray]:
    cols: dict[str, np.ndarray] = {}
    arr_state = np.array([s.state.as_array() for s in samples])
    arr_u = np.array([s.input.as_array() for s in samples])
    arr_lab = np.array([s.labels for s in samples])
    cols["t"] = np.array([s.t for s in samples])
    from .types import STATE_FIELDS
    for i, n in enumerate(STATE_FIELDS):
        cols[n] = arr_state[:, i]
    for i, n in enumerate(("u1", "u2", "u3", "u4")):
        cols[n] = arr_u[:, i]
    for i, n in enumerate(LABEL_NAMES):
        cols[n] = arr_lab[:, i]
    return cols


def run_validate(cfg: RunConfig,
                 out_dir: Optional[str] = None) -> ValidateResult:
    """Compare the identified model against the plant under the fixed
    sinusoidal excitation, reporting rmse/mae/r2 per channel.

    The open-loop plant has no rotational damping, so a single
    uninterrupted run drifts into the attitude singularity after a couple
    of seconds.  The excitation clock runs continuously, but the attitude
    is re-levelled at the start of each segment (same scheme as dataset
    generation).
    """
    plant = PlantModel(cfg.plant.to_params())
    stride = int(round(cfg.dataset.sample_dt / cfg.sim.dt_plant))
    exc = sinusoid_excitation()
    seg = min(cfg.sim.validate_segment, cfg.sim.validate_duration)
    n_seg = int(round(cfg.sim.validate_duration / seg))
    per_seg = int(round(seg / cfg.sim.dt_plant))
    samples: list[Sample] = []
    for k in range(n_seg):
        t0 = k * seg
        traj = integrate(plant, State.zero(), exc,
                         t_end=t0 + seg, dt=cfg.sim.dt_plant, t0=t0)
        samples.extend(traj[:per_seg:stride])
    samples = samples[:cfg.dataset.n_samples]
    cols = _sample_columns(samples)

    metrics = []
    preds: dict[str, np.ndarray] = {}
    for name in VALIDATION_CHANNELS:
        pred = np.asarray(evaluate_channel(name, cols), dtype=float)
        preds[name] = pred
        metrics.append(ChannelMetrics(
            name=name, rmse=rmse(pred, cols[name]),
            mae=mae(pred, cols[name]), r2=r2(pred, cols[name])))

    files: list[str] = []
    if out_dir is not None:
        _ensure_dir(out_dir)
        series_path = os.path.join(out_dir, "validation.csv")
        header = ["t"]
        for name in VALIDATION_CHANNELS:
            header += [name, name + "_pred"]
        with open(series_path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for k in range(len(samples)):
                vals = [cols["t"][k]]
                for name in VALIDATION_CHANNELS:
                    vals += [cols[name][k], preds[name][k]]
                fh.write(_row(vals) + "\n")
        files.append(series_path)

        report = ValidationReport(
            channels={m.name: {"rmse": m.rmse, "mae": m.mae, "r2": m.r2}
                      for m in metrics},
            n_samples=len(samples), excitation="test-sinusoid")
        report_path = os.path.join(out_dir, "validation_report.json")
        with open(report_path, "w") as fh:
            fh.write(report.to_json())
        files.append(report_path)

    return ValidateResult(excitation="test-sinusoid", n_samples=len(samples),
                          channels=metrics, files=files)


def track_errors(run: TrackingRun) -> dict[str, np.ndarray]:
    """Reference-minus-actual tracking errors for x, y, z, yaw (wrapped)."""
    epsi = np.array([wrap_angle(d) for d in run.refs[:, 3] - run.states[:, 8]])
    return {
        "x": run.refs[:, 0] - run.states[:, 0],
        "y": run.refs[:, 1] - run.states[:, 1],
        "z": run.refs[:, 2] - run.states[:, 2],
        "psi": epsi,
    }


def _write_track_series(out_dir: str, run: TrackingRun) -> list[str]:
    """Write the trajectory and diagnostics CSVs; returns their paths."""
    traj_path = os.path.join(out_dir, "trajectory.csv")
    with open(traj_path, "w", newline="") as fh:
        fh.write("t,x,xd,y,yd,z,zd,psi,psid\n")
        for k in range(len(run.times)):
            fh.write(_row([
                run.times[k],
                run.states[k, 0], run.refs[k, 0],
                run.states[k, 1], run.refs[k, 1],
                run.states[k, 2], run.refs[k, 2],
                run.states[k, 8], run.refs[k, 3]]) + "\n")

    diag_path = os.path.join(out_dir, "diagnostics.csv")
    with open(diag_path, "w", newline="") as fh:
        fh.write("t,ex,ey,ez,epsi,phid,thetad,"
                 "f1,f2,f3,f4,u1,u2,u3,u4,W1,W2,W3,W4,flags\n")
        for d in run.diags:
            vals = [d.t, d.ex, d.ey, d.e[0], d.e[3], d.phi_d, d.theta_d,
                    d.f.f1, d.f.f2, d.f.f3, d.f.f4,
                    d.u.u1, d.u.u2, d.u.u3, d.u.u4,
                    d.W[0], d.W[1], d.W[2], d.W[3]]
            fh.write(_row(vals) + ",%d\n" % int(d.flags))
    return [traj_path, diag_path]


def run_track(cfg: RunConfig, out_dir: Optional[str] = None) -> TrackResult:
    """Run the closed-loop tracking scenario on the physical plant.

    A numerical failure still raises, but first persists whatever was
    recorded up to the abort (plus a failure report) when out_dir is
    given, so a crash leaves diagnostics behind instead of nothing.
    """
    ref, duration = scenario_reference(cfg.scenario)
    plant = PlantModel(cfg.plant.to_params())
    controller = Controller(cfg.gains.to_gains(), cfg.outer.to_settings(),
                            dt=cfg.sim.dt_ctrl)
    try:
        run = run_tracking(plant, controller, ref, duration,
                           dt_plant=cfg.sim.dt_plant)
    except IntegrationError as e:
        partial = getattr(e, "partial", None)
        if out_dir is not None and partial is not None \
                and len(partial.times) > 0:
            _ensure_dir(out_dir)
            _write_track_series(out_dir, partial)
            _write_json(os.path.join(out_dir, "failure.json"), {
                "scenario": cfg.scenario.name,
                "duration": duration,
                "aborted_at": e.t,
                "reason": e.reason,
            })
        raise
    errors = track_errors(run)
    summary = tracking_summary(run.times, errors, TRACK_BANDS)

    files: list[str] = []
    if out_dir is not None:
        _ensure_dir(out_dir)
        files.extend(_write_track_series(out_dir, run))
        summary_path = os.path.join(out_dir, "tracking_summary.json")
        _write_json(summary_path, {
            "scenario": cfg.scenario.name,
            "duration": duration,
            "channels": [c.as_dict() for c in summary],
        })
        files.append(summary_path)

    return TrackResult(
        scenario=cfg.scenario.name, duration=duration,
        channels=[TrackChannelResult(
            name=c.name, band=c.band, settling_time=c.settling_time,
            steady_state_error=c.steady_state_error,
            max_abs_error=c.max_abs_error) for c in summary],
        files=files)
