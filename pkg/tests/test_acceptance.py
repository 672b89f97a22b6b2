"""End-to-end acceptance checks for the full pipeline.

Each test verifies one headline capability and prints a single
machine-greppable PASS/FAIL line with the measured margin.
"""

import itertools
import math
import os
import time

import numpy as np
from click.testing import CliRunner

from quadsr.cli import main as cli_main
from quadsr.config import (
    DatasetConfig,
    GainsConfig,
    OuterConfig,
    RunConfig,
    ScenarioConfig,
    scenario_reference,
)
from quadsr.control import (
    Controller,
    ControlFlag,
    allocate,
    inner_dynamics,
    simulate_inner_loop,
    solve_virtual_controls,
    run_tracking,
)
from quadsr.metrics import max_abs_after, tracking_summary
from quadsr.plant import PlantModel, integrate, sinusoid_excitation
from quadsr.service import (
    TRACK_BANDS,
    run_fit,
    run_generate_data,
    run_validate,
    track_errors,
)
from quadsr.sr.expr import eval_tree, parse_expr
from quadsr.types import (
    GainSet,
    PlantParams,
    RefChannel,
    State,
    VirtualControl,
)


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_allocation_exactness():
    # Forward-mix every rotor-speed combination on a 5-point grid per
    # rotor, then demand it back through the allocator: the round trip
    # must reproduce each speed to 1e-9 with no degradation flags,
    # across all 625 cases in under a second.
    grid = (0.0, 250.0, 500.0, 750.0, 1000.0)
    t0 = time.perf_counter()
    worst = 0.0
    n_cases = 0
    clean = True
    for u in itertools.product(grid, repeat=4):
        s = [v * v for v in u]
        f = VirtualControl(
            s[0] + s[1] + s[2] + s[3],
            s[1] + s[2] - s[0] - s[3],
            s[0] + s[2] - s[1] - s[3],
            s[0] + s[1] - s[2] - s[3],
        )
        cmd, flags = allocate(f)
        clean &= flags == ControlFlag.NONE
        worst = max(worst, float(np.max(np.abs(cmd.as_array() -
                                               np.asarray(u)))))
        n_cases += 1
    wall = time.perf_counter() - t0
    ok = n_cases == 625 and clean and worst < 1e-9 and wall < 1.0
    _report("allocation exactness", ok,
            f"{n_cases} cases, max |u' - u| = {worst:.3g} "
            f"(< 1e-9), flags clean = {clean}, {wall:.2f} s")


def test_lyapunov_identity():
    # Along the unsaturated inner loop, the numerically differentiated
    # per-channel energy W_i must match the designed decay
    # -c_i e_i^2 - c_{i+4} delta_i^2 to the accuracy of the 4th-order
    # difference stencil (error scale dt^2 relative to the channel).
    dt = 2e-3
    gains = GainSet.tracking_defaults()
    refs = (RefChannel.constant(-1.0), RefChannel.constant(0.2),
            RefChannel.constant(-0.15), RefChannel.constant(0.5))
    run = simulate_inner_loop(gains, refs, np.zeros(8), t_end=1.0, dt=dt)
    W, WD = run.W, run.wdot_pred
    dW = (W[:-4] - 8.0 * W[1:-3] + 8.0 * W[3:-1] - W[4:]) / (12.0 * dt)
    resid = np.abs(dW - WD[2:-2])
    ok = True
    margins = []
    for i in range(4):
        scale = max(1.0, float(np.max(np.abs(WD[:, i]))))
        tol = 10.0 * dt * dt * scale
        worst = float(np.max(resid[:, i]))
        margins.append(f"ch{i + 1} {worst:.2e}/{tol:.2e}")
        ok &= worst <= tol
    _report("energy-decay identity", ok, ", ".join(margins))


def test_model_validation():
    # The identified model against the physical plant under the fixed
    # sinusoidal excitation: near-perfect body-rate channels, strong
    # heave, lateral channels reported without a threshold.
    t0 = time.perf_counter()
    res = run_validate(RunConfig())
    wall = time.perf_counter() - t0
    r2 = {c.name: c.r2 for c in res.channels}
    ok = (r2["dwx"] >= 0.999 and r2["dwy"] >= 0.999 and r2["dwz"] >= 0.999
          and r2["az"] >= 0.95 and "ax" in r2 and "ay" in r2
          and wall < 10.0)
    _report("model validation", ok,
            f"r2 dwx={r2['dwx']:.7f} dwy={r2['dwy']:.7f} "
            f"dwz={r2['dwz']:.7f} az={r2['az']:.4f} "
            f"(ax={r2['ax']:.3f}, ay={r2['ay']:.3f} reported), "
            f"{wall:.2f} s (< 10 s)")


def test_yaw_law_rediscovery(tmp_path):
    # From plant-generated data alone, the regression must rediscover the
    # yaw-rate law: a gyroscopic wx*wy term plus the rotor mixing
    # u1^2 + u2^2 - u3^2 - u4^2, with the mixing coefficient within 5%
    # of the physical torque-to-inertia ratio 4.860e-6.
    cfg = RunConfig(seed=0, dataset=DatasetConfig(
        n_samples=2000, ranges=[(0.0, 1000.0)]))
    data = run_generate_data(cfg, str(tmp_path))
    csv = data.files[0].path

    t0 = time.perf_counter()
    res = run_fit(cfg, channel="dwz", dataset_path=csv)
    wall = time.perf_counter() - t0

    # Rebuild the winning expression's predictions on the dataset.
    raw = np.genfromtxt(csv, delimiter=",", names=True)
    cols = {name: np.asarray(raw[name], dtype=float)
            for name in raw.dtype.names}

    def feature_column(name):
        if name.endswith("sq"):
            return cols[name[:-2]] ** 2
        return cols[name]

    names = tuple(res.features)
    X = np.column_stack([feature_column(n) for n in names])
    tree = parse_expr(res.best.expr, names)
    pred = eval_tree(tree, X)

    # Project the prediction onto the target structure
    # a*wx*wy + b*(u1^2 + u2^2 - u3^2 - u4^2) + const.
    mix = (cols["u1"] ** 2 + cols["u2"] ** 2
           - cols["u3"] ** 2 - cols["u4"] ** 2)
    A = np.column_stack([cols["wx"] * cols["wy"], mix, np.ones_like(mix)])
    coef, *_ = np.linalg.lstsq(A, pred, rcond=None)
    a_hat, b_hat = float(coef[0]), float(coef[1])
    proj = A @ coef
    ss_res = float(np.sum((pred - proj) ** 2))
    ss_tot = float(np.sum((pred - np.mean(pred)) ** 2))
    structure_r2 = 1.0 - ss_res / ss_tot
    b_rel = abs(b_hat - 4.860e-6) / 4.860e-6

    ok = (res.generations_run <= 200 and wall < 300.0
          and res.best.r2 >= 0.999 and structure_r2 >= 0.999
          and b_rel <= 0.05)
    _report("yaw-law rediscovery", ok,
            f"b = {b_hat:.4e} vs 4.860e-6 ({100 * b_rel:.3f}% off, "
            f"<= 5%), a = {a_hat:.4e}, fit r2 = {res.best.r2:.7f}, "
            f"structure r2 = {structure_r2:.7f}, "
            f"{res.generations_run} generations (<= 200), "
            f"{wall:.1f} s (< 300 s)")


def test_diagonal_sweep_tracking():
    # 30 s diagonal-sweep scenario: after the 10 s transient each position
    # axis must stay within 0.3 m of the reference.
    ref, duration = scenario_reference(ScenarioConfig(name="case1"))
    controller = Controller(GainsConfig().to_gains(),
                            OuterConfig().to_settings(), dt=5e-3)
    run = run_tracking(PlantModel(PlantParams()), controller, ref,
                       duration, dt_plant=1e-3)
    errors = track_errors(run)
    worst = {axis: max_abs_after(run.times, errors[axis], 10.0)
             for axis in ("x", "y", "z")}
    ok = all(v < 0.3 for v in worst.values())
    _report("sweep tracking", ok,
            f"max |error| after 10 s: x={worst['x']:.4f} m, "
            f"y={worst['y']:.4f} m, z={worst['z']:.4f} m (each < 0.3 m)")


def test_step_settling():
    # 12 s step-and-descend scenario: x, y, z settle into a 0.05 m band
    # (yaw 0.02 rad) within 4 s and hold steady-state error below 0.01.
    ref, duration = scenario_reference(ScenarioConfig(name="case2"))
    controller = Controller(GainsConfig().to_gains(),
                            OuterConfig().to_settings(), dt=5e-3)
    run = run_tracking(PlantModel(PlantParams()), controller, ref,
                       duration, dt_plant=1e-3)
    summary = tracking_summary(run.times, track_errors(run), TRACK_BANDS)
    ok = True
    parts = []
    for ch in summary:
        settled = ch.settling_time is not None and ch.settling_time <= 4.0
        steady = ch.steady_state_error < 0.01
        ok &= settled and steady
        st = "never" if ch.settling_time is None else \
            f"{ch.settling_time:.2f}s"
        parts.append(f"{ch.name} settle={st} ss={ch.steady_state_error:.2e}")
    _report("step settling", ok,
            ", ".join(parts) + " (settle <= 4 s, ss < 0.01)")


def test_inner_inversion_identity():
    # Solving for virtual controls then pushing them through the inner
    # dynamics must reproduce the demanded accelerations to 1e-9 relative
    # over 10^4 random non-singular states.
    rng = np.random.default_rng(np.random.SeedSequence(1234))
    n = 10_000
    worst = 0.0
    for _ in range(n):
        s = np.array([
            rng.uniform(-5.0, 0.0),
            rng.uniform(-1.2, 1.2),
            rng.uniform(-1.2, 1.2),
            rng.uniform(-math.pi, math.pi),
            rng.uniform(-3.0, 3.0),
            rng.uniform(-3.0, 3.0),
            rng.uniform(-3.0, 3.0),
            rng.uniform(-3.0, 3.0),
        ])
        gamma = rng.uniform(-50.0, 50.0, 4)
        f = solve_virtual_controls(gamma, s)
        got = inner_dynamics(s, f)[4:8]
        rel = float(np.linalg.norm(got - gamma)
                    / max(np.linalg.norm(gamma), 1e-300))
        worst = max(worst, rel)
    ok = worst <= 1e-9
    _report("inversion identity", ok,
            f"worst relative error {worst:.3g} over {n} states (<= 1e-9)")


def test_cli_determinism(tmp_path):
    # Every batch CLI command, run twice with the same seed, must produce
    # byte-identical output files and identical stdout.
    runner = CliRunner()

    def write_cfg(name, text):
        p = tmp_path / name
        p.write_text(text)
        return str(p)

    data_cfg = write_cfg("data.yaml", (
        "dataset:\n  n_samples: 40\n  ranges:\n  - [0.0, 1000.0]\n"))
    fit_cfg = write_cfg("fit.yaml", (
        "sr:\n  population_size: 80\n  generations: 10\n"))
    val_cfg = write_cfg("val.yaml", (
        "sim:\n  validate_duration: 0.5\n  validate_segment: 0.5\n"))
    trk_cfg = write_cfg("trk.yaml", (
        "scenario:\n  name: custom\n  duration: 1.0\n"
        "  x: {kind: constant, value: 0.0}\n"
        "  y: {kind: constant, value: 0.0}\n"
        "  z: {kind: constant, value: -0.2}\n"
        "  psi: {kind: constant, value: 0.1}\n"))

    # A dataset for the fit command, generated once up front.
    seed_dir = str(tmp_path / "seed_data")
    res = runner.invoke(cli_main, ["generate-data", "--config", data_cfg,
                                   "--seed", "0", "--out", seed_dir])
    assert res.exit_code == 0, res.output
    train_csv = os.path.join(seed_dir, "train_0_1000.csv")

    commands = {
        "generate-data": ["generate-data", "--config", data_cfg,
                          "--seed", "3"],
        "fit": ["fit", "--config", fit_cfg, "--seed", "3",
                "--data", train_csv, "--channel", "dwz"],
        "validate": ["validate", "--config", val_cfg, "--seed", "3"],
        "track": ["track", "--config", trk_cfg, "--seed", "3"],
    }

    def collect(out_dir):
        blob = {}
        for root, _, names in os.walk(out_dir):
            for fn in sorted(names):
                p = os.path.join(root, fn)
                with open(p, "rb") as fh:
                    blob[os.path.relpath(p, out_dir)] = fh.read()
        return blob

    ok = True
    parts = []
    for name, argv in commands.items():
        outputs = []
        stdouts = []
        for attempt in ("r1", "r2"):
            out_dir = str(tmp_path / f"{name}-{attempt}")
            res = runner.invoke(cli_main, argv + ["--out", out_dir])
            assert res.exit_code == 0, f"{name}: {res.output}"
            outputs.append(collect(out_dir))
            stdouts.append(res.output.replace(out_dir, "OUT"))
        same = outputs[0] == outputs[1] and stdouts[0] == stdouts[1]
        ok &= same
        parts.append(f"{name}={'identical' if same else 'DIFFERS'}"
                     f" ({len(outputs[0])} files)")
    _report("command determinism", ok, ", ".join(parts))


def test_integrator_order():
    # Halving the step on a smooth forced problem must shrink the global
    # error by ~2^4; the measured ratio must land in [12, 20].
    plant = PlantModel(PlantParams())
    exc = sinusoid_excitation()
    t_end = 0.5

    def final_state(dt):
        traj = integrate(plant, State.zero(), exc, t_end=t_end, dt=dt)
        return traj[-1].state.as_array()

    ref = final_state(1e-5)
    err_coarse = float(np.linalg.norm(final_state(2e-3) - ref))
    err_fine = float(np.linalg.norm(final_state(1e-3) - ref))
    ratio = err_coarse / err_fine
    ok = 12.0 <= ratio <= 20.0
    _report("integrator order", ok,
            f"error ratio {ratio:.2f} for dt 2e-3 -> 1e-3 (in [12, 20])")
