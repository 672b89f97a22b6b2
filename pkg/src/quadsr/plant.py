"""First-principles quadrotor plant, integrator, and dataset generation.

The plant is the ground truth the rest of the stack is measured against:
rigid-body rotational dynamics with rotor thrust/torque aerodynamics,
plus two small test-stand effects (constant lateral acceleration bias and
quadratic vertical drag) that can be zeroed through PlantParams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .types import (
    GIMBAL_MARGIN,
    GimbalLockError,
    PlantParams,
    RotorCommand,
    State,
    STATE_FIELDS,
    euler_rate_transform,
)

DATASET_COLUMNS = ("t",) + STATE_FIELDS + (
    "u1", "u2", "u3", "u4", "ax", "ay", "az", "dwx", "dwy", "dwz")

# Indices of the acceleration labels inside the 12-entry derivative vector.
LABEL_INDICES = (3, 4, 5, 9, 10, 11)
LABEL_NAMES = ("ax", "ay", "az", "dwx", "dwy", "dwz")


class IntegrationError(RuntimeError):
    """Simulation left the valid state region (singularity or non-finite)."""

    def __init__(self, t: float, reason: str):
        super().__init__(f"integration aborted at t={t:.6f}: {reason}")
        self.t = t
        self.reason = reason


@dataclass(frozen=True)
class Sample:
    """One dataset row: state and input at time t plus acceleration labels.

    labels holds (ax, ay, az, dwx, dwy, dwz), exactly the translational
    acceleration and body angular acceleration the plant produces for
    (state, input).
    """

    t: float
    state: State
    input: RotorCommand
    labels: np.ndarray


def plant_derivative(state: State, u: RotorCommand,
                     params: PlantParams) -> np.ndarray:
    """Time derivative of the 12-state vector under rotor command u."""
    return _derivative_array(state.as_array(), u.as_array(), params)


def _derivative_array(y: np.ndarray, u: np.ndarray,
                      params: PlantParams) -> np.ndarray:
    phi, theta, psi = y[6], y[7], y[8]
    wx, wy, wz = y[9], y[10], y[11]
    if abs(theta) >= math.pi / 2.0 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {theta} too close to +-pi/2")

    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    spsi, cpsi = math.sin(psi), math.cos(psi)

    u1s, u2s, u3s, u4s = u[0] * u[0], u[1] * u[1], u[2] * u[2], u[3] * u[3]
    thrust_acc = params.ct * (u1s + u2s + u3s + u4s) / params.m

    # Thrust acts along -Z_b; gravity along +Z_e (down).
    ax = -thrust_acc * (cp * st * cpsi + sp * spsi)
    ay = -thrust_acc * (cp * st * spsi - sp * cpsi) + params.bias_y
    az = params.g - thrust_acc * cp * ct - params.kz_drag * y[5] * y[5]

    tt = st / ct
    phidot = wx + sp * tt * wy + cp * tt * wz
    thetadot = cp * wy - sp * wz
    psidot = (sp * wy + cp * wz) / ct

    arm = params.ct * params.d / math.sqrt(2.0)
    tau_x = arm * (u2s + u3s - u1s - u4s)
    tau_y = arm * (u1s + u3s - u2s - u4s)
    tau_z = params.cm * (u1s + u2s - u3s - u4s)

    # Gyroscopic coupling with the sign the reference airframe's body-axis
    # convention produces (w x Jw enters with a plus).
    dwx = ((params.jzz - params.jyy) * wy * wz + tau_x) / params.jxx
    dwy = ((params.jxx - params.jzz) * wx * wz + tau_y) / params.jyy
    dwz = ((params.jyy - params.jxx) * wx * wy + tau_z) / params.jzz

    return np.array([y[3], y[4], y[5], ax, ay, az,
                     phidot, thetadot, psidot, dwx, dwy, dwz])


@dataclass(frozen=True)
class PlantModel:
    """Quadrotor plant bound to a parameter set."""

    params: PlantParams = PlantParams()

    def derivative(self, state: State, u: RotorCommand) -> np.ndarray:
        return plant_derivative(state, u, self.params)

    def derivative_array(self, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        return _derivative_array(y, u, self.params)

    def hover_command(self) -> RotorCommand:
        return RotorCommand.uniform(self.params.hover_speed)


def _check_valid(y: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(y)):
        raise IntegrationError(t, "non-finite state")
    half_pi = math.pi / 2.0
    if abs(y[6]) >= half_pi:
        raise IntegrationError(t, f"roll {y[6]:.4f} left (-pi/2, pi/2)")
    if abs(y[7]) >= half_pi - GIMBAL_MARGIN:
        raise IntegrationError(t, f"pitch {y[7]:.4f} hit the gimbal singularity")


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray],
             t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of width dt."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(model: PlantModel, state0: State,
              input_fn: Callable[[float], RotorCommand],
              t_end: float, dt: float = 1e-3,
              t0: float = 0.0) -> list[Sample]:
    """Integrate the plant with RK4, sampling every step.

    input_fn is evaluated at the RK4 stage times; rotor commands arrive
    already saturated through the RotorCommand type.  Aborts with
    IntegrationError (carrying the timestamp) if the state goes non-finite
    or reaches the attitude limits.

    Returns one Sample per step boundary, including both endpoints.
    """
    if dt <= 0.0 or t_end <= t0:
        raise ValueError("dt must be positive and t_end must exceed t0")
    n_steps = int(round((t_end - t0) / dt))

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return model.derivative_array(y, input_fn(t).as_array())

    def snapshot(t: float, y: np.ndarray) -> Sample:
        u = input_fn(t)
        deriv = model.derivative_array(y, u.as_array())
        return Sample(t, State.from_array(y), u, deriv[list(LABEL_INDICES)])

    y = state0.as_array()
    out = [snapshot(t0, y)]
    for k in range(n_steps):
        t = t0 + k * dt
        y = rk4_step(rhs, t, y, dt)
        _check_valid(y, t + dt)
        out.append(snapshot(t0 + (k + 1) * dt, y))
    return out


def sinusoid_excitation() -> Callable[[float], RotorCommand]:
    """Fixed four-phase sinusoidal rotor excitation used for validation.

    Each rotor runs 300 + 300*sin(10 t + phase) with phases
    (0, pi/4, pi/3, pi/6), staying inside [0, 600].
    """
    phases = (0.0, math.pi / 4.0, math.pi / 3.0, math.pi / 6.0)

    def fn(t: float) -> RotorCommand:
        return RotorCommand(*(300.0 + 300.0 * math.sin(10.0 * t + p)
                              for p in phases))

    return fn


class RandomDwellExcitation:
    """Piecewise-constant rotor speeds drawn uniformly from [lo, hi].

    Values are redrawn every `dwell` seconds from a seeded stream, so the
    signal is a deterministic function of (lo, hi, seed, dwell) alone.
    """

    def __init__(self, lo: float, hi: float, seed: int, dwell: float = 0.05):
        if not (0.0 <= lo < hi <= 1000.0):
            raise ValueError(f"excitation range [{lo}, {hi}] outside [0, 1000]")
        if dwell <= 0.0:
            raise ValueError("dwell must be positive")
        self.lo = lo
        self.hi = hi
        self.dwell = dwell
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._vals: list[np.ndarray] = []

    def __call__(self, t: float) -> RotorCommand:
        if t < 0.0:
            raise ValueError("excitation time must be >= 0")
        idx = int(t / self.dwell)
        while len(self._vals) <= idx:
            self._vals.append(self._rng.uniform(self.lo, self.hi, size=4))
        v = self._vals[idx]
        return RotorCommand(v[0], v[1], v[2], v[3])


def make_excitation(kind: str, lo: float = 0.0, hi: float = 1000.0,
                    seed: int = 0, dwell: float = 0.05
                    ) -> Callable[[float], RotorCommand]:
    """Excitation factory keyed by the config-level kind string."""
    if kind == "test-sinusoid":
        return sinusoid_excitation()
    if kind == "random-uniform":
        return RandomDwellExcitation(lo, hi, seed, dwell)
    raise ValueError(f"unknown excitation kind {kind!r}")


def generate_dataset(model: PlantModel,
                     input_fn: Callable[[float], RotorCommand],
                     n_samples: int = 2000,
                     sample_dt: float = 5e-3,
                     dt: float = 1e-3,
                     seed: int = 0,
                     segment_len: float = 0.1,
                     init_rate_scale: float = 4.0,
                     init_vz_scale: float = 6.0,
                     noise_sigma: float = 0.0) -> list[Sample]:
    """Generate a regression dataset of (state, input, acceleration) rows.

    Wide-range excitation tumbles an open-loop airframe through the pitch
    singularity within a fraction of a second, so the trajectory is built
    from short segments (segment_len) that restart from level attitude
    with seeded random initial body rates, yaw, and vertical speed; the
    global clock (and with it the excitation signal) runs on uninterrupted.
    A segment that still reaches the singularity is retried with the next
    child seed, keeping the output a pure function of the seed.

    Labels are the exact plant accelerations at each sample; optional
    Gaussian noise (noise_sigma) can be added on top.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    stride = int(round(sample_dt / dt))
    if stride < 1 or abs(stride * dt - sample_dt) > 1e-12:
        raise ValueError("sample_dt must be a positive multiple of dt")
    per_seg = int(round(segment_len / sample_dt))
    if per_seg < 1 or abs(per_seg * sample_dt - segment_len) > 1e-12:
        raise ValueError("segment_len must be a positive multiple of sample_dt")

    samples: list[Sample] = []
    seg = 0
    while len(samples) < n_samples:
        t0 = seg * segment_len
        attempt = 0
        while True:
            ss = np.random.SeedSequence(entropy=seed, spawn_key=(seg, attempt))
            rng = np.random.Generator(np.random.PCG64(ss))
            w0 = rng.uniform(-init_rate_scale, init_rate_scale, size=3)
            vz0 = float(rng.uniform(-init_vz_scale, init_vz_scale))
            psi0 = float(rng.uniform(-math.pi, math.pi))
            state0 = State(0.0, 0.0, 0.0, 0.0, 0.0, vz0,
                           0.0, 0.0, psi0,
                           float(w0[0]), float(w0[1]), float(w0[2]))
            try:
                traj = integrate(model, state0, input_fn,
                                 t0 + segment_len, dt=dt, t0=t0)
            except IntegrationError:
                attempt += 1
                if attempt > 64:
                    raise
                continue
            break
        samples.extend(traj[k * stride] for k in range(per_seg))
        seg += 1
    samples = samples[:n_samples]

    if noise_sigma > 0.0:
        nrng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(0xA11CE,))))
        samples = [Sample(s.t, s.state, s.input,
                          s.labels + nrng.normal(0.0, noise_sigma, size=6))
                   for s in samples]
    return samples


def write_dataset_csv(samples: Sequence[Sample], path: str) -> None:
    """Write samples in the canonical dataset layout, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(DATASET_COLUMNS) + "\n")
        for s in samples:
            row = np.concatenate(([s.t], s.state.as_array(),
                                  s.input.as_array(), s.labels))
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_dataset_csv(path: str) -> dict[str, np.ndarray]:
    """Read a dataset CSV back as {column name: array}."""
    with open(path, "r") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"column count mismatch in {path}")
    return {name: data[:, i].copy() for i, name in enumerate(header)}
