"""Hierarchical trajectory-tracking controller built on the learned model.

Outer loop: PI position control inverted through the learned lateral
acceleration laws to produce roll/pitch targets (with saturation guards,
rate limiting, and a second-order tracking filter supplying target
derivatives).  Inner loop: backstepping on the (z, phi, theta, psi)
block of the learned dynamics, solved exactly for the virtual controls
and allocated to rotor speeds through the orthogonal mixing matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntFlag
from typing import Callable, Sequence

import numpy as np

from . import learned
from .plant import IntegrationError, rk4_step
from .types import (
    ROTOR_SPEED_MAX,
    GainSet,
    GimbalLockError,
    InnerState,
    Reference,
    RotorCommand,
    State,
    VirtualControl,
    euler_rate_transform,
    euler_rate_transform_dot,
    euler_rate_transform_inv,
    wrap_angle,
)

RATE_ARMS = np.array([learned.ROLL_ARM, learned.PITCH_ARM, learned.YAW_ARM])


class ControlFlag(IntFlag):
    """Saturation/guard events raised by one controller step."""

    NONE = 0
    ARCSIN_SAT = 1
    THRUST_DENOM_HOLD = 2
    TILT_DENOM_HOLD = 4
    TILT_CLAMP = 8
    RATE_LIMIT = 16
    NEG_SQUARED_CLAMP = 32
    ROTOR_SPEED_CLAMP = 64
    TORQUE_SCALE = 128


def _as_inner_array(s) -> np.ndarray:
    if isinstance(s, InnerState):
        return s.as_array()
    a = np.asarray(s, dtype=float)
    if a.shape != (8,):
        raise ValueError("inner state must have 8 entries")
    return a


def gamma_affine(s) -> tuple[np.ndarray, np.ndarray]:
    """Affine form of the attitude acceleration block.

    Returns (A, b) with [phi'', theta'', psi''] = A @ [f2, f3, f4] + b,
    where the attitude acceleration follows from the chain rule applied to
    the Euler-rate map: R(phi, theta) @ wdot + Rdot @ w.
    """
    a = _as_inner_array(s)
    phi, theta = a[1], a[2]
    R = euler_rate_transform(phi, theta)
    w = euler_rate_transform_inv(phi, theta) @ a[5:8]
    Rdot = euler_rate_transform_dot(phi, theta, a[5], a[6])
    gyro = np.array([
        learned.ROLL_GYRO * w[1] * w[2],
        learned.PITCH_GYRO * w[0] * w[2],
        learned.YAW_GYRO * w[0] * w[1],
    ])
    A = R * RATE_ARMS  # scales columns: R @ diag(arms)
    b = R @ gyro + Rdot @ w
    return A, b


def inner_dynamics(s, f: VirtualControl) -> np.ndarray:
    """Time derivative of the inner state under virtual controls f.

    First four entries are the stored rates; the last four are the heave
    acceleration from the identified law and the attitude accelerations
    from the affine form above.
    """
    a = _as_inner_array(s)
    gamma5 = (learned.GRAVITY_FIT
              - learned.THRUST_FIT * math.cos(a[1]) * f.f1
              - learned.VERT_DRAG_FIT * a[4] * a[4])
    A, b = gamma_affine(a)
    att = A @ np.array([f.f2, f.f3, f.f4]) + b
    return np.array([a[4], a[5], a[6], a[7],
                     gamma5, att[0], att[1], att[2]])


def backstepping_virtual(s, sd: Sequence[float], sd_dot: Sequence[float],
                         sd_ddot: Sequence[float], gains: GainSet) -> np.ndarray:
    """Commanded accelerations for (z, phi, theta, psi) tracking.

    For channel i (1-based) with error e = sd - s, the command is
    e + sd_ddot + c_i*(sd_dot - rate) + c_{i+4}*(sd_dot + c_i*e - rate),
    which yields Wdot_i = -c_i e_i^2 - c_{i+4} delta_i^2 along the loop.
    """
    a = _as_inner_array(s)
    out = np.empty(4)
    for i in range(4):
        ci, cd = gains.c(i + 1), gains.c(i + 5)
        e = sd[i] - a[i]
        rate = a[i + 4]
        out[i] = (e + sd_ddot[i] + ci * (sd_dot[i] - rate)
                  + cd * (sd_dot[i] + ci * e - rate))
    return out


def tracking_errors(s, sd: Sequence[float], sd_dot: Sequence[float],
                    gains: GainSet) -> tuple[np.ndarray, np.ndarray]:
    """(e, delta): channel errors and rate errors against virtual targets."""
    a = _as_inner_array(s)
    e = np.array([sd[i] - a[i] for i in range(4)])
    delta = np.array([sd_dot[i] + gains.c(i + 1) * e[i] - a[i + 4]
                      for i in range(4)])
    return e, delta


def solve_virtual_controls(gamma_target: Sequence[float], s) -> VirtualControl:
    """Invert the inner dynamics for the virtual controls.

    Closed form for f1 from the heave law; 3x3 linear solve for the
    attitude block.  Exact inverse of inner_dynamics away from the
    attitude singularity.
    """
    a = _as_inner_array(s)
    g = np.asarray(gamma_target, dtype=float)
    f1 = ((g[0] - learned.GRAVITY_FIT + learned.VERT_DRAG_FIT * a[4] * a[4])
          / (-learned.THRUST_FIT * math.cos(a[1])))
    A, b = gamma_affine(a)
    f234 = np.linalg.solve(A, g[1:4] - b)
    return VirtualControl(float(f1), float(f234[0]), float(f234[1]),
                          float(f234[2]))


def allocate(f: VirtualControl) -> tuple[RotorCommand, ControlFlag]:
    """Map virtual controls to rotor speeds through the mixing inverse.

    Feasible commands invert exactly.  Infeasible ones degrade gracefully:
    the thrust channel f1 is clamped into what four rotors can deliver,
    then the torque triple (f2, f3, f4) is scaled down *jointly* until
    every squared speed fits in [0, max^2].  Scaling the triple keeps the
    commanded torque direction: per-rotor clipping would re-mix the
    channels and manufacture torque about axes the controller never
    requested (railing two rotors produces pure yaw).
    """
    cap = 4.0 * ROTOR_SPEED_MAX * ROTOR_SPEED_MAX
    flags = ControlFlag.NONE
    f1 = f.f1
    if f1 < 0.0:
        flags |= ControlFlag.NEG_SQUARED_CLAMP
        f1 = 0.0
    elif f1 > cap:
        flags |= ControlFlag.ROTOR_SPEED_CLAMP
        f1 = cap

    # u_i^2 = (f1 + s*delta_i) / 4 with the torque mix delta below.
    delta = np.array([
        -f.f2 + f.f3 + f.f4,
        f.f2 - f.f3 + f.f4,
        f.f2 + f.f3 - f.f4,
        -f.f2 - f.f3 - f.f4,
    ])
    scale = 1.0
    for d in delta:
        if f1 + d < 0.0:
            scale = min(scale, f1 / -d)
        elif f1 + d > cap:
            scale = min(scale, (cap - f1) / d)
    if scale < 1.0:
        flags |= ControlFlag.TORQUE_SCALE
    sq = np.maximum((f1 + scale * delta) / 4.0, 0.0)
    u = np.minimum(np.sqrt(sq), float(ROTOR_SPEED_MAX))
    return RotorCommand(*[float(v) for v in u]), flags


@dataclass
class OuterLoopSettings:
    """Guards for the tilt-target inversion."""

    tilt_clamp: float = 0.6          # rad, keeps authority ~6 m/s^2 lateral
    rate_limit: float = 3.0          # rad/s on phi_d / theta_d motion
    eps_denom: float = 1e-6
    filter_omega: float = 12.0       # tracking-filter bandwidth, rad/s
    filter_zeta: float = 1.0


class OuterLoop:
    """Position PI loop inverted through the learned lateral dynamics.

    Stateful: holds the previous tilt targets both for the epsilon-guard
    hold behavior and for rate limiting.  Uses the rotor command of the
    previous cycle (one-step delay), initialized at the learned hover.
    """

    def __init__(self, gains: GainSet, settings: OuterLoopSettings,
                 dt: float):
        self.gains = gains
        self.settings = settings
        self.dt = dt
        self.phi_d = 0.0
        self.theta_d = 0.0

    def compute(self, state: State, ref: Reference, u_prev: RotorCommand,
                t: float) -> tuple[float, float, ControlFlag]:
        g = self.gains
        st = self.settings
        flags = ControlFlag.NONE
        u1, u2, u3, u4 = u_prev.u1, u_prev.u2, u_prev.u3, u_prev.u4

        ey = ref.y(t) - state.y
        ey_dot = ref.y.df(t) - state.vy
        target_y = g.kpy * ey_dot + g.kiy * ey + ref.y.ddf(t)
        den_y = (learned.Y_THRUST_U1 * u1 * u1
                 + learned.Y_THRUST_REST * (u2 * u2 + u3 * u3 + u4 * u4))
        if den_y < st.eps_denom:
            flags |= ControlFlag.THRUST_DENOM_HOLD
            phi_d = self.phi_d
        else:
            arg = (target_y - learned.Y_BIAS) / den_y
            if abs(arg) > 1.0:
                flags |= ControlFlag.ARCSIN_SAT
                arg = math.copysign(1.0, arg)
            phi_d = math.asin(arg) - state.psi

        ex = ref.x(t) - state.x
        ex_dot = ref.x.df(t) - state.vx
        target_x = g.kpx * ex_dot + g.kix * ex + ref.x.ddf(t)
        thrust_x = learned.X_THRUST_U1 * u1 + learned.X_THRUST_U2U4 * u2 * u4
        tilt_x = learned.X_TILT_U1 * u1 + learned.X_THRUST_U2U4 * u2 * u4
        num = target_x + thrust_x * math.sin(phi_d) * math.sin(state.psi)
        den_x = -tilt_x * math.cos(phi_d) * math.cos(state.psi)
        if abs(den_x) < st.eps_denom:
            flags |= ControlFlag.TILT_DENOM_HOLD
            theta_d = self.theta_d
        else:
            theta_d = num / den_x

        clamped_phi = min(max(phi_d, -st.tilt_clamp), st.tilt_clamp)
        clamped_theta = min(max(theta_d, -st.tilt_clamp), st.tilt_clamp)
        if clamped_phi != phi_d or clamped_theta != theta_d:
            flags |= ControlFlag.TILT_CLAMP

        max_step = st.rate_limit * self.dt
        lim_phi, lim_theta = clamped_phi, clamped_theta
        if abs(clamped_phi - self.phi_d) > max_step:
            flags |= ControlFlag.RATE_LIMIT
            lim_phi = self.phi_d + math.copysign(max_step,
                                                 clamped_phi - self.phi_d)
        if abs(clamped_theta - self.theta_d) > max_step:
            flags |= ControlFlag.RATE_LIMIT
            lim_theta = self.theta_d + math.copysign(max_step,
                                                     clamped_theta - self.theta_d)

        self.phi_d = lim_phi
        self.theta_d = lim_theta
        return lim_phi, lim_theta, flags


class SecondOrderFilter:
    """Critically-damped tracking filter providing target derivatives."""

    def __init__(self, omega: float, zeta: float = 1.0,
                 pos: float = 0.0, vel: float = 0.0):
        self.omega = omega
        self.zeta = zeta
        self.pos = pos
        self.vel = vel

    def _acc(self, target: float, pos: float, vel: float) -> float:
        return (self.omega * self.omega * (target - pos)
                - 2.0 * self.zeta * self.omega * vel)

    def step(self, target: float, dt: float) -> tuple[float, float, float]:
        """Advance by dt toward target; returns (pos, vel, acc)."""
        y = np.array([self.pos, self.vel])

        def rhs(_t: float, v: np.ndarray) -> np.ndarray:
            return np.array([v[1], self._acc(target, v[0], v[1])])

        y = rk4_step(rhs, 0.0, y, dt)
        self.pos, self.vel = float(y[0]), float(y[1])
        acc = self._acc(target, self.pos, self.vel)
        return self.pos, self.vel, acc


@dataclass
class ControlDiagnostics:
    """Everything one control step decided, for logging and analysis."""

    t: float
    ex: float
    ey: float
    e: np.ndarray          # (z, phi, theta, psi) tracking errors
    delta: np.ndarray      # rate errors against the virtual targets
    V: np.ndarray          # per-channel 0.5 e^2
    W: np.ndarray          # per-channel 0.5 (e^2 + delta^2)
    wdot_pred: np.ndarray  # predicted Wdot: -c_i e^2 - c_{i+4} delta^2
    phi_d: float
    theta_d: float
    f: VirtualControl
    u: RotorCommand
    flags: ControlFlag


class Controller:
    """Full cascade: outer loop, target filtering, backstepping, allocation.

    Holds the one-step-delayed rotor command (initialized at the learned
    hover) and the tilt-target filters; step() is called once per control
    period dt.
    """

    def __init__(self, gains: GainSet | None = None,
                 settings: OuterLoopSettings | None = None,
                 dt: float = 5e-3):
        self.gains = gains or GainSet.tracking_defaults()
        self.settings = settings or OuterLoopSettings()
        self.dt = dt
        self.outer = OuterLoop(self.gains, self.settings, dt)
        self.filter_phi = SecondOrderFilter(self.settings.filter_omega,
                                            self.settings.filter_zeta)
        self.filter_theta = SecondOrderFilter(self.settings.filter_omega,
                                              self.settings.filter_zeta)
        self.u_prev = RotorCommand.uniform(learned.LEARNED_HOVER_SPEED)

    def step(self, state: State, ref: Reference,
             t: float) -> tuple[RotorCommand, ControlDiagnostics]:
        phi_raw, theta_raw, flags = self.outer.compute(state, ref,
                                                       self.u_prev, t)
        phi_d, phi_d_dot, phi_d_ddot = self.filter_phi.step(phi_raw, self.dt)
        theta_d, theta_d_dot, theta_d_ddot = self.filter_theta.step(
            theta_raw, self.dt)

        s = InnerState.from_state(state).as_array()
        # Pull the yaw reference into the branch nearest the current yaw so
        # the error is the wrapped difference.
        psi_d = s[3] + wrap_angle(ref.psi(t) - s[3])
        sd = (ref.z(t), phi_d, theta_d, psi_d)
        sd_dot = (ref.z.df(t), phi_d_dot, theta_d_dot, ref.psi.df(t))
        sd_ddot = (ref.z.ddf(t), phi_d_ddot, theta_d_ddot, ref.psi.ddf(t))

        gamma_t = backstepping_virtual(s, sd, sd_dot, sd_ddot, self.gains)
        f = solve_virtual_controls(gamma_t, s)
        u, alloc_flags = allocate(f)
        flags |= alloc_flags
        self.u_prev = u

        e, delta = tracking_errors(s, sd, sd_dot, self.gains)
        c_err = np.array([self.gains.c(i + 1) for i in range(4)])
        c_rate = np.array([self.gains.c(i + 5) for i in range(4)])
        diag = ControlDiagnostics(
            t=t,
            ex=ref.x(t) - state.x,
            ey=ref.y(t) - state.y,
            e=e,
            delta=delta,
            V=0.5 * e * e,
            W=0.5 * (e * e + delta * delta),
            wdot_pred=-c_err * e * e - c_rate * delta * delta,
            phi_d=phi_d,
            theta_d=theta_d,
            f=f,
            u=u,
            flags=flags,
        )
        return u, diag


@dataclass
class TrackingRun:
    """Closed-loop run record sampled at the control rate."""

    times: np.ndarray            # (n+1,)
    states: np.ndarray           # (n+1, 12)
    refs: np.ndarray             # (n+1, 4): xd, yd, zd, psid
    diags: list[ControlDiagnostics]   # length n


def run_tracking(system, controller: Controller, ref: Reference,
                 t_end: float, dt_plant: float = 1e-3) -> TrackingRun:
    """Close the loop: zero-order-hold control over RK4 plant substeps.

    `system` is anything exposing derivative_array (the physical plant or
    the learned model itself).
    """
    dt_ctrl = controller.dt
    sub = int(round(dt_ctrl / dt_plant))
    if sub < 1 or abs(sub * dt_plant - dt_ctrl) > 1e-12:
        raise ValueError("control period must be a multiple of dt_plant")
    n_ctrl = int(round(t_end / dt_ctrl))

    times = np.empty(n_ctrl + 1)
    states = np.empty((n_ctrl + 1, 12))
    refs = np.empty((n_ctrl + 1, 4))
    diags: list[ControlDiagnostics] = []

    y = State.zero().as_array()
    for k in range(n_ctrl):
        t = k * dt_ctrl
        times[k] = t
        states[k] = y
        refs[k] = (ref.x(t), ref.y(t), ref.z(t), ref.psi(t))
        u, diag = controller.step(State.from_array(y), ref, t)
        diags.append(diag)
        u_arr = u.as_array()

        def rhs(tt: float, yy: np.ndarray) -> np.ndarray:
            return system.derivative_array(yy, u_arr)

        for i in range(sub):
            y = rk4_step(rhs, t + i * dt_plant, y, dt_plant)
            if not np.all(np.isfinite(y)) or abs(y[6]) >= math.pi / 2 \
                    or abs(y[7]) >= math.pi / 2 - 1e-6:
                err = IntegrationError(t + (i + 1) * dt_plant,
                                       "attitude left the valid region")
                # Ship the record up to the failure so callers can write
                # diagnostics for post-mortem analysis.
                err.partial = TrackingRun(times[:k + 1].copy(),
                                          states[:k + 1].copy(),
                                          refs[:k + 1].copy(), diags)
                raise err
    t = n_ctrl * dt_ctrl
    times[n_ctrl] = t
    states[n_ctrl] = y
    refs[n_ctrl] = (ref.x(t), ref.y(t), ref.z(t), ref.psi(t))
    return TrackingRun(times, states, refs, diags)


@dataclass
class InnerLoopRun:
    """Continuous inner-loop closed-loop record for stability analysis."""

    times: np.ndarray
    s: np.ndarray            # (n, 8)
    e: np.ndarray            # (n, 4)
    delta: np.ndarray        # (n, 4)
    W: np.ndarray            # (n, 4)
    wdot_pred: np.ndarray    # (n, 4)


def simulate_inner_loop(gains: GainSet, refs: Sequence,
                        s0: np.ndarray, t_end: float,
                        dt: float = 1e-3) -> InnerLoopRun:
    """Integrate the learned inner dynamics under continuous backstepping.

    refs is a 4-tuple of RefChannel for (z, phi, theta, psi).  The control
    law is recomputed inside every RK4 stage, so the loop behaves as the
    continuous design it was derived as.
    """

    def targets(t: float):
        sd = tuple(r.f(t) for r in refs)
        sd_dot = tuple(r.df(t) for r in refs)
        sd_ddot = tuple(r.ddf(t) for r in refs)
        return sd, sd_dot, sd_ddot

    def rhs(t: float, s: np.ndarray) -> np.ndarray:
        sd, sd_dot, sd_ddot = targets(t)
        gamma_t = backstepping_virtual(s, sd, sd_dot, sd_ddot, gains)
        f = solve_virtual_controls(gamma_t, s)
        return inner_dynamics(s, f)

    n = int(round(t_end / dt))
    times = np.empty(n + 1)
    S = np.empty((n + 1, 8))
    E = np.empty((n + 1, 4))
    D = np.empty((n + 1, 4))
    W = np.empty((n + 1, 4))
    WD = np.empty((n + 1, 4))

    c_err = np.array([gains.c(i + 1) for i in range(4)])
    c_rate = np.array([gains.c(i + 5) for i in range(4)])
    s = np.asarray(s0, dtype=float).copy()
    for k in range(n + 1):
        t = k * dt
        sd, sd_dot, _ = targets(t)
        e, delta = tracking_errors(s, sd, sd_dot, gains)
        times[k] = t
        S[k] = s
        E[k] = e
        D[k] = delta
        W[k] = 0.5 * (e * e + delta * delta)
        WD[k] = -c_err * e * e - c_rate * delta * delta
        if k < n:
            s = rk4_step(rhs, t, s, dt)
    return InnerLoopRun(times, S, E, D, W, WD)
