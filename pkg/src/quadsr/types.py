"""Core types shared across the quadrotor stack.

State conventions: the inertial Z axis points down (gravity is +Z, so
climbing means z decreasing), total rotor thrust acts along the negative
body Z axis, and attitude is ZYX Euler (roll phi, pitch theta, yaw psi).
Body rates (wx, wy, wz) follow the reference airframe's axis convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

# Pitch values this close to +-pi/2 are treated as gimbal lock.
GIMBAL_MARGIN = 1e-6

ROTOR_SPEED_MAX = 1000.0

STATE_FIELDS = ("x", "y", "z", "vx", "vy", "vz",
                "phi", "theta", "psi", "wx", "wy", "wz")


class GimbalLockError(ValueError):
    """Pitch too close to +-pi/2 for the Euler-rate map to be invertible."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]. Idempotent."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class State:
    """Full 12-dimensional rigid-body state.

    Attributes:
        x, y, z: inertial position [m] (z negative = above ground).
        vx, vy, vz: inertial velocity [m/s].
        phi, theta, psi: roll/pitch/yaw [rad]; roll and pitch must lie in
            the open interval (-pi/2, pi/2), yaw is wrapped to (-pi, pi].
        wx, wy, wz: body angular rates [rad/s].
    """

    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float
    phi: float
    theta: float
    psi: float
    wx: float
    wy: float
    wz: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"non-finite state component {f.name}={v!r}")
        half_pi = math.pi / 2.0
        if not (-half_pi < self.phi < half_pi):
            raise ValueError(f"roll out of (-pi/2, pi/2): {self.phi}")
        if not (-half_pi < self.theta < half_pi):
            raise ValueError(f"pitch out of (-pi/2, pi/2): {self.theta}")
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STATE_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "State":
        a = np.asarray(arr, dtype=float)
        if a.shape != (12,):
            raise ValueError(f"state vector must have shape (12,), got {a.shape}")
        return cls(*[float(v) for v in a])

    @classmethod
    def zero(cls) -> "State":
        return cls(*([0.0] * 12))


@dataclass(frozen=True)
class RotorCommand:
    """Rotor speed commands [rad/s], each in [0, 1000]."""

    u1: float
    u2: float
    u3: float
    u4: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"non-finite rotor command {f.name}={v!r}")
            if v < 0.0 or v > ROTOR_SPEED_MAX:
                raise ValueError(
                    f"rotor command {f.name}={v} outside [0, {ROTOR_SPEED_MAX}]")

    def as_array(self) -> np.ndarray:
        return np.array([self.u1, self.u2, self.u3, self.u4], dtype=float)

    @classmethod
    def saturated(cls, u1: float, u2: float, u3: float, u4: float) -> "RotorCommand":
        """Build a command with each speed clipped into [0, 1000]."""
        clip = lambda v: min(max(v, 0.0), ROTOR_SPEED_MAX)
        return cls(clip(u1), clip(u2), clip(u3), clip(u4))

    @classmethod
    def uniform(cls, u: float) -> "RotorCommand":
        return cls(u, u, u, u)


@dataclass(frozen=True)
class VirtualControl:
    """Virtual control vector (f1..f4) in squared-rotor-speed space.

    f1 is the collective sum of squared speeds; f2/f3/f4 are the roll,
    pitch and yaw mixing combinations.  A demand is only realizable by
    non-negative squared speeds when f1 >= 0 and f1 >= |f2|, |f3|, |f4|;
    that is deliberately not enforced here because allocation must be able
    to receive (and clamp, with a flag) infeasible demands.
    """

    f1: float
    f2: float
    f3: float
    f4: float

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"non-finite virtual control {f.name}")

    def as_array(self) -> np.ndarray:
        return np.array([self.f1, self.f2, self.f3, self.f4], dtype=float)

    @property
    def is_feasible(self) -> bool:
        return (self.f1 >= 0.0
                and self.f1 >= abs(self.f2)
                and self.f1 >= abs(self.f3)
                and self.f1 >= abs(self.f4))


@dataclass(frozen=True)
class InnerState:
    """Inner-loop coordinates: heave and attitude plus their time rates.

    The rate entries are Euler-angle rates (phidot, not wx), i.e. the state
    after applying the body-rate-to-Euler-rate map.
    """

    z: float
    phi: float
    theta: float
    psi: float
    zdot: float
    phidot: float
    thetadot: float
    psidot: float

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"non-finite inner state {f.name}")
        half_pi = math.pi / 2.0
        if not (-half_pi < self.theta < half_pi):
            raise ValueError(f"pitch out of (-pi/2, pi/2): {self.theta}")

    @classmethod
    def from_state(cls, s: State) -> "InnerState":
        rates = euler_rate_transform(s.phi, s.theta) @ np.array([s.wx, s.wy, s.wz])
        return cls(s.z, s.phi, s.theta, s.psi, s.vz,
                   float(rates[0]), float(rates[1]), float(rates[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.z, self.phi, self.theta, self.psi,
                         self.zdot, self.phidot, self.thetadot, self.psidot],
                        dtype=float)


@dataclass(frozen=True)
class GainSet:
    """Controller gains: outer-loop PI pairs plus backstepping c1..c8.

    c1..c4 weight the tracking errors of (z, phi, theta, psi); c5..c8
    weight the corresponding rate errors.  All gains must be positive.
    """

    kpx: float
    kix: float
    kpy: float
    kiy: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    c8: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"gain {f.name}={v!r} must be positive and finite")

    @classmethod
    def tracking_defaults(cls) -> "GainSet":
        """Gains used by the tracking experiments.

        The inner-loop c values are the benchmark set; the outer PI pair
        was tuned here for a critically damped position loop.
        """
        return cls(kpx=4.5, kix=5.0625, kpy=4.5, kiy=5.0625,
                   c1=11.52, c2=28.00, c3=16.63, c4=6.54,
                   c5=8.40, c6=27.50, c7=15.54, c8=5.49)

    def c(self, i: int) -> float:
        """Backstepping gain by 1-based index (1..8)."""
        return getattr(self, f"c{i}")


@dataclass(frozen=True)
class PlantParams:
    """Physical airframe constants.

    Defaults are the 1.4 kg X-frame testbed used throughout: inertia
    [kg m^2], arm radius d [m], thrust and torque coefficients ct/cm
    mapping squared rotor speed to force/torque.  bias_y is a small
    constant lateral acceleration offset of the test stand; kz_drag a
    quadratic vertical drag coefficient.  Both may be zeroed.
    """

    m: float = 1.4
    g: float = 9.8
    jxx: float = 0.0211
    jyy: float = 0.0219
    jzz: float = 0.0366
    d: float = 0.2250
    ct: float = 1.105e-5
    cm: float = 1.779e-7
    bias_y: float = -0.0441
    kz_drag: float = 2.89e-4

    def __post_init__(self):
        for name in ("m", "g", "jxx", "jyy", "jzz", "d", "ct", "cm"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"plant parameter {name}={v!r} must be positive")
        if not math.isfinite(self.bias_y):
            raise ValueError("bias_y must be finite")
        if not (math.isfinite(self.kz_drag) and self.kz_drag >= 0.0):
            raise ValueError("kz_drag must be finite and >= 0")

    @property
    def hover_speed(self) -> float:
        """Per-rotor speed that exactly cancels gravity at level attitude."""
        return math.sqrt(self.m * self.g / (4.0 * self.ct))


@dataclass(frozen=True)
class RefChannel:
    """One reference channel: value plus first and second time derivative."""

    f: Callable[[float], float]
    df: Callable[[float], float]
    ddf: Callable[[float], float]

    def __call__(self, t: float) -> float:
        return self.f(t)

    @classmethod
    def constant(cls, v: float) -> "RefChannel":
        return cls(lambda t: v, lambda t: 0.0, lambda t: 0.0)

    @classmethod
    def ramp(cls, rate: float, offset: float = 0.0) -> "RefChannel":
        return cls(lambda t: offset + rate * t, lambda t: rate, lambda t: 0.0)

    @classmethod
    def sinusoid(cls, amp: float, omega: float, phase: float = 0.0,
                 offset: float = 0.0) -> "RefChannel":
        return cls(
            lambda t: offset + amp * math.sin(omega * t + phase),
            lambda t: amp * omega * math.cos(omega * t + phase),
            lambda t: -amp * omega * omega * math.sin(omega * t + phase),
        )


@dataclass(frozen=True)
class Reference:
    """Trajectory reference: x, y, z position channels plus yaw."""

    x: RefChannel
    y: RefChannel
    z: RefChannel
    psi: RefChannel


def euler_rate_transform(phi: float, theta: float) -> np.ndarray:
    """Matrix mapping body rates (wx, wy, wz) to Euler rates.

    Raises GimbalLockError when |theta| is within GIMBAL_MARGIN of pi/2,
    where the map blows up (its determinant is 1/cos(theta)).
    """
    if abs(theta) >= math.pi / 2.0 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {theta} too close to +-pi/2")
    sp, cp = math.sin(phi), math.cos(phi)
    tt = math.tan(theta)
    ct = math.cos(theta)
    return np.array([
        [1.0, sp * tt, cp * tt],
        [0.0, cp, -sp],
        [0.0, sp / ct, cp / ct],
    ])


def euler_rate_transform_inv(phi: float, theta: float) -> np.ndarray:
    """Closed-form inverse map: Euler rates back to body rates."""
    if abs(theta) >= math.pi / 2.0 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {theta} too close to +-pi/2")
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    return np.array([
        [1.0, 0.0, -st],
        [0.0, cp, sp * ct],
        [0.0, -sp, cp * ct],
    ])


def euler_rate_transform_dot(phi: float, theta: float,
                             phidot: float, thetadot: float) -> np.ndarray:
    """Time derivative of euler_rate_transform along (phidot, thetadot)."""
    if abs(theta) >= math.pi / 2.0 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {theta} too close to +-pi/2")
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    tt = st / ct
    sec2 = 1.0 / (ct * ct)
    return np.array([
        [0.0,
         cp * phidot * tt + sp * sec2 * thetadot,
         -sp * phidot * tt + cp * sec2 * thetadot],
        [0.0, -sp * phidot, -cp * phidot],
        [0.0,
         cp * phidot / ct + sp * tt * thetadot / ct,
         -sp * phidot / ct + cp * tt * thetadot / ct],
    ])
