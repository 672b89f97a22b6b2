"""Analytic flight-dynamics model identified from data.

Nine acceleration/rate channels expressed in closed form with fixed
numeric coefficients (the output of a symbolic-regression fit on the
reference airframe).  The model is deliberately kept exactly as
identified, including its small biases, because the tracking controller
is derived from these expressions and not from the physical plant.

Every channel is also exported as expression text in the engine's
grammar; the text and the closed-form functions are required to agree to
machine precision (see EXPRESSIONS).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import (
    GIMBAL_MARGIN,
    GimbalLockError,
    RotorCommand,
    State,
)

# Coefficient groups, named by the role they play.  The x/tilt group enters
# its law negated.
X_THRUST_U1 = 0.00768
X_THRUST_U2U4 = 1.63e-5
X_TILT_U1 = 0.00665
Y_THRUST_U1 = 7.87e-6
Y_THRUST_REST = 7.78e-6
Y_BIAS = -0.0441
GRAVITY_FIT = 9.44
THRUST_FIT = 6.9e-6
VERT_DRAG_FIT = 0.000289
ROLL_GYRO = 0.697
ROLL_ARM = 8.33e-5
PITCH_GYRO = -0.708
PITCH_ARM = 8.03e-5
YAW_GYRO = 0.0219
YAW_ARM = 4.86e-6

# Per-rotor speed at which the identified heave law balances: sum of
# squared speeds = GRAVITY_FIT / THRUST_FIT.
LEARNED_HOVER_SPEED = math.sqrt(GRAVITY_FIT / THRUST_FIT / 4.0)


def accel_x(phi, theta, psi, u1, u2, u4):
    """Identified inertial x acceleration."""
    return (-0.00768 * u1 * np.sin(phi) * np.sin(psi)
            - 1.63e-5 * u2 * u4 * np.sin(phi) * np.sin(psi)
            - 0.00665 * theta * u1 * np.cos(phi) * np.cos(psi)
            - 1.63e-5 * theta * u2 * u4 * np.cos(phi) * np.cos(psi))


def accel_y(phi, psi, u1, u2, u3, u4):
    """Identified inertial y acceleration (note the constant stand bias)."""
    return (7.87e-6 * (u1 * u1) * np.sin(phi + psi)
            + 7.78e-6 * (u2 * u2 + u3 * u3 + u4 * u4) * np.sin(phi + psi)
            - 0.0441)


def accel_z(phi, vz, u1, u2, u3, u4):
    """Identified vertical acceleration (gravity positive, thrust up)."""
    return (9.44
            - 6.9e-6 * np.cos(phi) * (u1 * u1 + u2 * u2 + u3 * u3 + u4 * u4)
            - 0.000289 * (vz * vz))


def euler_rate_phi(phi, theta, wx, wy, wz):
    return (wx
            + np.sin(phi) * np.sin(theta) / np.cos(theta) * wy
            + np.cos(phi) * np.sin(theta) / np.cos(theta) * wz)


def euler_rate_theta(phi, wy, wz):
    return np.cos(phi) * wy - np.sin(phi) * wz


def euler_rate_psi(phi, theta, wy, wz):
    return np.sin(phi) / np.cos(theta) * wy + np.cos(phi) / np.cos(theta) * wz


def rate_dot_x(wy, wz, u1, u2, u3, u4):
    """Identified roll-rate dynamics."""
    return (0.697 * wy * wz
            + 8.33e-5 * (u2 * u2 + u3 * u3 - u1 * u1 - u4 * u4))


def rate_dot_y(wx, wz, u1, u2, u3, u4):
    """Identified pitch-rate dynamics."""
    return (-0.708 * wx * wz
            + 8.03e-5 * (u1 * u1 + u3 * u3 - u2 * u2 - u4 * u4))


def rate_dot_z(wx, wy, u1, u2, u3, u4):
    """Identified yaw-rate dynamics."""
    return (0.0219 * wx * wy
            + 4.86e-6 * (u1 * u1 + u2 * u2 - u3 * u3 - u4 * u4))


# Expression-text form of each channel, in the regression engine's grammar
# (feature names as in the dataset columns).  Tests hold these to machine
# agreement with the closed-form functions above.
EXPRESSIONS: dict[str, str] = {
    "ax": ("-0.00768*u1*sin(phi)*sin(psi) - 1.63e-5*u2*u4*sin(phi)*sin(psi)"
           " - 0.00665*theta*u1*cos(phi)*cos(psi)"
           " - 1.63e-5*theta*u2*u4*cos(phi)*cos(psi)"),
    "ay": ("7.87e-6*u1^2*sin(phi+psi)"
           " + 7.78e-6*(u2^2 + u3^2 + u4^2)*sin(phi+psi) - 0.0441"),
    "az": ("9.44 - 6.9e-6*cos(phi)*(u1^2 + u2^2 + u3^2 + u4^2)"
           " - 0.000289*vz^2"),
    "phidot": ("wx + sin(phi)*sin(theta)/cos(theta)*wy"
               " + cos(phi)*sin(theta)/cos(theta)*wz"),
    "thetadot": "cos(phi)*wy - sin(phi)*wz",
    "psidot": "sin(phi)/cos(theta)*wy + cos(phi)/cos(theta)*wz",
    "dwx": "0.697*wy*wz + 8.33e-5*(u2^2 + u3^2 - u1^2 - u4^2)",
    "dwy": "-0.708*wx*wz + 8.03e-5*(u1^2 + u3^2 - u2^2 - u4^2)",
    "dwz": "0.0219*wx*wy + 4.86e-6*(u1^2 + u2^2 - u3^2 - u4^2)",
}


def evaluate_channel(name: str, cols: dict) -> np.ndarray:
    """Evaluate one identified channel from named state/input columns."""
    c = cols
    if name == "ax":
        return accel_x(c["phi"], c["theta"], c["psi"],
                       c["u1"], c["u2"], c["u4"])
    if name == "ay":
        return accel_y(c["phi"], c["psi"], c["u1"], c["u2"], c["u3"], c["u4"])
    if name == "az":
        return accel_z(c["phi"], c["vz"], c["u1"], c["u2"], c["u3"], c["u4"])
    if name == "phidot":
        return euler_rate_phi(c["phi"], c["theta"], c["wx"], c["wy"], c["wz"])
    if name == "thetadot":
        return euler_rate_theta(c["phi"], c["wy"], c["wz"])
    if name == "psidot":
        return euler_rate_psi(c["phi"], c["theta"], c["wy"], c["wz"])
    if name == "dwx":
        return rate_dot_x(c["wy"], c["wz"], c["u1"], c["u2"], c["u3"], c["u4"])
    if name == "dwy":
        return rate_dot_y(c["wx"], c["wz"], c["u1"], c["u2"], c["u3"], c["u4"])
    if name == "dwz":
        return rate_dot_z(c["wx"], c["wy"], c["u1"], c["u2"], c["u3"], c["u4"])
    raise ValueError(f"unknown learned channel {name!r}")


def learned_derivative(state: State, u: RotorCommand) -> np.ndarray:
    """12-state time derivative under the identified dynamics."""
    return _derivative_array(state.as_array(), u.as_array())


def _derivative_array(y: np.ndarray, u: np.ndarray) -> np.ndarray:
    phi, theta, psi = y[6], y[7], y[8]
    wx, wy, wz = y[9], y[10], y[11]
    if abs(theta) >= math.pi / 2.0 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {theta} too close to +-pi/2")
    u1, u2, u3, u4 = u[0], u[1], u[2], u[3]
    return np.array([
        y[3], y[4], y[5],
        float(accel_x(phi, theta, psi, u1, u2, u4)),
        float(accel_y(phi, psi, u1, u2, u3, u4)),
        float(accel_z(phi, y[5], u1, u2, u3, u4)),
        float(euler_rate_phi(phi, theta, wx, wy, wz)),
        float(euler_rate_theta(phi, wy, wz)),
        float(euler_rate_psi(phi, theta, wy, wz)),
        float(rate_dot_x(wy, wz, u1, u2, u3, u4)),
        float(rate_dot_y(wx, wz, u1, u2, u3, u4)),
        float(rate_dot_z(wx, wy, u1, u2, u3, u4)),
    ])


@dataclass(frozen=True)
class LearnedModel:
    """Identified dynamics behind the same interface as the plant model."""

    def derivative(self, state: State, u: RotorCommand) -> np.ndarray:
        return learned_derivative(state, u)

    def derivative_array(self, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        return _derivative_array(y, u)

    def hover_command(self) -> RotorCommand:
        return RotorCommand.uniform(LEARNED_HOVER_SPEED)
