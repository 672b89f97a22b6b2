"""Quadrotor dynamics discovery and learned-model tracking control."""

__version__ = "0.1.0"

from .types import (  # noqa: F401
    GainSet,
    GimbalLockError,
    InnerState,
    PlantParams,
    RefChannel,
    Reference,
    RotorCommand,
    State,
    VirtualControl,
    euler_rate_transform,
    euler_rate_transform_dot,
    euler_rate_transform_inv,
    wrap_angle,
)
