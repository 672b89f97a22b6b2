"""Model-validation and tracking-quality metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def _paired(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("pred and truth must be equal-length 1-D arrays")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _paired(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(pred, truth) -> float:
    p, t = _paired(pred, truth)
    return float(np.mean(np.abs(p - t)))


def r2(pred, truth) -> float:
    """Coefficient of determination about the truth mean.

    Raises ValueError on zero-variance truth, where R^2 is undefined.
    """
    p, t = _paired(pred, truth)
    ss_tot = float(np.sum((t - np.mean(t)) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 undefined: truth has zero variance")
    ss_res = float(np.sum((p - t) ** 2))
    return 1.0 - ss_res / ss_tot


VALIDATION_CHANNELS = ("ax", "ay", "az", "dwx", "dwy", "dwz")


@dataclass
class ValidationReport:
    """Per-channel rmse/mae/r2 for a model-vs-plant comparison."""

    channels: dict[str, dict[str, float]]
    n_samples: int
    excitation: str

    def to_json(self) -> str:
        payload = {
            "channels": {name: {k: self.channels[name][k]
                                for k in ("rmse", "mae", "r2")}
                         for name in self.channels},
            "n_samples": self.n_samples,
            "excitation": self.excitation,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ValidationReport":
        d = json.loads(text)
        return cls(channels={k: dict(v) for k, v in d["channels"].items()},
                   n_samples=d["n_samples"], excitation=d["excitation"])


@dataclass(frozen=True)
class ChannelTracking:
    """Tracking summary for one output channel."""

    name: str
    band: float
    settling_time: float | None   # first time the error enters and stays in band
    steady_state_error: float     # |mean error| over the final 10% of the run
    max_abs_error: float

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "band": self.band,
            "settling_time": self.settling_time,
            "steady_state_error": self.steady_state_error,
            "max_abs_error": self.max_abs_error,
        }


def settling_time(times: np.ndarray, err: np.ndarray,
                  band: float) -> float | None:
    """First sample time after which |err| never leaves the band."""
    outside = np.abs(err) > band
    if not outside.any():
        return float(times[0])
    last_out = int(np.nonzero(outside)[0][-1])
    if last_out == len(err) - 1:
        return None
    return float(times[last_out + 1])


def max_abs_after(times: np.ndarray, err: np.ndarray, t0: float) -> float:
    """Largest |err| at times >= t0."""
    mask = np.asarray(times) >= t0
    if not mask.any():
        raise ValueError(f"no samples at or after t={t0}")
    return float(np.max(np.abs(np.asarray(err)[mask])))


def tracking_summary(times, errors: dict[str, np.ndarray],
                     bands: dict[str, float]) -> list[ChannelTracking]:
    """Summarize per-channel tracking errors over a run.

    Steady-state error is the absolute mean over the final 10% of the
    duration (at least one sample).
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("need at least two time samples")
    out = []
    duration = t[-1] - t[0]
    tail = t >= t[-1] - 0.1 * duration
    for name, err in errors.items():
        e = np.asarray(err, dtype=float)
        if e.shape != t.shape:
            raise ValueError(f"error channel {name} length mismatch")
        band = bands[name]
        out.append(ChannelTracking(
            name=name,
            band=band,
            settling_time=settling_time(t, e, band),
            steady_state_error=float(abs(np.mean(e[tail]))),
            max_abs_error=float(np.max(np.abs(e))),
        ))
    return out
