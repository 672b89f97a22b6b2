"""Run configuration: validated models, YAML round-trip, scenario presets."""

from __future__ import annotations

import math
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .control import OuterLoopSettings
from .sr.engine import SRConfig
from .types import GainSet, PlantParams, RefChannel, Reference


class ConfigError(ValueError):
    """Configuration could not be loaded or validated."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantConfig(_Strict):
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

    def to_params(self) -> PlantParams:
        return PlantParams(**self.model_dump())


class GainsConfig(_Strict):
    kpx: float = 4.5
    kix: float = 5.0625
    kpy: float = 4.5
    kiy: float = 5.0625
    c1: float = 11.52
    c2: float = 28.00
    c3: float = 16.63
    c4: float = 6.54
    c5: float = 8.40
    c6: float = 27.50
    c7: float = 15.54
    c8: float = 5.49

    def to_gains(self) -> GainSet:
        return GainSet(**self.model_dump())


class OuterConfig(_Strict):
    tilt_clamp: float = 0.6
    rate_limit: float = 3.0
    eps_denom: float = 1e-6
    filter_omega: float = 12.0
    filter_zeta: float = 1.0

    def to_settings(self) -> OuterLoopSettings:
        return OuterLoopSettings(**self.model_dump())


class SRSettings(_Strict):
    population_size: int = 500
    generations: int = 200
    tournament_size: int = 7
    p_crossover: float = 0.8
    p_mutation: float = 0.15
    p_const_jitter: float = 0.05
    max_depth: int = 12
    seed: Optional[int] = None          # falls back to the run seed
    include_sqrt: bool = False
    add_squared_inputs: bool = True
    linear_scaling: bool = True
    features: Optional[list[str]] = None
    early_stop_rel: float = 1e-6

    def to_engine_config(self, run_seed: int) -> SRConfig:
        return SRConfig(
            population_size=self.population_size,
            generations=self.generations,
            tournament_size=self.tournament_size,
            p_crossover=self.p_crossover,
            p_mutation=self.p_mutation,
            p_const_jitter=self.p_const_jitter,
            max_depth=self.max_depth,
            seed=self.seed if self.seed is not None else run_seed,
            include_sqrt=self.include_sqrt,
            linear_scaling=self.linear_scaling,
            early_stop_rel=self.early_stop_rel,
        )


class ExcitationConfig(_Strict):
    kind: Literal["test-sinusoid", "random-uniform"] = "random-uniform"
    lo: float = 0.0
    hi: float = 1000.0
    dwell: float = 0.05

    @model_validator(mode="after")
    def _check_range(self):
        if not (0.0 <= self.lo < self.hi <= 1000.0):
            raise ValueError(
                f"excitation range [{self.lo}, {self.hi}] outside [0, 1000]")
        if self.dwell <= 0.0:
            raise ValueError("dwell must be positive")
        return self


class DatasetConfig(_Strict):
    n_samples: int = 2000
    sample_dt: float = 5e-3
    dt: float = 1e-3
    segment_len: float = 0.1
    init_rate_scale: float = 4.0
    init_vz_scale: float = 6.0
    noise_sigma: float = 0.0
    dwell: float = 0.05
    ranges: list[tuple[float, float]] = Field(
        default_factory=lambda: [(0.0, 300.0), (0.0, 700.0),
                                 (0.0, 800.0), (0.0, 1000.0)])

    @model_validator(mode="after")
    def _check(self):
        for lo, hi in self.ranges:
            if not (0.0 <= lo < hi <= 1000.0):
                raise ValueError(
                    f"dataset range [{lo}, {hi}] outside [0, 1000]")
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        return self


class RefChannelConfig(_Strict):
    kind: Literal["constant", "ramp", "sinusoid"] = "constant"
    value: float = 0.0          # constant
    rate: float = 0.0           # ramp slope
    offset: float = 0.0         # ramp/sinusoid offset
    amp: float = 0.0            # sinusoid amplitude
    omega: float = 0.0          # sinusoid angular frequency
    phase: float = 0.0          # sinusoid phase

    def to_channel(self) -> RefChannel:
        if self.kind == "constant":
            return RefChannel.constant(self.value)
        if self.kind == "ramp":
            return RefChannel.ramp(self.rate, self.offset)
        return RefChannel.sinusoid(self.amp, self.omega, self.phase,
                                   self.offset)


class ScenarioConfig(_Strict):
    name: Literal["case1", "case2", "custom"] = "case1"
    duration: Optional[float] = None
    x: Optional[RefChannelConfig] = None
    y: Optional[RefChannelConfig] = None
    z: Optional[RefChannelConfig] = None
    psi: Optional[RefChannelConfig] = None

    @model_validator(mode="after")
    def _check(self):
        if self.name == "custom":
            missing = [n for n in ("x", "y", "z", "psi")
                       if getattr(self, n) is None]
            if missing:
                raise ValueError(
                    f"custom scenario needs channels: {', '.join(missing)}")
            if self.duration is None or self.duration <= 0.0:
                raise ValueError("custom scenario needs a positive duration")
        return self


class SimConfig(_Strict):
    dt_plant: float = 1e-3
    dt_ctrl: float = 5e-3
    validate_duration: float = 10.0
    validate_segment: float = 0.5

    @model_validator(mode="after")
    def _check(self):
        if self.dt_plant <= 0 or self.dt_ctrl <= 0:
            raise ValueError("time steps must be positive")
        sub = self.dt_ctrl / self.dt_plant
        if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
            raise ValueError("dt_ctrl must be a positive multiple of dt_plant")
        if self.validate_duration <= 0 or self.validate_segment <= 0:
            raise ValueError("validation durations must be positive")
        return self


class RunConfig(_Strict):
    seed: int = 0
    plant: PlantConfig = Field(default_factory=PlantConfig)
    gains: GainsConfig = Field(default_factory=GainsConfig)
    outer: OuterConfig = Field(default_factory=OuterConfig)
    sr: SRSettings = Field(default_factory=SRSettings)
    excitation: ExcitationConfig = Field(default_factory=ExcitationConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    sim: SimConfig = Field(default_factory=SimConfig)


def scenario_reference(sc: ScenarioConfig) -> tuple[Reference, float]:
    """Reference trajectory plus run duration for a scenario."""
    if sc.name == "case1":
        ref = Reference(
            x=RefChannel.sinusoid(3.0, 0.5, math.pi / 3.0),
            y=RefChannel.sinusoid(3.0, 0.5, -2.0 * math.pi / 3.0),
            z=RefChannel.ramp(-0.2),
            psi=RefChannel.constant(0.0),
        )
        return ref, sc.duration if sc.duration else 30.0
    if sc.name == "case2":
        ref = Reference(
            x=RefChannel.constant(2.0),
            y=RefChannel.constant(4.0),
            z=RefChannel.ramp(-0.3),
            psi=RefChannel.constant(0.0),
        )
        return ref, sc.duration if sc.duration else 12.0
    ref = Reference(x=sc.x.to_channel(), y=sc.y.to_channel(),
                    z=sc.z.to_channel(), psi=sc.psi.to_channel())
    return ref, float(sc.duration)


def load_config(path: Optional[str] = None) -> RunConfig:
    """Load a RunConfig from YAML (defaults when path is None)."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "r") as fh:
            raw = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw)}")
    try:
        return RunConfig.model_validate(raw)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def dump_config(cfg: RunConfig) -> str:
    """Canonical YAML serialization (sorted keys, stable formatting)."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True,
                          default_flow_style=False)
