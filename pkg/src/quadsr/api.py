"""HTTP service exposing the pipeline: one endpoint per pipeline stage."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import service
from .config import ConfigError, RunConfig
from .plant import IntegrationError
from .types import GimbalLockError

app = FastAPI(
    title="quadsr",
    description="Quadrotor dynamics discovery by symbolic regression, "
                "model validation, and learned-model tracking control.",
    version="0.1.0",
)


class GenerateDataRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    out_dir: str


class FitRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    channel: str = "dwz"
    dataset_path: Optional[str] = None
    dataset_csv: Optional[str] = None
    out_dir: Optional[str] = None


class ValidateRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    out_dir: Optional[str] = None


class TrackRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    out_dir: Optional[str] = None


def _guarded(fn):
    try:
        return fn()
    except (IntegrationError, GimbalLockError) as e:
        raise HTTPException(status_code=500,
                            detail=f"numerical failure: {e}") from e
    except (ConfigError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e)) from e


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.get("/defaults", response_model=RunConfig)
def defaults() -> RunConfig:
    return RunConfig()


@app.post("/generate-data", response_model=service.GenerateDataResult)
def generate_data(req: GenerateDataRequest):
    return _guarded(lambda: service.run_generate_data(req.config, req.out_dir))


@app.post("/fit", response_model=service.FitResult)
def fit(req: FitRequest):
    return _guarded(lambda: service.run_fit(
        req.config, channel=req.channel, dataset_path=req.dataset_path,
        dataset_csv=req.dataset_csv, out_dir=req.out_dir))


@app.post("/validate", response_model=service.ValidateResult)
def validate(req: ValidateRequest):
    return _guarded(lambda: service.run_validate(req.config, req.out_dir))


@app.post("/track", response_model=service.TrackResult)
def track(req: TrackRequest):
    return _guarded(lambda: service.run_track(req.config, req.out_dir))
