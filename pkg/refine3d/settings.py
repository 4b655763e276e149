"""
Configuration - environment settings and the JSON run configuration
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from refine3d.errors import ConfigError

load_dotenv()


class Settings(BaseModel):
    threads: int = Field(0, ge=0)
    log_level: str = "INFO"
    debug: bool = False


def debug_from_env() -> bool:
    return os.getenv("REFINE3D_DEBUG", "").strip().lower() in ("1", "true", "yes", "on")


def get_settings() -> Settings:
    """Read the environment on every call so tests and subprocesses see fresh values"""
    raw_threads = os.getenv("REFINE3D_THREADS", "0").strip() or "0"
    try:
        threads = int(raw_threads)
    except ValueError:
        raise ConfigError(f"REFINE3D_THREADS must be an integer, got {raw_threads!r}")
    try:
        return Settings(
            threads=threads,
            log_level=os.getenv("REFINE3D_LOG_LEVEL", "INFO").strip().upper() or "INFO",
            debug=debug_from_env(),
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid environment settings: {e}")


def worker_count(settings: Optional[Settings] = None) -> int:
    """Worker threads to use; 0 in the environment means one per CPU"""
    settings = settings or get_settings()
    if settings.threads > 0:
        return settings.threads
    return os.cpu_count() or 1


class RunConfig(BaseModel):
    """
    Training / evaluation run configuration.

    Loaded from a UTF-8 JSON file; unknown keys are rejected. CLI flags override file values.
    """
    model_config = ConfigDict(extra="forbid")

    preset: Literal["paper", "desk"] = "desk"
    seed: int = Field(0, ge=0)
    batch_size: int = Field(4, ge=1)
    phase1_steps: int = Field(2000, ge=0)
    phase2_steps: int = Field(1000, ge=0)
    # counted in A/B pairs
    phase3_steps: int = Field(1000, ge=0)
    joint_steps: int = Field(2000, ge=0)
    views_max: int = Field(4, ge=1)
    threshold: float = Field(0.25, gt=0.0, lt=1.0)
    lr: float = Field(0.001, ge=0.0)
    lr_decay_epochs: int = Field(150, ge=1)
    lr_decay_factor: float = Field(2.0, gt=0.0)
    lr_decay_mode: Literal["once", "every"] = "once"
    steps_per_epoch: Optional[int] = Field(None, ge=1)
    eval_every: int = Field(50, ge=1)
    patience: int = Field(10, ge=1)
    min_delta: float = Field(1e-4, ge=0.0)
    data: Optional[str] = None
    out: Optional[str] = None
    metrics: Optional[str] = None

    @model_validator(mode="after")
    def _check_views(self) -> "RunConfig":
        if self.views_max < 2 and (self.phase2_steps > 0 or self.phase3_steps > 0):
            raise ValueError("views_max must be >= 2 when multi-view phases have a step budget")
        return self


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load a RunConfig from `path` (if given) and apply non-None `overrides`"""
    values: Dict[str, Any] = {}
    if path:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(values, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}")
