# File: schemas/config_schema.py
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

from schemas.errors import ConfigError
from schemas.layer_schema import ContractionParams


class ThicknessConfig(BaseModel):
    level: float = Field(default=0.01, gt=0.0, lt=1.0, description="Density level lambda of the isosurfaces")
    k: float = Field(default=3.0, ge=1.0, description="Expansion factor applied to the half thickness")
    samples_per_interval: int = Field(default=64, ge=8, description="Uniform samples along each normal")
    bisection_iters: int = Field(default=20, ge=0)
    fallback_shift: float = Field(
        default=0.05,
        gt=0.0,
        description="Fallback half thickness: times sigma without a regularized surface, "
        "times the mean edge length without an unconstrained one",
    )
    strategy: Literal["adaptive", "regularized_only", "constant"] = "adaptive"
    constant_quantile: float = Field(default=0.5, ge=0.0, le=1.0)
    grow_steps: int = Field(default=10, ge=1)


class SamplingConfig(BaseModel):
    budget: int = Field(default=100_000, ge=1, description="Number of frosted Gaussians to sample")
    seed: int = Field(default=0, ge=0)
    uniform_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    contraction: Optional[ContractionParams] = None

    @field_validator("contraction", mode="before")
    @classmethod
    def _contraction(cls, value):
        if isinstance(value, dict):
            return ContractionParams(**value)
        return value


class RenderConfig(BaseModel):
    tile_size: int = Field(default=16, ge=1)
    alpha_min: float = Field(default=1.0 / 255.0, gt=0.0)
    alpha_max: float = Field(default=0.99, gt=0.0, le=1.0)
    transmittance_min: float = Field(default=1e-4, ge=0.0)
    dilation: float = Field(default=0.3, ge=0.0, description="Added to the 2D covariance diagonal")
    background: Optional[List[float]] = Field(
        default=None, description="Overrides the scene background when set"
    )


class OptimizerConfig(BaseModel):
    iterations: int = Field(default=2000, ge=0)
    lr_bary_logits: float = Field(default=2e-3, ge=0.0)
    lr_log_scales: float = Field(default=5e-3, ge=0.0)
    lr_rotations: float = Field(default=1e-3, ge=0.0)
    lr_opacity_logits: float = Field(default=5e-2, ge=0.0)
    lr_sh: float = Field(default=2.5e-3, ge=0.0)
    warmup_steps: int = Field(default=0, ge=0)
    lambda_dssim: float = Field(default=0.2, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)
    ema_window: int = Field(default=100, ge=1)
    log_every: int = Field(default=100, ge=1)


class DepthConfig(BaseModel):
    gamma: float = Field(default=100.0, gt=0.0)
    default_depth: int = Field(default=10, ge=1)
    quantile: float = Field(default=0.1, gt=0.0, le=1.0)


class DeformConfig(BaseModel):
    blend: Literal["log", "linear"] = Field(
        default="log",
        description="How corner transforms are mixed: log-space mean or linear average of the transformed axes",
    )
    strict: bool = Field(default=False, description="Raise on collapsed axes instead of falling back")


class FrostingConfig(BaseModel):
    """Top-level configuration, one section per stage."""

    thickness: ThicknessConfig = Field(default_factory=ThicknessConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    depth: DepthConfig = Field(default_factory=DepthConfig)
    deform: DeformConfig = Field(default_factory=DeformConfig)


DEFAULT_CONFIG_FILE = "frosting.yaml"


def load_config(path: Optional[Union[str, Path]] = None) -> FrostingConfig:
    """Read a YAML config; a missing default file just means defaults."""
    if path is None:
        default = Path(DEFAULT_CONFIG_FILE)
        if not default.exists():
            return FrostingConfig()
        path = default
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return FrostingConfig(**raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")
