# File: schemas/gaussian_schema.py
from enum import Enum
from typing import List, Sequence

import numpy as np
from pydantic import Field, field_validator, model_validator

from schemas.array_model import ArrayModel, as_array, as_vector
from schemas.errors import DegreeMismatch, EmptyCloud

MAX_SH_DEGREE = 3


def sh_coefficient_count(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_for_count(count: int) -> int:
    for degree in range(MAX_SH_DEGREE + 1):
        if sh_coefficient_count(degree) == count:
            return degree
    raise DegreeMismatch(expected=sh_coefficient_count(MAX_SH_DEGREE), got=count)


class CloudRole(str, Enum):
    unconstrained = "unconstrained"
    regularized = "regularized"


class Gaussian3D(ArrayModel):
    """One anisotropic 3D Gaussian with raw (unactivated) parameters."""

    mean: np.ndarray = Field(description="Center in world space, shape (3,)")
    log_scales: np.ndarray = Field(description="Per-axis log standard deviations, shape (3,)")
    rotation: np.ndarray = Field(
        description="Unnormalized quaternion (w, x, y, z); normalized before use"
    )
    opacity_logit: float = Field(description="Opacity before the sigmoid")
    sh: np.ndarray = Field(
        description="SH coefficients, shape ((deg+1)^2, 3), DC term first"
    )
    sh_degree: int = Field(ge=0, le=MAX_SH_DEGREE)

    @field_validator("mean", "log_scales", mode="before")
    @classmethod
    def _three_vector(cls, value, info):
        return as_vector(value, 3, info.field_name)

    @field_validator("rotation", mode="before")
    @classmethod
    def _quaternion(cls, value):
        return as_vector(value, 4, "rotation")

    @field_validator("sh", mode="before")
    @classmethod
    def _sh_rows(cls, value):
        array = np.array(value, dtype=np.float64, copy=True)
        if array.ndim == 1:
            if array.shape[0] % 3 != 0:
                raise DegreeMismatch(expected=-1, got=array.shape[0])
            array = array.reshape(-1, 3)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _sh_matches_degree(self):
        expected = sh_coefficient_count(self.sh_degree)
        if self.sh.shape != (expected, 3):
            raise DegreeMismatch(expected=3 * expected, got=int(self.sh.size))
        return self

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)


class GaussianCloud(ArrayModel):
    """Struct-of-arrays set of Gaussians sharing one SH degree and one role."""

    means: np.ndarray = Field(description="(N, 3)")
    log_scales: np.ndarray = Field(description="(N, 3)")
    rotations: np.ndarray = Field(description="(N, 4) raw quaternions (w, x, y, z)")
    opacity_logits: np.ndarray = Field(description="(N,)")
    sh: np.ndarray = Field(description="(N, (deg+1)^2, 3)")
    sh_degree: int = Field(ge=0, le=MAX_SH_DEGREE)
    role: CloudRole = Field(default=CloudRole.unconstrained)

    @field_validator("means", "log_scales", mode="before")
    @classmethod
    def _rows3(cls, value, info):
        return as_array(value, (3,), info.field_name)

    @field_validator("rotations", mode="before")
    @classmethod
    def _rows4(cls, value):
        return as_array(value, (4,), "rotations")

    @field_validator("opacity_logits", mode="before")
    @classmethod
    def _flat(cls, value):
        array = np.array(value, dtype=np.float64, copy=True).reshape(-1)
        array.setflags(write=False)
        return array

    @field_validator("sh", mode="before")
    @classmethod
    def _sh(cls, value):
        array = np.array(value, dtype=np.float64, copy=True)
        if array.ndim != 3 or array.shape[-1] != 3:
            raise ValueError(f"sh: expected shape (N, K, 3), got {array.shape}")
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _consistent(self):
        count = self.means.shape[0]
        if count == 0:
            raise EmptyCloud("a Gaussian cloud needs at least one Gaussian")
        for name in ("log_scales", "rotations", "opacity_logits", "sh"):
            if getattr(self, name).shape[0] != count:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, means has {count}")
        expected = sh_coefficient_count(self.sh_degree)
        if self.sh.shape[1] != expected:
            raise DegreeMismatch(expected=3 * expected, got=3 * self.sh.shape[1])
        return self

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, index: int) -> Gaussian3D:
        return Gaussian3D(
            mean=self.means[index],
            log_scales=self.log_scales[index],
            rotation=self.rotations[index],
            opacity_logit=float(self.opacity_logits[index]),
            sh=self.sh[index],
            sh_degree=self.sh_degree,
        )

    def __iter__(self):
        for index in range(len(self)):
            yield self[index]

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    @classmethod
    def from_gaussians(
        cls, gaussians: Sequence[Gaussian3D], role: CloudRole = CloudRole.unconstrained
    ) -> "GaussianCloud":
        if not gaussians:
            raise EmptyCloud("a Gaussian cloud needs at least one Gaussian")
        degrees = {g.sh_degree for g in gaussians}
        if len(degrees) != 1:
            raise DegreeMismatch(expected=min(degrees), got=max(degrees))
        return cls(
            means=np.stack([g.mean for g in gaussians]),
            log_scales=np.stack([g.log_scales for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            sh=np.stack([g.sh for g in gaussians]),
            sh_degree=degrees.pop(),
            role=role,
        )

    def to_list(self) -> List[Gaussian3D]:
        return list(self)
