# File: schemas/frosted_schema.py
from typing import Sequence

import numpy as np
from pydantic import Field, field_validator, model_validator

from schemas.array_model import ArrayModel, as_array, as_vector
from schemas.errors import DegreeMismatch
from schemas.gaussian_schema import MAX_SH_DEGREE, sh_coefficient_count

IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


class FrostedGaussian(ArrayModel):
    """A Gaussian whose center is a softmax-weighted mix of its cell's six corners."""

    cell_index: int = Field(ge=0)
    bary_logits: np.ndarray = Field(description="(6,) logits for outer0..2, inner0..2")
    log_scales: np.ndarray
    rotation: np.ndarray = Field(description="(4,) raw quaternion (w, x, y, z)")
    opacity_logit: float
    residual_rotation: np.ndarray = Field(
        default_factory=lambda: IDENTITY_QUATERNION.copy(),
        description="(4,) rotation applied to view directions before SH evaluation",
    )
    sh: np.ndarray
    sh_degree: int = Field(ge=0, le=MAX_SH_DEGREE)

    @field_validator("bary_logits", mode="before")
    @classmethod
    def _logits(cls, value):
        return as_vector(value, 6, "bary_logits")

    @field_validator("log_scales", mode="before")
    @classmethod
    def _scales(cls, value):
        return as_vector(value, 3, "log_scales")

    @field_validator("rotation", "residual_rotation", mode="before")
    @classmethod
    def _quaternion(cls, value, info):
        return as_vector(value, 4, info.field_name)

    @field_validator("sh", mode="before")
    @classmethod
    def _sh(cls, value):
        array = np.array(value, dtype=np.float64, copy=True).reshape(-1, 3)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _degree(self):
        expected = sh_coefficient_count(self.sh_degree)
        if self.sh.shape[0] != expected:
            raise DegreeMismatch(expected=3 * expected, got=int(self.sh.size))
        return self


class FrostedGaussians(ArrayModel):
    """Struct-of-arrays batch of frosted Gaussians. May be empty."""

    cell_indices: np.ndarray = Field(description="(N,) int64")
    bary_logits: np.ndarray = Field(description="(N, 6)")
    log_scales: np.ndarray = Field(description="(N, 3)")
    rotations: np.ndarray = Field(description="(N, 4)")
    opacity_logits: np.ndarray = Field(description="(N,)")
    residual_rotations: np.ndarray = Field(description="(N, 4)")
    sh: np.ndarray = Field(description="(N, (deg+1)^2, 3)")
    sh_degree: int = Field(ge=0, le=MAX_SH_DEGREE)

    @field_validator("cell_indices", mode="before")
    @classmethod
    def _cells(cls, value):
        array = np.array(value, dtype=np.int64, copy=True).reshape(-1)
        array.setflags(write=False)
        return array

    @field_validator("opacity_logits", mode="before")
    @classmethod
    def _opacity(cls, value):
        array = np.array(value, dtype=np.float64, copy=True).reshape(-1)
        array.setflags(write=False)
        return array

    @field_validator("bary_logits", mode="before")
    @classmethod
    def _logits(cls, value):
        return as_array(value, (6,), "bary_logits")

    @field_validator("log_scales", mode="before")
    @classmethod
    def _scales(cls, value):
        return as_array(value, (3,), "log_scales")

    @field_validator("rotations", "residual_rotations", mode="before")
    @classmethod
    def _quaternions(cls, value, info):
        return as_array(value, (4,), info.field_name)

    @field_validator("sh", mode="before")
    @classmethod
    def _sh(cls, value):
        array = np.array(value, dtype=np.float64, copy=True)
        if array.size == 0:
            array = array.reshape(0, 0, 3)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _consistent(self):
        count = self.cell_indices.shape[0]
        expected = sh_coefficient_count(self.sh_degree)
        if count == 0:
            # EMPTY BATCHES CARRY THE RIGHT COEFFICIENT AXIS FOR THEIR DEGREE
            sh = np.zeros((0, expected, 3))
            sh.setflags(write=False)
            object.__setattr__(self, "sh", sh)
        elif self.sh.ndim != 3 or self.sh.shape[1:] != (expected, 3):
            raise DegreeMismatch(expected=3 * expected, got=int(self.sh[0].size))
        if count and self.cell_indices.min() < 0:
            raise ValueError("cell indices must be non-negative")
        for name in ("bary_logits", "log_scales", "rotations", "opacity_logits", "residual_rotations", "sh"):
            if getattr(self, name).shape[0] != count:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {count}")
        return self

    def __len__(self) -> int:
        return self.cell_indices.shape[0]

    def __getitem__(self, index: int) -> FrostedGaussian:
        return FrostedGaussian(
            cell_index=int(self.cell_indices[index]),
            bary_logits=self.bary_logits[index],
            log_scales=self.log_scales[index],
            rotation=self.rotations[index],
            opacity_logit=float(self.opacity_logits[index]),
            residual_rotation=self.residual_rotations[index],
            sh=self.sh[index],
            sh_degree=self.sh_degree,
        )

    def __iter__(self):
        for index in range(len(self)):
            yield self[index]

    @classmethod
    def from_list(cls, gaussians: Sequence[FrostedGaussian], sh_degree: int = None) -> "FrostedGaussians":
        if not gaussians:
            return cls.empty(sh_degree or 0)
        degree = gaussians[0].sh_degree if sh_degree is None else sh_degree
        if any(g.sh_degree != degree for g in gaussians):
            raise DegreeMismatch(expected=degree, got=-1)
        return cls(
            cell_indices=[g.cell_index for g in gaussians],
            bary_logits=np.stack([g.bary_logits for g in gaussians]),
            log_scales=np.stack([g.log_scales for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            opacity_logits=[g.opacity_logit for g in gaussians],
            residual_rotations=np.stack([g.residual_rotation for g in gaussians]),
            sh=np.stack([g.sh for g in gaussians]),
            sh_degree=degree,
        )

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "FrostedGaussians":
        k = sh_coefficient_count(sh_degree)
        return cls(
            cell_indices=np.zeros(0, dtype=np.int64),
            bary_logits=np.zeros((0, 6)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros(0),
            residual_rotations=np.zeros((0, 4)),
            sh=np.zeros((0, k, 3)),
            sh_degree=sh_degree,
        )

    def replace(self, **arrays) -> "FrostedGaussians":
        """Validated copy with some arrays swapped out."""
        fields = {name: getattr(self, name) for name in type(self).model_fields}
        fields.update(arrays)
        return FrostedGaussians(**fields)

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))
