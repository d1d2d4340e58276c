# File: schemas/scene_schema.py
from typing import Optional

import numpy as np
from pydantic import Field, field_validator, model_validator

from schemas.array_model import ArrayModel, as_vector
from schemas.errors import BadCellIndex
from schemas.frosted_schema import FrostedGaussians
from schemas.layer_schema import ContractionParams, FrostingLayer
from schemas.mesh_schema import TriMesh


class Camera(ArrayModel):
    """Pinhole camera. Camera space looks down +z with +y pointing down the image."""

    name: str = Field(default="camera")
    world_to_camera: np.ndarray = Field(description="(4, 4) rigid world->camera transform")
    fx: float = Field(gt=0.0)
    fy: float = Field(gt=0.0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    near: float = Field(default=0.01, gt=0.0)

    @field_validator("world_to_camera", mode="before")
    @classmethod
    def _matrix(cls, value):
        array = np.array(value, dtype=np.float64, copy=True)
        if array.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {array.shape}")
        array.setflags(write=False)
        return array

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        return -self.rotation.T @ self.translation


class Image(ArrayModel):
    """Linear RGB image with values in [0, 1]."""

    pixels: np.ndarray = Field(description="(H, W, 3) float64")

    @field_validator("pixels", mode="before")
    @classmethod
    def _pixels(cls, value):
        array = np.array(value, dtype=np.float64, copy=True)
        if array.ndim != 3 or array.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("image contains non-finite values")
        if array.size and (array.min() < 0.0 or array.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        array.setflags(write=False)
        return array

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


class FrostingScene(ArrayModel):
    """A mesh, its frosting layer, and the Gaussians living in the layer's cells."""

    mesh: TriMesh
    layer: FrostingLayer
    gaussians: FrostedGaussians
    background: np.ndarray = Field(default_factory=lambda: np.zeros(3))
    contraction: Optional[ContractionParams] = None
    seed: int = Field(default=0, ge=0)

    @field_validator("background", mode="before")
    @classmethod
    def _background(cls, value):
        return as_vector(value, 3, "background")

    @model_validator(mode="after")
    def _cells_exist(self):
        if len(self.gaussians):
            top = int(self.gaussians.cell_indices.max())
            if top >= self.layer.cell_count:
                raise BadCellIndex(top, self.layer.cell_count)
        return self

    @property
    def sh_degree(self) -> int:
        return self.gaussians.sh_degree

    def with_gaussians(self, gaussians: FrostedGaussians) -> "FrostingScene":
        return FrostingScene(
            mesh=self.mesh,
            layer=self.layer,
            gaussians=gaussians,
            background=self.background,
            contraction=self.contraction,
            seed=self.seed,
        )
