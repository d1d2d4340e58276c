# File: schemas/layer_schema.py
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from schemas.array_model import ArrayModel, as_array, as_vector
from schemas.errors import InvariantViolation
from schemas.mesh_schema import TriMesh


class VertexShiftRecord(BaseModel):
    """Everything the thickness estimator derived for one mesh vertex."""

    sigma: float = Field(ge=0.0, description="Std of the nearest regularized Gaussian along the normal")
    interval_I: Tuple[float, float] = Field(description="Search interval [-3 sigma, 3 sigma]")
    eps_in: float = Field(description="Lower end of the regularized isosurface interval")
    eps_out: float = Field(description="Upper end of the regularized isosurface interval")
    eps_mid: float
    eps_half: float = Field(ge=0.0)
    interval_J: Tuple[float, float] = Field(description="[eps_mid - k eps_half, eps_mid + k eps_half]")
    delta_in: float = Field(description="Inner shift along the normal")
    delta_out: float = Field(description="Outer shift along the normal")
    k: float = Field(default=3.0, gt=0.0)
    regularized_fallback: bool = Field(
        default=False, description="No regularized density reached the level set inside I"
    )
    unconstrained_fallback: bool = Field(
        default=False, description="No unconstrained density reached the level set inside J"
    )

    @model_validator(mode="after")
    def _invariants(self):
        lo, hi = self.interval_I
        if lo != -hi:
            raise InvariantViolation(f"search interval {self.interval_I} is not symmetric")
        if self.eps_in > self.eps_out:
            raise InvariantViolation(f"eps_in {self.eps_in} > eps_out {self.eps_out}")
        expected_j = (self.eps_mid - self.k * self.eps_half, self.eps_mid + self.k * self.eps_half)
        if tuple(self.interval_J) != expected_j:
            raise InvariantViolation(f"interval_J {self.interval_J} != {expected_j}")
        j_lo, j_hi = self.interval_J
        if not (j_lo <= self.delta_in <= self.delta_out <= j_hi):
            raise InvariantViolation(
                f"shifts ({self.delta_in}, {self.delta_out}) not ordered inside J {self.interval_J}"
            )
        return self

    @property
    def thickness(self) -> float:
        return self.delta_out - self.delta_in


class ContractionParams(ArrayModel):
    """Center and radius of the unbounded-scene contraction."""

    center: np.ndarray = Field(description="(3,) contraction center")
    radius: float = Field(gt=0.0, description="Radius l of the identity region")

    @field_validator("center", mode="before")
    @classmethod
    def _center(cls, value):
        return as_vector(value, 3, "center")

    def to_dict(self) -> dict:
        return {"center": [float(c) for c in self.center], "radius": float(self.radius)}


class PrismaticCell(ArrayModel):
    """Six-corner cell above one face.

    Corner order matches the barycentric coordinates of a frosted Gaussian:
    outer corners (v + delta_out n) for the face's three vertices, then inner corners.
    """

    face_index: int = Field(ge=0)
    corners: np.ndarray = Field(description="(6, 3): outer0, outer1, outer2, inner0, inner1, inner2")
    volume: float = Field(ge=0.0)

    @field_validator("corners", mode="before")
    @classmethod
    def _corners(cls, value):
        array = as_array(value, (3,), "corners")
        if array.shape[0] != 6:
            raise ValueError(f"a cell has 6 corners, got {array.shape[0]}")
        return array

    @property
    def outer(self) -> np.ndarray:
        return self.corners[:3]

    @property
    def inner(self) -> np.ndarray:
        return self.corners[3:]

    @property
    def center(self) -> np.ndarray:
        return self.corners.mean(axis=0)


class FrostingLayer(ArrayModel):
    """Inner/outer shifted copies of a mesh and the cells between them."""

    mesh: TriMesh
    delta_in: np.ndarray = Field(description="(V,) inner shifts")
    delta_out: np.ndarray = Field(description="(V,) outer shifts")
    corners: np.ndarray = Field(description="(F, 6, 3) cell corners")
    volumes: np.ndarray = Field(description="(F,) cell volumes")

    @field_validator("delta_in", "delta_out", "volumes", mode="before")
    @classmethod
    def _flat(cls, value):
        array = np.array(value, dtype=np.float64, copy=True).reshape(-1)
        array.setflags(write=False)
        return array

    @field_validator("corners", mode="before")
    @classmethod
    def _corner_block(cls, value):
        return as_array(value, (6, 3), "corners")

    @model_validator(mode="after")
    def _sizes(self):
        vertex_count = self.mesh.vertex_count
        if self.delta_in.shape[0] != vertex_count or self.delta_out.shape[0] != vertex_count:
            raise InvariantViolation("shift arrays must have one entry per vertex")
        if self.corners.shape[0] != self.mesh.face_count or self.volumes.shape[0] != self.mesh.face_count:
            raise InvariantViolation("one cell per face is required")
        return self

    @property
    def cell_count(self) -> int:
        return self.corners.shape[0]

    @property
    def inner_vertices(self) -> np.ndarray:
        return self.mesh.vertices + self.delta_in[:, None] * self.mesh.normals

    @property
    def outer_vertices(self) -> np.ndarray:
        return self.mesh.vertices + self.delta_out[:, None] * self.mesh.normals

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    def cell(self, index: int) -> PrismaticCell:
        return PrismaticCell(
            face_index=index, corners=self.corners[index], volume=float(self.volumes[index])
        )

    @property
    def cells(self) -> List[PrismaticCell]:
        return [self.cell(i) for i in range(self.cell_count)]

    def thickness_summary(self) -> dict:
        thickness = self.delta_out - self.delta_in
        if not len(thickness):
            return {"min": 0.0, "median": 0.0, "max": 0.0, "mean": 0.0}
        return {
            "min": float(thickness.min()),
            "median": float(np.median(thickness)),
            "max": float(thickness.max()),
            "mean": float(thickness.mean()),
        }


def shifts_from_records(records: List[VertexShiftRecord]) -> Tuple[np.ndarray, np.ndarray]:
    delta_in = np.array([r.delta_in for r in records], dtype=np.float64)
    delta_out = np.array([r.delta_out for r in records], dtype=np.float64)
    return delta_in, delta_out


def optional_contraction(data: Optional[dict]) -> Optional[ContractionParams]:
    if not data:
        return None
    return ContractionParams(center=data["center"], radius=data["radius"])
