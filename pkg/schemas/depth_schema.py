# File: schemas/depth_schema.py
from pydantic import BaseModel, Field


class ComplexityScore(BaseModel):
    """Nearest-neighbour spacing of a cloud relative to its extent."""

    cs: float = Field(ge=0.0, description="Nearest-neighbour distance quantile over the longest bounding-box edge")
    l_box: float = Field(gt=0.0, description="Longest bounding-box edge of the Gaussian centers")
    spacing: float = Field(ge=0.0, description="The nearest-neighbour distance quantile itself")
    quantile: float = Field(gt=0.0, le=1.0)


class DepthAdvice(BaseModel):
    """Complexity score of an unconstrained cloud and the octree depth derived from it."""

    cs: float = Field(ge=0.0, description="Nearest-neighbour distance quantile over the longest bounding-box edge")
    l_box: float = Field(gt=0.0, description="Longest bounding-box edge of the Gaussian centers")
    gamma: float = Field(default=100.0, gt=0.0)
    raw_depth: int = Field(description="floor(-log2(gamma * cs)) before clamping")
    depth: int = Field(ge=1, description="raw_depth clamped to [1, default depth]")
    gaussian_count: int = Field(ge=0)

    def to_json(self) -> dict:
        return {
            "cs": self.cs,
            "L": self.l_box,
            "gamma": self.gamma,
            "raw_depth": self.raw_depth,
            "depth": self.depth,
            "gaussians": self.gaussian_count,
        }
