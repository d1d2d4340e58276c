# File: schemas/package_schema.py
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

PACKAGE_FORMAT = "frosting-package"
PACKAGE_VERSION = "1.0"


class PackageCounts(BaseModel):
    vertices: int = Field(ge=0)
    faces: int = Field(ge=0)
    gaussians: int = Field(ge=0)


class PackageManifest(BaseModel):
    """Contents of manifest.json inside a package directory."""

    format: str = Field(default=PACKAGE_FORMAT)
    version: str = Field(default=PACKAGE_VERSION, description="major.minor")
    counts: PackageCounts
    sh_degree: int = Field(ge=0, le=3)
    background: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    contraction: Optional[Dict[str, object]] = None
    seed: int = Field(default=0, ge=0)
    thickness: Dict[str, float] = Field(default_factory=dict, description="min/max/mean layer thickness")
    files: Dict[str, str] = Field(
        default_factory=lambda: {
            "mesh": "mesh.obj",
            "layer": "layer.bin",
            "gaussians": "gaussians.bin",
        }
    )

    @property
    def major(self) -> int:
        return int(self.version.split(".")[0])
