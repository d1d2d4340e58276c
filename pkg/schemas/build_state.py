# File: schemas/build_state.py
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from schemas.config_schema import FrostingConfig
from schemas.gaussian_schema import GaussianCloud
from schemas.layer_schema import FrostingLayer, VertexShiftRecord
from schemas.mesh_schema import TriMesh
from schemas.scene_schema import FrostingScene

# Shared state between the build agents


class BuildState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    unconstrained: GaussianCloud
    regularized: GaussianCloud
    mesh: TriMesh
    config: FrostingConfig = Field(default_factory=FrostingConfig)
    threads: Optional[int] = None
    target_records: List[VertexShiftRecord] = Field(
        default_factory=list
    )  # SHIFTS FROM THE DENSITY SEARCH, BEFORE GROWTH
    shift_records: List[VertexShiftRecord] = Field(
        default_factory=list
    )  # SHIFTS AFTER GROWTH, THE ONES THE CELLS ARE BUILT FROM
    layer: Optional[FrostingLayer] = None
    scene: Optional[FrostingScene] = None
    package_dir: Optional[str] = None  # WHERE THE STORER WROTE THE PACKAGE
