# File: schemas/mesh_schema.py
import numpy as np
from pydantic import Field, field_validator, model_validator

from schemas.array_model import ArrayModel, as_array
from schemas.errors import BadIndex, DegenerateFace

# FACES BELOW THIS AREA ARE REJECTED
MIN_FACE_AREA = 1e-12
# NORMAL FOR A VERTEX WITHOUT INCIDENT FACES
ISOLATED_VERTEX_NORMAL = np.array([0.0, 0.0, 1.0])


def area_weighted_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unit vertex normals, each the area-weighted sum of its incident face normals."""
    normals = np.zeros_like(vertices)
    if len(faces):
        v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
        # |cross| IS TWICE THE AREA, SO SUMMING RAW CROSSES WEIGHTS BY AREA
        cross = np.cross(v1 - v0, v2 - v0)
        for k in range(3):
            np.add.at(normals, faces[:, k], cross)
    lengths = np.linalg.norm(normals, axis=1)
    isolated = lengths <= 0.0
    normals[isolated] = ISOLATED_VERTEX_NORMAL
    lengths[isolated] = 1.0
    return normals / lengths[:, None]


class TriMesh(ArrayModel):
    """Indexed triangle mesh. Vertex normals are derived on construction."""

    vertices: np.ndarray = Field(description="(V, 3) vertex positions")
    faces: np.ndarray = Field(description="(F, 3) vertex indices, counter-clockwise")
    normals: np.ndarray = Field(default=None, description="(V, 3) unit vertex normals")

    @field_validator("vertices", mode="before")
    @classmethod
    def _vertices(cls, value):
        return as_array(value, (3,), "vertices")

    @field_validator("faces", mode="before")
    @classmethod
    def _faces(cls, value):
        return as_array(value, (3,), "faces", dtype=np.int64)

    @model_validator(mode="before")
    @classmethod
    def _derive_normals(cls, data):
        if isinstance(data, dict) and data.get("normals") is None:
            vertices = np.asarray(data["vertices"], dtype=np.float64).reshape(-1, 3)
            faces = np.asarray(data.get("faces", np.zeros((0, 3))), dtype=np.int64).reshape(-1, 3)
            data = dict(data, faces=faces)
            if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
                bad = int(np.argmax((faces < 0).any(axis=1) | (faces >= len(vertices)).any(axis=1)))
                raise BadIndex(f"face {bad} references a vertex outside 0..{len(vertices) - 1}")
            data["normals"] = area_weighted_normals(vertices, faces)
        return data

    @field_validator("normals", mode="before")
    @classmethod
    def _normals(cls, value):
        return as_array(value, (3,), "normals")

    @model_validator(mode="after")
    def _check_faces(self):
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise BadIndex("face index out of range")
            areas = self.face_areas()
            small = np.flatnonzero(areas <= MIN_FACE_AREA)
            if len(small):
                raise DegenerateFace(int(small[0]), float(areas[small[0]]))
        if self.normals.shape != self.vertices.shape:
            raise ValueError("normals must match vertices")
        return self

    @classmethod
    def from_arrays(cls, vertices, faces) -> "TriMesh":
        return cls(vertices=vertices, faces=faces)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def face_count(self) -> int:
        return self.faces.shape[0]

    def face_areas(self) -> np.ndarray:
        v0, v1, v2 = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array with the smaller index first."""
        if not len(self.faces):
            return np.zeros((0, 2), dtype=np.int64)
        pairs = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def mean_incident_edge_lengths(self) -> np.ndarray:
        """Per-vertex mean length of incident edges; 0 for isolated vertices."""
        edges = self.edges()
        totals = np.zeros(self.vertex_count)
        counts = np.zeros(self.vertex_count)
        if len(edges):
            lengths = np.linalg.norm(
                self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1
            )
            np.add.at(totals, edges[:, 0], lengths)
            np.add.at(totals, edges[:, 1], lengths)
            np.add.at(counts, edges[:, 0], 1.0)
            np.add.at(counts, edges[:, 1], 1.0)
        return np.divide(totals, counts, out=np.zeros_like(totals), where=counts > 0)

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices=vertices, faces=self.faces)

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)
