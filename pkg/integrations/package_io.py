# File: integrations/package_io.py
import json
import logging
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from integrations.obj_io import read_obj, write_obj
from schemas.errors import CorruptPackage, FrostingError, VersionError
from schemas.frosted_schema import FrostedGaussians
from schemas.gaussian_schema import sh_coefficient_count
from schemas.layer_schema import optional_contraction
from schemas.package_schema import PACKAGE_FORMAT, PACKAGE_VERSION, PackageCounts, PackageManifest
from schemas.scene_schema import FrostingScene
from services.cells_service import build_layer

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
LAYER_RECORD = np.dtype([("delta_in", "<f4"), ("delta_out", "<f4")])


def gaussian_record_dtype(sh_degree: int) -> np.dtype:
    """Packed little-endian record of one frosted Gaussian."""
    k = sh_coefficient_count(sh_degree)
    return np.dtype(
        [
            ("cell", "<u4"),
            ("bary_logits", "<f4", (6,)),
            ("log_scales", "<f4", (3,)),
            ("rotation", "<f4", (4,)),
            ("opacity_logit", "<f4"),
            ("residual_rotation", "<f4", (4,)),
            ("sh", "<f4", (k * 3,)),
        ]
    )


def _read_records(path: Path, dtype: np.dtype, expected: int) -> np.ndarray:
    raw = path.read_bytes()
    complete = len(raw) // dtype.itemsize
    if len(raw) % dtype.itemsize or complete != expected:
        raise CorruptPackage(
            f"expected {expected} records of {dtype.itemsize} bytes, file holds {len(raw)} bytes",
            path=str(path),
            offset=min(complete, expected) * dtype.itemsize,
        )
    return np.frombuffer(raw, dtype=dtype, count=expected)


def store_package(directory: Union[str, Path], scene: FrostingScene) -> PackageManifest:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    g = scene.gaussians
    manifest = PackageManifest(
        counts=PackageCounts(
            vertices=scene.mesh.vertex_count, faces=scene.mesh.face_count, gaussians=len(g)
        ),
        sh_degree=g.sh_degree,
        background=[float(c) for c in scene.background],
        contraction=scene.contraction.to_dict() if scene.contraction is not None else None,
        seed=scene.seed,
        thickness=scene.layer.thickness_summary(),
    )

    write_obj(directory / manifest.files["mesh"], scene.mesh)

    shifts = np.stack([scene.layer.delta_in, scene.layer.delta_out], axis=1).astype("<f4")
    (directory / manifest.files["layer"]).write_bytes(shifts.tobytes())

    records = np.zeros(len(g), dtype=gaussian_record_dtype(g.sh_degree))
    records["cell"] = g.cell_indices
    records["bary_logits"] = g.bary_logits
    records["log_scales"] = g.log_scales
    records["rotation"] = g.rotations
    records["opacity_logit"] = g.opacity_logits
    records["residual_rotation"] = g.residual_rotations
    records["sh"] = g.sh.reshape(len(g), -1)
    (directory / manifest.files["gaussians"]).write_bytes(records.tobytes())

    with open(directory / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest.model_dump(), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"✅ Stored package with {len(g)} Gaussians in {directory}")
    return manifest


def read_manifest(directory: Union[str, Path]) -> PackageManifest:
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        raise CorruptPackage("manifest.json is missing", path=str(path))
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorruptPackage(f"invalid manifest JSON: {e.msg}", path=str(path), line=e.lineno)
    if not isinstance(raw, dict) or raw.get("format") != PACKAGE_FORMAT:
        raise CorruptPackage(f"not a {PACKAGE_FORMAT}", path=str(path))
    version = str(raw.get("version", ""))
    try:
        major = int(version.split(".")[0])
    except ValueError:
        raise CorruptPackage(f"unreadable version '{version}'", path=str(path))
    if major > int(PACKAGE_VERSION.split(".")[0]):
        raise VersionError(version, PACKAGE_VERSION, path=str(path))
    try:
        return PackageManifest(**raw)
    except ValidationError as e:
        raise CorruptPackage(f"invalid manifest: {e}", path=str(path))


def load_package(directory: Union[str, Path]) -> FrostingScene:
    directory = Path(directory)
    manifest = read_manifest(directory)
    counts = manifest.counts

    mesh = read_obj(directory / manifest.files["mesh"])
    if mesh.vertex_count != counts.vertices or mesh.face_count != counts.faces:
        raise CorruptPackage(
            f"mesh has {mesh.vertex_count} vertices / {mesh.face_count} faces, "
            f"manifest says {counts.vertices} / {counts.faces}",
            path=str(directory / manifest.files["mesh"]),
        )

    shifts = _read_records(directory / manifest.files["layer"], LAYER_RECORD, counts.vertices)
    layer = build_layer(
        mesh, shifts["delta_in"].astype(np.float64), shifts["delta_out"].astype(np.float64)
    )

    dtype = gaussian_record_dtype(manifest.sh_degree)
    records = _read_records(directory / manifest.files["gaussians"], dtype, counts.gaussians)
    k = sh_coefficient_count(manifest.sh_degree)
    try:
        gaussians = FrostedGaussians(
            cell_indices=records["cell"].astype(np.int64),
            bary_logits=records["bary_logits"].astype(np.float64),
            log_scales=records["log_scales"].astype(np.float64),
            rotations=records["rotation"].astype(np.float64),
            opacity_logits=records["opacity_logit"].astype(np.float64),
            residual_rotations=records["residual_rotation"].astype(np.float64),
            sh=records["sh"].astype(np.float64).reshape(-1, k, 3),
            sh_degree=manifest.sh_degree,
        )
        scene = FrostingScene(
            mesh=mesh,
            layer=layer,
            gaussians=gaussians,
            background=manifest.background,
            contraction=optional_contraction(manifest.contraction),
            seed=manifest.seed,
        )
    except FrostingError as e:
        raise CorruptPackage(str(e), path=str(directory))
    logger.info(f"✅ Loaded package with {len(gaussians)} Gaussians from {directory}")
    return scene
