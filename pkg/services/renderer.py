# File: services/renderer.py
import logging
import math
import time
from typing import NamedTuple, Optional, Tuple

import numpy as np

from schemas.config_schema import RenderConfig
from schemas.gaussian_schema import Gaussian3D, GaussianCloud
from schemas.scene_schema import Camera, FrostingScene, Image
from services.frosted_param import frosted_colors, positions
from services.runtime import parallel_map
from services.scene_model import (
    covariance,
    covariances_from,
    eval_sh,
    sh_to_rgb,
    unit_directions,
)

logger = logging.getLogger(__name__)

# PIXELS PER BRUTE-FORCE CHUNK TIMES GAUSSIANS
BRUTE_CHUNK_BUDGET = 2_000_000


class Splats(NamedTuple):
    """World-space Gaussians ready for projection."""

    means: np.ndarray  # (N, 3)
    covariances: np.ndarray  # (N, 3, 3)
    opacities: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)


class Projection(NamedTuple):
    means2d: np.ndarray  # (N, 2) pixel coordinates
    cov2d: np.ndarray  # (N, 2, 2) dilated
    conics: np.ndarray  # (N, 3) inverse covariance (a, b, c)
    depths: np.ndarray  # (N,)
    valid: np.ndarray  # (N,) in front of the near plane


def project_splats(
    means: np.ndarray, covariances: np.ndarray, cam: Camera, dilation: float = 0.3
) -> Projection:
    """EWA projection: 2D covariance J W Sigma W^T J^T plus a small dilation."""
    rot, trans = cam.rotation, cam.translation
    p = means @ rot.T + trans
    z = p[:, 2]
    valid = z > cam.near
    z_safe = np.where(valid, z, 1.0)
    x, y = p[:, 0], p[:, 1]

    jac = np.zeros((len(means), 2, 3))
    jac[:, 0, 0] = cam.fx / z_safe
    jac[:, 0, 2] = -cam.fx * x / z_safe**2
    jac[:, 1, 1] = cam.fy / z_safe
    jac[:, 1, 2] = -cam.fy * y / z_safe**2
    t = jac @ rot
    cov2d = t @ covariances @ np.swapaxes(t, 1, 2) + dilation * np.eye(2)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    valid &= det > 0.0
    det_safe = np.where(valid, det, 1.0)
    conics = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)
    means2d = np.stack([cam.fx * x / z_safe + cam.cx, cam.fy * y / z_safe + cam.cy], axis=1)
    return Projection(means2d, cov2d, conics, z, valid)


def project_gaussian(
    g: Gaussian3D, cam: Camera, dilation: float = 0.3
) -> Optional[Tuple[np.ndarray, np.ndarray, float]]:
    """(mean2d, cov2d, depth), or None behind the near plane."""
    proj = project_splats(g.mean[None], covariance(g)[None], cam, dilation)
    if not proj.valid[0]:
        return None
    return proj.means2d[0], proj.cov2d[0], float(proj.depths[0])


def splat_alphas(
    pixels: np.ndarray, means2d: np.ndarray, conics: np.ndarray, opacities: np.ndarray, cfg: RenderConfig
) -> np.ndarray:
    """(P, K) alpha of every Gaussian at every pixel, clamped and cut off."""
    d = pixels[:, None, :] - means2d[None, :, :]
    dx, dy = d[..., 0], d[..., 1]
    power = -0.5 * (conics[:, 0] * dx * dx + conics[:, 2] * dy * dy) - conics[:, 1] * dx * dy
    alpha = np.minimum(cfg.alpha_max, opacities * np.exp(power))
    return np.where(alpha >= cfg.alpha_min, alpha, 0.0)


def composite(alpha: np.ndarray, colors: np.ndarray, background: np.ndarray, t_min: float) -> np.ndarray:
    """Front-to-back blend of depth-sorted alphas (P, K).

    A pixel stops at the first Gaussian that would push its transmittance below `t_min`;
    that Gaussian and everything behind it are dropped.
    """
    if alpha.shape[1] == 0:
        return np.broadcast_to(background, (alpha.shape[0], 3)).copy()
    after = np.cumprod(1.0 - alpha, axis=1)
    stops = after < t_min
    first_stop = np.where(stops.any(axis=1), np.argmax(stops, axis=1), alpha.shape[1])
    kept = np.where(np.arange(alpha.shape[1])[None, :] < first_stop[:, None], alpha, 0.0)
    trans = np.cumprod(1.0 - kept, axis=1)
    before = np.concatenate([np.ones((alpha.shape[0], 1)), trans[:, :-1]], axis=1)
    color = (before * kept) @ colors
    return color + trans[:, -1:] * background


def _pixel_grid(x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def _extent_radii(proj: Projection, opacities: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Pixel radius beyond which a splat's alpha is below the cutoff; -1 when it never reaches it."""
    a, b, c = proj.cov2d[:, 0, 0], proj.cov2d[:, 0, 1], proj.cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    ratio = opacities / cfg.alpha_min
    reach = np.where(ratio >= 1.0, 2.0 * np.log(np.maximum(ratio, 1.0)), -1.0)
    radii = np.where(reach >= 0.0, np.sqrt(np.maximum(reach, 0.0) * lam_max), -1.0)
    # PAD SO ROUNDING NEVER DROPS A CONTRIBUTING PIXEL
    return np.where(radii >= 0.0, radii * (1.0 + 1e-6) + 1e-3, -1.0)


def rasterize(
    splats: Splats,
    cam: Camera,
    cfg: RenderConfig,
    background: np.ndarray,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Tile-based rasterization to an (H, W, 3) array."""
    h, w, tile = cam.height, cam.width, cfg.tile_size
    tiles_x, tiles_y = math.ceil(w / tile), math.ceil(h / tile)
    image = np.empty((h, w, 3))
    if not len(splats.means):
        image[:] = background
        return np.clip(image, 0.0, 1.0)

    proj = project_splats(splats.means, splats.covariances, cam, cfg.dilation)
    radii = _extent_radii(proj, splats.opacities, cfg)
    mx, my = proj.means2d[:, 0], proj.means2d[:, 1]
    with np.errstate(invalid="ignore"):
        x0 = np.floor((mx - radii) / tile)
        x1 = np.floor((mx + radii) / tile)
        y0 = np.floor((my - radii) / tile)
        y1 = np.floor((my + radii) / tile)
    live = proj.valid & (radii >= 0.0) & (x1 >= 0) & (y1 >= 0) & (x0 < tiles_x) & (y0 < tiles_y)
    live &= np.isfinite(mx) & np.isfinite(my)
    logger.debug(f"Culled {len(live) - int(live.sum())} of {len(live)} Gaussians for '{cam.name}'")

    # GLOBAL DEPTH ORDER, TIES BROKEN BY INDEX
    ids = np.flatnonzero(live)
    ids = ids[np.lexsort((ids, proj.depths[ids]))]
    tx0 = np.clip(x0[ids], 0, tiles_x - 1).astype(np.int64)
    tx1 = np.clip(x1[ids], 0, tiles_x - 1).astype(np.int64)
    ty0 = np.clip(y0[ids], 0, tiles_y - 1).astype(np.int64)
    ty1 = np.clip(y1[ids], 0, tiles_y - 1).astype(np.int64)
    span_x = tx1 - tx0 + 1
    counts = span_x * (ty1 - ty0 + 1)

    total = int(counts.sum())
    owner = np.repeat(np.arange(len(ids)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_x = tx0[owner] + local % span_x[owner]
    tile_y = ty0[owner] + local // span_x[owner]
    tile_ids = tile_y * tiles_x + tile_x
    order = np.argsort(tile_ids, kind="stable")
    tile_ids, gauss = tile_ids[order], ids[owner[order]]
    bounds = np.searchsorted(tile_ids, np.arange(tiles_x * tiles_y + 1))

    def render_tile(t: int) -> Tuple[int, np.ndarray]:
        ty, tx = divmod(t, tiles_x)
        xa, xb = tx * tile, min((tx + 1) * tile, w)
        ya, yb = ty * tile, min((ty + 1) * tile, h)
        members = gauss[bounds[t] : bounds[t + 1]]
        pixels = _pixel_grid(xa, xb, ya, yb)
        alpha = splat_alphas(
            pixels, proj.means2d[members], proj.conics[members], splats.opacities[members], cfg
        )
        rgb = composite(alpha, splats.colors[members], background, cfg.transmittance_min)
        return t, rgb.reshape(yb - ya, xb - xa, 3)

    for t, block in parallel_map(render_tile, range(tiles_x * tiles_y), threads):
        ty, tx = divmod(t, tiles_x)
        image[ty * tile : ty * tile + block.shape[0], tx * tile : tx * tile + block.shape[1]] = block
    return np.clip(image, 0.0, 1.0)


def rasterize_brute(splats: Splats, cam: Camera, cfg: RenderConfig, background: np.ndarray) -> np.ndarray:
    """Every pixel against every Gaussian in front of the camera; the reference for `rasterize`."""
    h, w = cam.height, cam.width
    pixels = _pixel_grid(0, w, 0, h)
    out = np.empty((h * w, 3))
    if not len(splats.means):
        out[:] = background
        return np.clip(out.reshape(h, w, 3), 0.0, 1.0)
    proj = project_splats(splats.means, splats.covariances, cam, cfg.dilation)
    ids = np.flatnonzero(proj.valid)
    ids = ids[np.lexsort((ids, proj.depths[ids]))]
    chunk = max(1, BRUTE_CHUNK_BUDGET // max(len(ids), 1))
    for start in range(0, len(pixels), chunk):
        px = pixels[start : start + chunk]
        alpha = splat_alphas(px, proj.means2d[ids], proj.conics[ids], splats.opacities[ids], cfg)
        out[start : start + chunk] = composite(alpha, splats.colors[ids], background, cfg.transmittance_min)
    return np.clip(out.reshape(h, w, 3), 0.0, 1.0)


# SCENE ADAPTERS


def scene_splats(scene: FrostingScene, cam: Camera) -> Splats:
    g = scene.gaussians
    means = positions(g, scene.layer)
    if not len(g):
        return Splats(means, np.zeros((0, 3, 3)), np.zeros(0), np.zeros((0, 3)))
    return Splats(
        means=means,
        covariances=covariances_from(g.log_scales, g.rotations),
        opacities=g.opacities,
        colors=frosted_colors(g, means, cam.center),
    )


def cloud_splats(cloud: GaussianCloud, cam: Camera) -> Splats:
    dirs = unit_directions(cloud.means - cam.center)
    return Splats(
        means=cloud.means,
        covariances=covariances_from(cloud.log_scales, cloud.rotations),
        opacities=cloud.opacities,
        colors=sh_to_rgb(eval_sh(cloud.sh_degree, cloud.sh, dirs)),
    )


def _background(scene_background: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    if cfg.background is not None:
        return np.asarray(cfg.background, dtype=np.float64)
    return np.asarray(scene_background, dtype=np.float64)


def render(
    scene: FrostingScene, cam: Camera, cfg: Optional[RenderConfig] = None, threads: Optional[int] = None
) -> Image:
    cfg = cfg or RenderConfig()
    start = time.perf_counter()
    pixels = rasterize(scene_splats(scene, cam), cam, cfg, _background(scene.background, cfg), threads)
    logger.debug(f"✅ Rendered '{cam.name}' {cam.width}x{cam.height} in {time.perf_counter() - start:.3f}s")
    return Image(pixels=pixels)


def render_brute(scene: FrostingScene, cam: Camera, cfg: Optional[RenderConfig] = None) -> Image:
    cfg = cfg or RenderConfig()
    pixels = rasterize_brute(scene_splats(scene, cam), cam, cfg, _background(scene.background, cfg))
    return Image(pixels=pixels)


def render_cloud(
    cloud: GaussianCloud,
    cam: Camera,
    cfg: Optional[RenderConfig] = None,
    background=None,
    threads: Optional[int] = None,
) -> Image:
    """Render a plain Gaussian cloud (no mesh, no layer)."""
    cfg = cfg or RenderConfig()
    bg = _background(np.zeros(3) if background is None else background, cfg)
    start = time.perf_counter()
    pixels = rasterize(cloud_splats(cloud, cam), cam, cfg, bg, threads)
    logger.debug(f"✅ Rendered cloud view '{cam.name}' in {time.perf_counter() - start:.3f}s")
    return Image(pixels=pixels)


if __name__ == "__main__":
    from services.toy_scene import look_at_camera, sphere_clouds

    # RUN with this command:
    # python -m services.renderer

    logging.basicConfig(level=logging.DEBUG)
    cloud, _ = sphere_clouds(5000)
    cam = look_at_camera((3.0, 0.0, 1.0), width=128, height=128)
    start = time.perf_counter()
    tiled = render_cloud(cloud, cam).pixels
    print(f"Tile renderer: {time.perf_counter() - start:.2f}s")
    start = time.perf_counter()
    brute = rasterize_brute(cloud_splats(cloud, cam), cam, RenderConfig(), np.zeros(3))
    print(f"Brute force: {time.perf_counter() - start:.2f}s, max difference {np.abs(tiled - brute).max():.2e}")
