# File: services/differentiable_renderer.py
from typing import Dict, Optional

import numpy as np
import torch
import torch.nn.functional as F

from schemas.config_schema import RenderConfig
from schemas.frosted_schema import FrostedGaussians
from schemas.scene_schema import Camera, FrostingScene
from services.metrics import SSIM_C1, SSIM_C2, gaussian_window
from services.scene_model import eval_sh, quaternions_to_matrices, sh_to_rgb

DTYPE = torch.float64
# TRAINABLE ARRAYS OF A FrostedGaussians BATCH, IN OPTIMIZER GROUP ORDER
PARAMETER_GROUPS = ("bary_logits", "log_scales", "rotations", "opacity_logits", "sh")
PIXEL_CHUNK_BUDGET = 4_000_000


def parameter_tensors(gaussians: FrostedGaussians, requires_grad: bool = True) -> Dict[str, torch.Tensor]:
    return {
        name: torch.tensor(np.array(getattr(gaussians, name)), dtype=DTYPE, requires_grad=requires_grad)
        for name in PARAMETER_GROUPS
    }


def fixed_tensors(scene: FrostingScene) -> Dict[str, torch.Tensor]:
    """Per-Gaussian cell corners and residual rotations, held constant while optimizing."""
    g = scene.gaussians
    residual = (
        quaternions_to_matrices(g.residual_rotations) if len(g) else np.zeros((0, 3, 3))
    )
    return {
        "corners": torch.tensor(scene.layer.corners[g.cell_indices], dtype=DTYPE),
        "residual": torch.tensor(residual, dtype=DTYPE),
        "background": torch.tensor(np.array(scene.background), dtype=DTYPE),
    }


def _quaternion_matrices(q: torch.Tensor) -> torch.Tensor:
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    return torch.stack(
        [
            torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def _composite(alpha: torch.Tensor, colors: torch.Tensor, background: torch.Tensor, t_min: float) -> torch.Tensor:
    if alpha.shape[1] == 0:
        return background.expand(alpha.shape[0], 3)
    with torch.no_grad():
        after = torch.cumprod(1.0 - alpha, dim=1)
        stops = after < t_min
        index = torch.arange(alpha.shape[1]).expand_as(stops)
        first_stop = torch.where(stops, index, alpha.shape[1]).min(dim=1, keepdim=True).values
        keep = (index < first_stop).to(alpha.dtype)
    kept = alpha * keep
    trans = torch.cumprod(1.0 - kept, dim=1)
    before = torch.cat([torch.ones_like(trans[:, :1]), trans[:, :-1]], dim=1)
    return (before * kept) @ colors + trans[:, -1:] * background


def render_tensors(
    params: Dict[str, torch.Tensor],
    fixed: Dict[str, torch.Tensor],
    cam: Camera,
    sh_degree: int,
    cfg: Optional[RenderConfig] = None,
) -> torch.Tensor:
    """Dense differentiable render to an (H, W, 3) tensor.

    Same projection, clamps, cutoff and early termination as the tile renderer, evaluated
    for every pixel against every Gaussian.
    """
    cfg = cfg or RenderConfig()
    background = (
        torch.tensor(cfg.background, dtype=DTYPE) if cfg.background is not None else fixed["background"]
    )
    h, w = cam.height, cam.width
    ys, xs = torch.meshgrid(torch.arange(h, dtype=DTYPE), torch.arange(w, dtype=DTYPE), indexing="ij")
    pixels = torch.stack([xs.reshape(-1), ys.reshape(-1)], dim=1)

    weights = torch.softmax(params["bary_logits"], dim=-1)
    means = torch.einsum("nk,nkj->nj", weights, fixed["corners"])
    rot = torch.tensor(np.array(cam.rotation), dtype=DTYPE)
    trans = torch.tensor(np.array(cam.translation), dtype=DTYPE)
    p_cam = means @ rot.T + trans

    with torch.no_grad():
        visible = torch.nonzero(p_cam[:, 2] > cam.near).squeeze(1)
        depth_order = torch.sort(p_cam[visible, 2], stable=True).indices
        ids = visible[depth_order]
    if ids.numel() == 0:
        return background.expand(h, w, 3).clamp(0.0, 1.0)

    p = p_cam[ids]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    r = _quaternion_matrices(params["rotations"][ids])
    s2 = torch.exp(2.0 * params["log_scales"][ids])
    cov = torch.einsum("nij,nj,nkj->nik", r, s2, r)
    zeros = torch.zeros_like(z)
    jac = torch.stack(
        [
            torch.stack([cam.fx / z, zeros, -cam.fx * x / z**2], -1),
            torch.stack([zeros, cam.fy / z, -cam.fy * y / z**2], -1),
        ],
        -2,
    )
    t = jac @ rot
    cov2d = t @ cov @ t.transpose(1, 2) + cfg.dilation * torch.eye(2, dtype=DTYPE)
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic_a, conic_b, conic_c = c / det, -b / det, a / det
    mean2d = torch.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], -1)

    camera_center = torch.tensor(np.array(cam.center), dtype=DTYPE)
    dirs = means[ids] - camera_center
    dirs = dirs / dirs.norm(dim=-1, keepdim=True)
    dirs = torch.einsum("nji,nj->ni", fixed["residual"][ids], dirs)
    colors = sh_to_rgb(eval_sh(sh_degree, params["sh"][ids], dirs))
    opacities = torch.sigmoid(params["opacity_logits"][ids])

    chunk = max(1, PIXEL_CHUNK_BUDGET // ids.numel())
    blocks = []
    for start in range(0, pixels.shape[0], chunk):
        d = pixels[start : start + chunk, None, :] - mean2d[None]
        dx, dy = d[..., 0], d[..., 1]
        power = -0.5 * (conic_a * dx * dx + conic_c * dy * dy) - conic_b * dx * dy
        alpha = torch.clamp(opacities * torch.exp(power), max=cfg.alpha_max)
        alpha = torch.where(alpha >= cfg.alpha_min, alpha, torch.zeros_like(alpha))
        blocks.append(_composite(alpha, colors, background, cfg.transmittance_min))
    return torch.cat(blocks, dim=0).reshape(h, w, 3).clamp(0.0, 1.0)


def ssim_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM of two (H, W, 3) tensors, replicate padding, matching `services.metrics.ssim`."""
    window = torch.tensor(gaussian_window(), dtype=a.dtype)
    pad = window.shape[0] // 2
    kernel_x = window.view(1, 1, 1, -1).repeat(3, 1, 1, 1)
    kernel_y = window.view(1, 1, -1, 1).repeat(3, 1, 1, 1)

    def blur(img: torch.Tensor) -> torch.Tensor:
        padded = F.pad(img, (pad, pad, pad, pad), mode="replicate")
        out = F.conv2d(padded, kernel_y, groups=3)
        return F.conv2d(out, kernel_x, groups=3)

    x = a.permute(2, 0, 1).unsqueeze(0)
    y = b.permute(2, 0, 1).unsqueeze(0)
    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return (numerator / denominator).mean()


def loss_tensor(pred: torch.Tensor, gt: torch.Tensor, lambda_dssim: float) -> torch.Tensor:
    l1 = torch.abs(pred - gt).mean()
    return (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - ssim_torch(pred, gt)) / 2.0
