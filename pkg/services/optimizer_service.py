# File: services/optimizer_service.py
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field
from tqdm import tqdm

from schemas.array_model import ArrayModel
from schemas.config_schema import OptimizerConfig, RenderConfig
from schemas.errors import NonFiniteLoss
from schemas.scene_schema import Camera, FrostingScene, Image
from services.differentiable_renderer import (
    DTYPE,
    PARAMETER_GROUPS,
    fixed_tensors,
    loss_tensor,
    parameter_tensors,
    render_tensors,
)
from services.runtime import resolve_threads

logger = logging.getLogger(__name__)

# SAME SMALL EPSILON AS THE USUAL SPLATTING TRAINERS
ADAM_EPS = 1e-15


class GradientSet(ArrayModel):
    """Loss gradient for every trainable array of a FrostedGaussians batch."""

    bary_logits: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAMETER_GROUPS}


class AdamState(ArrayModel):
    """First/second moments per parameter group plus the step counter."""

    step: int = Field(ge=0)
    exp_avg: Dict[str, np.ndarray]
    exp_avg_sq: Dict[str, np.ndarray]


class GradientMismatch(BaseModel):
    group: str
    index: int = Field(description="Flat index into the parameter array")
    numeric: float
    analytic: float
    relative_error: float


class GroupCheck(BaseModel):
    checked: int
    tolerance: float
    max_relative_error: float
    median_relative_error: float
    failed: int = 0


class GradientCheckReport(BaseModel):
    groups: Dict[str, GroupCheck]
    failures: List[GradientMismatch] = Field(
        default_factory=list, description="Sampled entries above their group tolerance"
    )
    checked: int
    pass_fraction: float
    min_pass_fraction: float
    passed: bool


class OptimizationResult(ArrayModel):
    losses: List[float] = Field(default_factory=list)
    ema: List[float] = Field(default_factory=list)
    state: Optional[AdamState] = None


def _gt_tensor(gt: Image) -> torch.Tensor:
    return torch.tensor(np.array(gt.pixels), dtype=DTYPE)


def _render_cfg(render_cfg: Optional[RenderConfig]) -> RenderConfig:
    return render_cfg or RenderConfig()


def loss_and_gradients(
    scene: FrostingScene,
    cam: Camera,
    gt: Image,
    cfg: Optional[OptimizerConfig] = None,
    render_cfg: Optional[RenderConfig] = None,
) -> Tuple[float, GradientSet]:
    """Rendering loss against `gt` and its gradient w.r.t. every trainable array."""
    cfg = cfg or OptimizerConfig()
    params = parameter_tensors(scene.gaussians)
    fixed = fixed_tensors(scene)
    pred = render_tensors(params, fixed, cam, scene.sh_degree, _render_cfg(render_cfg))
    loss = loss_tensor(pred, _gt_tensor(gt), cfg.lambda_dssim)
    if loss.requires_grad:
        loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else torch.zeros_like(t)).detach().numpy()
        for name, t in params.items()
    }
    return float(loss.detach()), GradientSet(**grads)


def _loss_value(scene: FrostingScene, params, fixed, cam, gt_t, lambda_dssim, render_cfg) -> float:
    with torch.no_grad():
        pred = render_tensors(params, fixed, cam, scene.sh_degree, render_cfg)
        return float(loss_tensor(pred, gt_t, lambda_dssim))


def gradient_check(
    scene: FrostingScene,
    cam: Camera,
    gt: Image,
    eps: float = 1e-6,
    samples_per_group: int = 8,
    tolerance: float = 1e-3,
    rotation_tolerance: float = 1e-2,
    min_pass_fraction: float = 0.95,
    absolute_floor: float = 1e-8,
    seed: int = 0,
    cfg: Optional[OptimizerConfig] = None,
    render_cfg: Optional[RenderConfig] = None,
) -> GradientCheckReport:
    """Compare autograd gradients with central finite differences on random entries.

    An entry passes when its relative error is within the group tolerance (quaternions get
    `rotation_tolerance`) or both gradients agree within `absolute_floor`. The check passes when
    at least `min_pass_fraction` of all sampled entries do.
    """
    if samples_per_group < 1:
        raise ValueError("samples_per_group must be at least 1")
    cfg = cfg or OptimizerConfig()
    render_cfg = _render_cfg(render_cfg)
    _, analytic = loss_and_gradients(scene, cam, gt, cfg, render_cfg)
    analytic_flat = {name: grad.reshape(-1) for name, grad in analytic.as_dict().items()}
    params = parameter_tensors(scene.gaussians, requires_grad=False)
    fixed = fixed_tensors(scene)
    gt_t = _gt_tensor(gt)
    rng = np.random.default_rng(seed)

    groups: Dict[str, GroupCheck] = {}
    failures: List[GradientMismatch] = []
    for name in PARAMETER_GROUPS:
        tensor = params[name]
        flat = tensor.view(-1)
        if flat.numel() == 0:
            continue
        limit = rotation_tolerance if name == "rotations" else tolerance
        picks = rng.choice(flat.numel(), size=min(samples_per_group, flat.numel()), replace=False)
        errors = []
        failed = 0
        for index in picks:
            original = flat[index].item()
            flat[index] = original + eps
            plus = _loss_value(scene, params, fixed, cam, gt_t, cfg.lambda_dssim, render_cfg)
            flat[index] = original - eps
            minus = _loss_value(scene, params, fixed, cam, gt_t, cfg.lambda_dssim, render_cfg)
            flat[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = float(analytic_flat[name][index])
            gap = abs(numeric - exact)
            relative = gap / max(abs(numeric), abs(exact), absolute_floor)
            errors.append(relative)
            if relative > limit and gap > absolute_floor:
                failed += 1
                failures.append(
                    GradientMismatch(
                        group=name, index=int(index), numeric=numeric, analytic=exact, relative_error=relative
                    )
                )
        groups[name] = GroupCheck(
            checked=len(errors),
            tolerance=limit,
            max_relative_error=float(np.max(errors)),
            median_relative_error=float(np.median(errors)),
            failed=failed,
        )
        logger.info(
            f"Gradient check {name}: max relative error {groups[name].max_relative_error:.2e}, "
            f"{failed} above {limit:.0e}"
        )

    checked = sum(g.checked for g in groups.values())
    pass_fraction = 1.0 - len(failures) / checked if checked else 1.0
    passed = pass_fraction >= min_pass_fraction
    if passed:
        logger.info(f"✅ Gradient check passed ({pass_fraction:.1%} of {checked} entries)")
    else:
        logger.warning(f"⚠️ Gradient check failed: {len(failures)} of {checked} entries above tolerance")
    return GradientCheckReport(
        groups=groups,
        failures=failures,
        checked=checked,
        pass_fraction=pass_fraction,
        min_pass_fraction=min_pass_fraction,
        passed=passed,
    )


def _learning_rates(cfg: OptimizerConfig) -> Dict[str, float]:
    return {
        "bary_logits": cfg.lr_bary_logits,
        "log_scales": cfg.lr_log_scales,
        "rotations": cfg.lr_rotations,
        "opacity_logits": cfg.lr_opacity_logits,
        "sh": cfg.lr_sh,
    }


def _restore_state(optimizer: torch.optim.Adam, params: Dict[str, torch.Tensor], state: AdamState) -> None:
    for name, tensor in params.items():
        if name not in state.exp_avg:
            continue
        optimizer.state[tensor] = {
            "step": torch.tensor(float(state.step)),
            "exp_avg": torch.tensor(np.array(state.exp_avg[name]), dtype=DTYPE).reshape(tensor.shape),
            "exp_avg_sq": torch.tensor(np.array(state.exp_avg_sq[name]), dtype=DTYPE).reshape(tensor.shape),
        }


def _capture_state(optimizer: torch.optim.Adam, params: Dict[str, torch.Tensor], step: int) -> AdamState:
    exp_avg, exp_avg_sq = {}, {}
    for name, tensor in params.items():
        entry = optimizer.state.get(tensor, {})
        exp_avg[name] = entry["exp_avg"].detach().numpy().copy() if "exp_avg" in entry else np.zeros(tuple(tensor.shape))
        exp_avg_sq[name] = (
            entry["exp_avg_sq"].detach().numpy().copy() if "exp_avg_sq" in entry else np.zeros(tuple(tensor.shape))
        )
    return AdamState(step=step, exp_avg=exp_avg, exp_avg_sq=exp_avg_sq)


def _first_bad_group(params: Dict[str, torch.Tensor]) -> Optional[str]:
    for name, tensor in params.items():
        if not torch.isfinite(tensor).all():
            return name
        if tensor.grad is not None and not torch.isfinite(tensor.grad).all():
            return name
    return None


def optimize(
    scene: FrostingScene,
    dataset: Sequence[Tuple[Camera, Image]],
    cfg: Optional[OptimizerConfig] = None,
    render_cfg: Optional[RenderConfig] = None,
    state: Optional[AdamState] = None,
    threads: Optional[int] = None,
) -> Tuple[FrostingScene, OptimizationResult]:
    """Adam on the frosted parameters, one camera per step.

    Camera order is a fresh seeded permutation every pass over the dataset. Gaussians never
    leave their cells: positions stay softmax mixes of fixed corners.
    """
    cfg = cfg or OptimizerConfig()
    render_cfg = _render_cfg(render_cfg)
    if cfg.iterations == 0 or not len(scene.gaussians) or not dataset:
        return scene, OptimizationResult(state=state)
    torch.set_num_threads(resolve_threads(threads))

    params = parameter_tensors(scene.gaussians)
    fixed = fixed_tensors(scene)
    targets = [_gt_tensor(image) for _, image in dataset]
    base_lr = _learning_rates(cfg)
    optimizer = torch.optim.Adam(
        [{"params": [params[name]], "lr": base_lr[name], "name": name} for name in PARAMETER_GROUPS],
        lr=0.0,
        eps=ADAM_EPS,
    )
    start_step = 0
    if state is not None:
        _restore_state(optimizer, params, state)
        start_step = state.step

    rng = np.random.default_rng(cfg.seed)
    order: List[int] = []
    smoothing = 2.0 / (cfg.ema_window + 1.0)
    losses: List[float] = []
    ema: List[float] = []

    progress = tqdm(
        range(cfg.iterations), desc="Optimizing", unit="step", leave=False, disable=None
    )
    for it in progress:
        if not order:
            order = list(rng.permutation(len(dataset)))
        view = order.pop(0)
        step = start_step + it
        if cfg.warmup_steps:
            factor = min(1.0, (step + 1) / cfg.warmup_steps)
            for group in optimizer.param_groups:
                group["lr"] = base_lr[group["name"]] * factor

        optimizer.zero_grad(set_to_none=True)
        pred = render_tensors(params, fixed, dataset[view][0], scene.sh_degree, render_cfg)
        loss = loss_tensor(pred, targets[view], cfg.lambda_dssim)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(step, _first_bad_group(params))
        loss.backward()
        bad = _first_bad_group(params)
        if bad is not None:
            raise NonFiniteLoss(step, bad)
        optimizer.step()

        value = float(loss.detach())
        losses.append(value)
        ema.append(value if not ema else (1.0 - smoothing) * ema[-1] + smoothing * value)
        if (it + 1) % cfg.log_every == 0:
            progress.set_postfix(loss=f"{ema[-1]:.5f}")
            logger.info(f"Step {step + 1}: loss {value:.6f} (ema {ema[-1]:.6f})")

    refined = scene.gaussians.replace(
        **{name: params[name].detach().numpy().copy() for name in PARAMETER_GROUPS}
    )
    logger.info(f"✅ Optimized {len(refined)} Gaussians for {cfg.iterations} steps")
    result = OptimizationResult(
        losses=losses,
        ema=ema,
        state=_capture_state(optimizer, params, start_step + cfg.iterations),
    )
    return scene.with_gaussians(refined), result
