# File: agents/gaussian_sampler_agent.py
import logging

import numpy as np

from agents.base_agent import BaseAgent
from schemas.build_state import BuildState
from schemas.scene_schema import FrostingScene
from services.cells_service import default_contraction
from services.sampling_service import sample_gaussians

logger = logging.getLogger(__name__)


class GaussianSamplerAgent(BaseAgent):
    """Samples the initial frosted Gaussians and assembles the scene."""

    def __init__(self, background=(0.0, 0.0, 0.0)):
        super().__init__(name="GaussianSamplerAgent")
        self.background = np.asarray(background, dtype=np.float64)

    def run(self, state: BuildState) -> BuildState:
        if state.layer is None:
            logger.warning(f"⚠️ {self.name}: no layer to sample from")
            return state
        cfg = state.config.sampling
        if cfg.contraction is None:
            cfg = cfg.model_copy(update={"contraction": default_contraction(state.mesh)})
        gaussians = sample_gaussians(state.layer, state.unconstrained, cfg, threads=state.threads)
        background = state.config.render.background
        state.scene = FrostingScene(
            mesh=state.mesh,
            layer=state.layer,
            gaussians=gaussians,
            background=background if background is not None else self.background,
            contraction=cfg.contraction,
            seed=cfg.seed,
        )
        return state
