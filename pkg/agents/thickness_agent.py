# File: agents/thickness_agent.py
import logging

from agents.base_agent import BaseAgent
from schemas.build_state import BuildState
from services.thickness_service import compute_shifts

logger = logging.getLogger(__name__)


class ThicknessAgent(BaseAgent):
    """Estimates the inner and outer shift of every mesh vertex from the two Gaussian clouds."""

    def __init__(self):
        super().__init__(name="ThicknessAgent")

    def run(self, state: BuildState) -> BuildState:
        logger.info(f"🚀 {self.name}: estimating shifts for {state.mesh.vertex_count} vertices")
        state.target_records = compute_shifts(
            state.unconstrained,
            state.regularized,
            state.mesh,
            state.config.thickness,
            threads=state.threads,
        )
        return state
