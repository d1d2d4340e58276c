# File: agents/layer_builder_agent.py
import logging

from agents.base_agent import BaseAgent
from schemas.build_state import BuildState
from services.cells_service import build_cells
from services.thickness_service import grow_shifts

logger = logging.getLogger(__name__)


class LayerBuilderAgent(BaseAgent):
    """Grows the shifts without self-intersection, then builds the prismatic cells."""

    def __init__(self):
        super().__init__(name="LayerBuilderAgent")

    def run(self, state: BuildState) -> BuildState:
        if not state.target_records:
            logger.warning(f"⚠️ {self.name}: no target shifts, nothing to build")
            return state
        state.shift_records = grow_shifts(
            state.mesh, state.target_records, steps=state.config.thickness.grow_steps
        )
        state.layer = build_cells(state.mesh, state.shift_records)
        return state
