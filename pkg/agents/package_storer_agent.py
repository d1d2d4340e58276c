# File: agents/package_storer_agent.py
import logging
from pathlib import Path

from agents.base_agent import BaseAgent
from integrations.package_io import store_package
from schemas.build_state import BuildState

logger = logging.getLogger(__name__)


class PackageStorerAgent(BaseAgent):
    """Writes the assembled scene as a package directory."""

    def __init__(self, out_dir):
        super().__init__(name="PackageStorerAgent")
        self.out_dir = Path(out_dir)

    def run(self, state: BuildState) -> BuildState:
        if state.scene is None:
            logger.error(f"❌ {self.name}: no scene to store")
            return state
        store_package(self.out_dir, state.scene)
        state.package_dir = str(self.out_dir)
        return state
