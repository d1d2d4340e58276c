# File: agents/base_agent.py
from abc import ABC, abstractmethod

from schemas.build_state import BuildState


class BaseAgent(ABC):
    def __init__(self, name: str = None):
        self.name = name or self.__class__.__name__

    @abstractmethod
    def run(self, state: BuildState) -> BuildState:
        return state
