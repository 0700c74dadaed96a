"""Episode bookkeeping shared by every environment."""

from dataclasses import dataclass

import numpy as np


@dataclass
class EnvState:
    observation: np.ndarray
    step_index: int
    done: bool
    internal: np.ndarray   # physical coordinates; empty for stateless tasks


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
