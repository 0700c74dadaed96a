"""Continuous bandits built from sums of Gaussian density kernels.

The reward is an average of kernel densities, so r_max is bounded by the
tallest kernel and found reliably by grid search. Policies act in [-1, 1];
the environment stretches actions by 3 so the kernel support is reachable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import autodiff as ad
from ..numerics.rng import Rng
from .core import EnvState, StepResult

ACTION_STRETCH = 3.0
_GRID_POINTS = 5000


@dataclass
class BanditSpec:
    means: np.ndarray            # (n_kernels,)
    stds: np.ndarray             # (n_kernels,)
    normalizer: float
    action_range: tuple = (-3.0, 3.0)
    _r_max: float = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if np.any(self.stds <= 0):
            raise ValueError("kernel stds must be positive")
        if self.normalizer <= 0:
            raise ValueError("normalizer must be positive")

    def reward(self, a) -> np.ndarray:
        """Kernel-density average at a; vectorized over any shape."""
        a = np.asarray(a, dtype=np.float64)
        z = (a[..., None] - self.means) / self.stds
        dens = np.exp(-0.5 * z * z) / (self.stds * np.sqrt(2.0 * np.pi))
        return dens.sum(axis=-1) / self.normalizer

    def reward_graph(self, a: ad.Var) -> ad.Var:
        """Same reward as an autodiff graph; last axis is the action dim."""
        z = (a - ad.constant(self.means)) * (1.0 / self.stds)
        coef = 1.0 / (self.stds * np.sqrt(2.0 * np.pi) * self.normalizer)
        return ad.reduce_sum(ad.exp(-0.5 * ad.square(z)) * ad.constant(coef),
                             axis=-1)

    @property
    def r_max(self) -> float:
        if self._r_max is None:
            lo, hi = self.action_range
            grid = np.linspace(lo, hi, _GRID_POINTS)
            self._r_max = float(self.reward(grid).max())
        return self._r_max


def make_multimodal_bandit(seed: int) -> BanditSpec:
    rng = Rng(seed).substream("bandit")
    means = rng.uniform(-3.0, 3.0, size=30)
    stds = rng.uniform(0.1, 1.0, size=30)
    return BanditSpec(means=means, stds=stds, normalizer=30.0)


def make_bimodal_bandit() -> BanditSpec:
    return BanditSpec(means=np.array([-1.0, 1.0]),
                      stds=np.array([0.5, 0.5]), normalizer=2.0)


class BanditEnv:
    """One-step episodes: constant observation, reward at the stretched action."""

    obs_dim = 1
    act_dim = 1
    cutoff = 1

    def __init__(self, spec: BanditSpec):
        self.spec = spec

    def reset(self, rng: Rng):
        return EnvState(observation=np.zeros(1), step_index=0, done=False,
                        internal=np.zeros(0))

    def step(self, state, action):
        if state.done:
            raise ValueError("cannot step a finished episode")
        a = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        r = float(self.spec.reward(ACTION_STRETCH * a))
        result = StepResult(next_observation=np.zeros(1), reward=r,
                            terminated=True, truncated=False)
        next_state = EnvState(observation=np.zeros(1), step_index=1, done=True,
                              internal=np.zeros(0))
        return result, next_state

    def true_critic(self, a: ad.Var) -> ad.Var:
        """Analytic Q for the true-critic agent; a has last axis act_dim."""
        return self.spec.reward_graph(ACTION_STRETCH * a)
