"""Environments: synthetic bandits and classic control, both variants."""

from .bandits import (ACTION_STRETCH, BanditEnv, BanditSpec,
                      make_bimodal_bandit, make_multimodal_bandit)
from .classic import AcrobotEnv, MountainCarEnv, PendulumEnv
from .core import EnvState, StepResult

KINDS = ("multimodal-bandit", "bimodal-bandit", "pendulum-shaped", "pendulum",
         "acrobot-shaped", "acrobot", "mountaincar-shaped", "mountaincar")


def make_env(kind: str, bandit_seed: int = 0):
    """Build an environment by its CLI identifier.

    bandit_seed only matters for multimodal-bandit, which is a family of
    randomly generated tasks.
    """
    if kind == "multimodal-bandit":
        return BanditEnv(make_multimodal_bandit(bandit_seed))
    if kind == "bimodal-bandit":
        return BanditEnv(make_bimodal_bandit())
    if kind == "pendulum-shaped":
        return PendulumEnv(shaped=True)
    if kind == "pendulum":
        return PendulumEnv(shaped=False)
    if kind == "acrobot-shaped":
        return AcrobotEnv(shaped=True)
    if kind == "acrobot":
        return AcrobotEnv(shaped=False)
    if kind == "mountaincar-shaped":
        return MountainCarEnv(shaped=True)
    if kind == "mountaincar":
        return MountainCarEnv(shaped=False)
    raise ValueError(f"unknown environment kind {kind!r}; known: {KINDS}")


__all__ = ["ACTION_STRETCH", "AcrobotEnv", "BanditEnv", "BanditSpec",
           "EnvState", "KINDS", "MountainCarEnv", "PendulumEnv", "StepResult",
           "make_bimodal_bandit", "make_env", "make_multimodal_bandit"]
