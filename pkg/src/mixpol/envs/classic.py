"""Classic control tasks with continuous actions in [-1, 1].

Dynamics follow the canonical open-source formulations (Pendulum v1; the
book Acrobot and MountainCar adapted to a continuous torque/force). Each
task comes in a shaped and an unshaped reward variant; dynamics, cutoffs,
and termination rules are shared within a pair.
"""

from __future__ import annotations

import numpy as np

from ..numerics.rng import Rng
from .core import EnvState, StepResult


def _wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def _clip_action(action) -> float:
    return float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0],
                         -1.0, 1.0))


class PendulumEnv:
    """Torque-limited swing-up; no termination, 200-step episodes.

    shaped: negative canonical cost (angle^2 + 0.1 thdot^2 + 0.001 u^2)
    unshaped: 1 while the post-step angle is within 0.25 of upright, else 0
    """

    obs_dim = 3
    act_dim = 1
    cutoff = 200

    G, M, L, DT = 10.0, 1.0, 1.0, 0.05
    MAX_TORQUE = 2.0
    MAX_SPEED = 8.0

    def __init__(self, shaped: bool):
        self.shaped = shaped

    def _obs(self, internal):
        th, thdot = internal
        return np.array([np.cos(th), np.sin(th), thdot])

    def reset(self, rng: Rng):
        th = rng.uniform(-np.pi, np.pi)
        thdot = rng.uniform(-1.0, 1.0)
        internal = np.array([th, thdot])
        return EnvState(self._obs(internal), 0, False, internal)

    def step(self, state, action):
        if state.done:
            raise ValueError("cannot step a finished episode")
        th, thdot = state.internal
        u = self.MAX_TORQUE * _clip_action(action)

        if self.shaped:
            reward = -(_wrap_angle(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)

        thdot = thdot + self.DT * (3.0 * self.G / (2.0 * self.L) * np.sin(th)
                                   + 3.0 / (self.M * self.L ** 2) * u)
        thdot = np.clip(thdot, -self.MAX_SPEED, self.MAX_SPEED)
        th = th + self.DT * thdot

        if not self.shaped:
            reward = 1.0 if abs(_wrap_angle(th)) < 0.25 else 0.0

        internal = np.array([th, thdot])
        idx = state.step_index + 1
        truncated = idx >= self.cutoff
        next_state = EnvState(self._obs(internal), idx, truncated, internal)
        return (StepResult(next_state.observation, float(reward), False,
                           truncated), next_state)


class AcrobotEnv:
    """Two-link underactuated swing-up, torque on the second joint.

    Book dynamics integrated with RK4 at dt = 0.2. Both variants terminate
    once the tip height -cos(th1) - cos(th1 + th2) exceeds 1.
    shaped: height - 1 each step; unshaped: -1 per step, 0 on the goal step
    """

    obs_dim = 6
    act_dim = 1
    cutoff = 1000

    DT = 0.2
    M1 = M2 = 1.0
    L1 = 1.0
    LC1 = LC2 = 0.5
    I1 = I2 = 1.0
    G = 9.8
    MAX_VEL1 = 4.0 * np.pi
    MAX_VEL2 = 9.0 * np.pi

    def __init__(self, shaped: bool):
        self.shaped = shaped

    def _obs(self, internal):
        th1, th2, d1, d2 = internal
        return np.array([np.cos(th1), np.sin(th1), np.cos(th2), np.sin(th2),
                         d1, d2])

    def reset(self, rng: Rng):
        internal = rng.uniform(-0.1, 0.1, size=4)
        return EnvState(self._obs(internal), 0, False, internal)

    def _dsdt(self, s, torque):
        m1, m2, l1, lc1, lc2, i1, i2, g = (self.M1, self.M2, self.L1,
                                           self.LC1, self.LC2, self.I1,
                                           self.I2, self.G)
        th1, th2, d1, d2 = s
        d11 = (m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2
               + 2 * l1 * lc2 * np.cos(th2)) + i1 + i2)
        d22 = m2 * lc2 ** 2 + i2
        d12 = m2 * (lc2 ** 2 + l1 * lc2 * np.cos(th2)) + i2
        phi2 = m2 * lc2 * g * np.cos(th1 + th2 - np.pi / 2.0)
        phi1 = (-m2 * l1 * lc2 * d2 ** 2 * np.sin(th2)
                - 2 * m2 * l1 * lc2 * d2 * d1 * np.sin(th2)
                + (m1 * lc1 + m2 * l1) * g * np.cos(th1 - np.pi / 2.0)
                + phi2)
        dd2 = ((torque + d12 / d11 * phi1
                - m2 * l1 * lc2 * d1 ** 2 * np.sin(th2) - phi2)
               / (d22 - d12 ** 2 / d11))
        dd1 = -(d12 * dd2 + phi1) / d11
        return np.array([d1, d2, dd1, dd2])

    def _rk4(self, s, torque):
        dt = self.DT
        k1 = self._dsdt(s, torque)
        k2 = self._dsdt(s + 0.5 * dt * k1, torque)
        k3 = self._dsdt(s + 0.5 * dt * k2, torque)
        k4 = self._dsdt(s + dt * k3, torque)
        return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def step(self, state, action):
        if state.done:
            raise ValueError("cannot step a finished episode")
        torque = _clip_action(action)
        s = self._rk4(state.internal, torque)
        s[0] = _wrap_angle(s[0])
        s[1] = _wrap_angle(s[1])
        s[2] = np.clip(s[2], -self.MAX_VEL1, self.MAX_VEL1)
        s[3] = np.clip(s[3], -self.MAX_VEL2, self.MAX_VEL2)

        height = -np.cos(s[0]) - np.cos(s[1] + s[0])
        terminated = bool(height > 1.0)
        if self.shaped:
            reward = height - 1.0
        else:
            reward = 0.0 if terminated else -1.0

        idx = state.step_index + 1
        truncated = (not terminated) and idx >= self.cutoff
        next_state = EnvState(self._obs(s), idx, terminated or truncated, s)
        return (StepResult(next_state.observation, float(reward), terminated,
                           truncated), next_state)


class MountainCarEnv:
    """Underpowered car in a valley; force = 0.0015 * action.

    Both variants terminate at x >= 0.45.
    shaped: x - 0.6 each step; unshaped: -1 per step, 0 on the goal step
    """

    obs_dim = 2
    act_dim = 1
    cutoff = 1000

    FORCE = 0.0015
    GRAVITY = 0.0025
    POS_RANGE = (-1.2, 0.6)
    MAX_SPEED = 0.07
    GOAL = 0.45

    def __init__(self, shaped: bool):
        self.shaped = shaped

    def reset(self, rng: Rng):
        internal = np.array([rng.uniform(-0.6, -0.4), 0.0])
        return EnvState(internal.copy(), 0, False, internal)

    def step(self, state, action):
        if state.done:
            raise ValueError("cannot step a finished episode")
        x, v = state.internal
        a = _clip_action(action)
        v = v + self.FORCE * a - self.GRAVITY * np.cos(3.0 * x)
        v = np.clip(v, -self.MAX_SPEED, self.MAX_SPEED)
        x = x + v
        x = np.clip(x, *self.POS_RANGE)
        if x <= self.POS_RANGE[0] and v < 0:
            v = 0.0

        terminated = bool(x >= self.GOAL)
        if self.shaped:
            reward = x - 0.6
        else:
            reward = 0.0 if terminated else -1.0

        internal = np.array([x, v])
        idx = state.step_index + 1
        truncated = (not terminated) and idx >= self.cutoff
        next_state = EnvState(internal.copy(), idx, terminated or truncated,
                              internal)
        return (StepResult(next_state.observation, float(reward), terminated,
                           truncated), next_state)
