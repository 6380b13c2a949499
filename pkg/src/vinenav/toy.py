"""Vision-free toy corridor: a 1-D-state MDP exercising the full SAC stack.

The robot observes only its heading deviation psi; position along the
corridor is hidden. Progress accrues as v*cos(psi), a yaw-rate disturbance
pushes psi around, and the episode ends on the same outcomes and bonuses as
the full environment (minus collision). A policy must learn to steer psi
toward zero while driving fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import Action, EpisodeConfig, Outcome, RewardConfig, StepResult, reward_distance, reward_heading, compose_reward
from .robot import OUProcess
from .util import stream_rng, wrap_angle


@dataclass(frozen=True)
class ToyObservation:
    state_vec: np.ndarray
    depth = None


class ToyCorridorEnv:
    """Heading-control corridor with hidden longitudinal position."""

    def __init__(self, seed: int, length: float = 4.0, dt: float = 0.1,
                 max_steps: int = 140, disturbance_std: float = 0.30,
                 reversion_rate: float = 1.0,
                 reward_cfg: RewardConfig = RewardConfig()):
        self.seed = int(seed)
        self.length = length
        self.dt = dt
        self.episode_cfg = EpisodeConfig(max_steps=max_steps, reposition_period=1)
        self.reward_cfg = reward_cfg
        self.disturbance = OUProcess(disturbance_std, reversion_rate)
        self._rng: np.random.Generator | None = None
        self._psi = 0.0
        self._x = 0.0
        self._v_prev = 0.0
        self._omega_prev = 0.0
        self._steps = 0
        self._outcome = Outcome.RUNNING

    def reset(self, episode_index: int) -> ToyObservation:
        self._rng = stream_rng(self.seed, f"toy-ep-{episode_index}")
        self._psi = float(self._rng.uniform(-0.5, 0.5))
        self._x = 0.0
        self._v_prev = 0.0
        self._omega_prev = 0.0
        self._steps = 0
        self._outcome = Outcome.RUNNING
        self.disturbance.reset(self._rng)
        return self._observe()

    def _observe(self) -> ToyObservation:
        return ToyObservation(state_vec=np.array([self._psi], dtype=np.float32))

    def step(self, action: Action) -> StepResult:
        if self._rng is None:
            raise RuntimeError("call reset() before step()")
        if self._outcome.terminal:
            raise RuntimeError("episode already terminated; call reset()")
        eta = self.disturbance.sample(self.dt, self._rng)
        self._psi = wrap_angle(self._psi + (action.omega + eta) * self.dt)
        d_prev = self.length - self._x
        self._x += action.v * math.cos(self._psi) * self.dt
        d_cur = self.length - self._x
        self._v_prev, self._omega_prev = action.v, action.omega
        self._steps += 1

        if abs(self._psi) > self.reward_cfg.yaw_limit:
            outcome = Outcome.REVERSE
        elif self._x >= self.length:
            outcome = Outcome.SUCCESS
        elif self._steps >= self.episode_cfg.max_steps:
            outcome = Outcome.TIMEOUT
        else:
            outcome = Outcome.RUNNING
        self._outcome = outcome

        r = compose_reward(reward_heading(wrap_angle(-self._psi)),
                           reward_distance(d_prev, d_cur), outcome, self.reward_cfg)
        info = {"x": self._x, "psi": self._psi, "step": self._steps}
        return StepResult(observation=self._observe(), reward=r,
                          outcome=outcome, info=info)
