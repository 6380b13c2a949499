"""Row-navigation MDP: observations, shaped rewards, termination, episode loop.

The agent sees only a noisy depth frame and [v_prev, omega_prev, psi]; pose
enters reward and termination bookkeeping but never the observation. Yaw in
the observation is measured relative to the corridor tangent at the episode's
start pose (an IMU zeroed at episode start); the reverse check uses the local
tangent so it stays meaningful on curved rows.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .robot import (DT, PlatformSpec, RobotState, TerrainDisturbance, JACKAL,
                    check_collision, step_kinematics)
from .sensor import CameraParams, NoiseSpec, apply_noise, render_depth
from .util import stream_rng, wrap_angle
from .world import CorridorFrame, VineyardWorld, corridor_frame

V_MAX = 0.5
OMEGA_MAX = 1.0
_EDGE = 1e-7


class Outcome(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    COLLISION = "collision"
    REVERSE = "reverse"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        return self is not Outcome.RUNNING


@dataclass(frozen=True)
class Action:
    """Velocity command; v in (0, 0.5) m/s, omega in (-1, 1) rad/s, open intervals."""

    v: float
    omega: float

    def __post_init__(self):
        if not (0.0 < self.v < V_MAX):
            raise ValueError(f"v={self.v} outside (0, {V_MAX})")
        if not (-OMEGA_MAX < self.omega < OMEGA_MAX):
            raise ValueError(f"omega={self.omega} outside (-{OMEGA_MAX}, {OMEGA_MAX})")

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=np.float32)


def uniform_action(rng: np.random.Generator) -> Action:
    """Uniform draw over the open action box."""
    v = float(rng.uniform(0.0, V_MAX))
    w = float(rng.uniform(-OMEGA_MAX, OMEGA_MAX))
    v = min(max(v, _EDGE), V_MAX - _EDGE)
    w = min(max(w, -OMEGA_MAX + _EDGE), OMEGA_MAX - _EDGE)
    return Action(v, w)


@dataclass(frozen=True)
class Observation:
    """Agent-visible data only: the noisy depth frame and the 3-vector."""

    depth: np.ndarray                       # (112, 112) float32
    state_vec: np.ndarray                   # [v_prev, omega_prev, psi] float32


@dataclass(frozen=True)
class RewardConfig:
    heading_coeff: float = 0.6              # a
    distance_coeff: float = 35.0            # b
    success_bonus: float = 1000.0
    collision_penalty: float = -500.0
    reverse_penalty: float = -500.0
    yaw_limit: float = math.radians(85.0)


@dataclass(frozen=True)
class StartSpec:
    """Fixed start pose for evaluation runs (corridor entry, centered)."""

    corridor_id: int
    direction: str = "F"
    arclength: float = 0.3
    lateral: float = 0.0
    yaw_offset: float = 0.0


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 700                    # T
    reposition_period: int = 10             # episodes per start-pose draw
    start_lateral: float = 0.3              # +- m around the median
    start_yaw: float = math.radians(30.0)   # +- around the travel tangent
    start_margin: float = 0.3               # keep-off from the corridor ends, m
    corridor_ids: Optional[tuple[int, ...]] = None  # None = all corridors

    def __post_init__(self):
        if self.max_steps < 1 or self.reposition_period < 1:
            raise ValueError("max_steps and reposition_period must be >= 1")


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    outcome: Outcome
    info: dict


def heading_error(x: float, y: float, yaw: float, frame: CorridorFrame) -> float:
    """Angle between the robot heading and the straight line to the EoR point."""
    ex, ey = frame.eor
    return wrap_angle(math.atan2(ey - y, ex - x) - yaw)


def reward_heading(phi: float) -> float:
    """1 - 2*sqrt(|phi/pi|), in [-1, 1]; maximal when facing the EoR."""
    return 1.0 - 2.0 * math.sqrt(abs(phi) / math.pi)


def reward_distance(d_prev: float, d_cur: float) -> float:
    """Progress toward the EoR between consecutive steps."""
    return d_prev - d_cur


def compose_reward(r_h: float, r_d: float, outcome: Outcome, cfg: RewardConfig) -> float:
    r = cfg.heading_coeff * r_h + cfg.distance_coeff * r_d
    if outcome is Outcome.SUCCESS:
        r += cfg.success_bonus
    elif outcome is Outcome.COLLISION:
        r += cfg.collision_penalty
    elif outcome is Outcome.REVERSE:
        r += cfg.reverse_penalty
    return r


def check_termination(x: float, y: float, yaw: float, frame: CorridorFrame,
                      step_index: int, world: VineyardWorld, platform: PlatformSpec,
                      reward_cfg: RewardConfig, max_steps: int) -> Outcome:
    """Episode-ending test; priority collision > reverse > success > timeout."""
    if check_collision(world, x, y, yaw, platform):
        return Outcome.COLLISION
    if abs(wrap_angle(yaw - frame.local_tangent((x, y)))) > reward_cfg.yaw_limit:
        return Outcome.REVERSE
    if frame.gate_progress((x, y)) > 0.0:
        return Outcome.SUCCESS
    if step_index >= max_steps:
        return Outcome.TIMEOUT
    return Outcome.RUNNING


@dataclass
class _EpisodeState:
    frame: CorridorFrame
    robot: RobotState
    psi_ref: float
    d_prev: float
    step_index: int
    outcome: Outcome
    noise_rng: np.random.Generator
    terrain_rng: np.random.Generator
    pitch: float


class VineyardEnv:
    """Single-robot episodic environment over one vineyard world."""

    def __init__(self, world: VineyardWorld, seed: int,
                 camera: Optional[CameraParams] = None,
                 noise: NoiseSpec = NoiseSpec(),
                 platform: PlatformSpec = JACKAL,
                 reward_cfg: RewardConfig = RewardConfig(),
                 episode_cfg: EpisodeConfig = EpisodeConfig(),
                 terrain: Optional[TerrainDisturbance] = None,
                 dt: float = DT,
                 fixed_start: Optional[StartSpec] = None):
        self.world = world
        self.seed = int(seed)
        self.platform = platform
        self.camera = camera or CameraParams(mount_forward=platform.camera_forward,
                                             mount_up=platform.camera_up)
        self.noise = noise
        self.reward_cfg = reward_cfg
        self.episode_cfg = episode_cfg
        self.terrain = terrain if terrain is not None else TerrainDisturbance()
        self.dt = dt
        self.fixed_start = fixed_start
        ids = episode_cfg.corridor_ids
        self._corridors = tuple(ids) if ids else tuple(range(world.corridor_count))
        self._frames: dict[tuple[int, str], CorridorFrame] = {}
        self._cached_start: Optional[tuple[int, StartSpec]] = None
        self._ep: Optional[_EpisodeState] = None
        self.episode_index = -1

    # -- start pose handling --------------------------------------------

    def _frame(self, corridor_id: int, direction: str) -> CorridorFrame:
        key = (corridor_id, direction)
        if key not in self._frames:
            self._frames[key] = corridor_frame(self.world, corridor_id, direction)
        return self._frames[key]

    def _draw_start(self, block: int) -> StartSpec:
        cfg = self.episode_cfg
        rng = stream_rng(self.seed, f"start-block-{block}")
        for _ in range(64):
            corridor = int(rng.choice(self._corridors))
            direction = "F" if rng.random() < 0.5 else "R"
            frame = self._frame(corridor, direction)
            s = float(rng.uniform(cfg.start_margin, frame.length - 1.0))
            lateral = float(rng.uniform(-cfg.start_lateral, cfg.start_lateral))
            yaw_off = float(rng.uniform(-cfg.start_yaw, cfg.start_yaw))
            spec = StartSpec(corridor, direction, s, lateral, yaw_off)
            x, y, yaw = self._start_pose(spec)
            if not check_collision(self.world, x, y, yaw, self.platform):
                return spec
        raise RuntimeError("could not draw a collision-free start pose")

    def _start_pose(self, spec: StartSpec) -> tuple[float, float, float]:
        frame = self._frame(spec.corridor_id, spec.direction)
        i = int(np.searchsorted(frame.arclengths, spec.arclength))
        i = min(max(i, 0), len(frame.median) - 1)
        mx, my = frame.median[i]
        h = frame.tangent_at(spec.arclength)
        # lateral offset along the left normal of the travel direction
        x = mx - spec.lateral * math.sin(h)
        y = my + spec.lateral * math.cos(h)
        return x, y, wrap_angle(h + spec.yaw_offset)

    # -- episode API ------------------------------------------------------

    def reset(self, episode_index: int) -> Observation:
        if episode_index < 0:
            raise ValueError("episode_index must be >= 0")
        self.episode_index = episode_index
        if self.fixed_start is not None:
            spec = self.fixed_start
        else:
            block = episode_index // self.episode_cfg.reposition_period
            if self._cached_start is None or self._cached_start[0] != block:
                self._cached_start = (block, self._draw_start(block))
            spec = self._cached_start[1]
        frame = self._frame(spec.corridor_id, spec.direction)
        x, y, yaw = self._start_pose(spec)
        if check_collision(self.world, x, y, yaw, self.platform):
            raise RuntimeError("start pose is in collision")

        noise_rng = stream_rng(self.seed, f"ep-{episode_index}-noise")
        terrain_rng = stream_rng(self.seed, f"ep-{episode_index}-terrain")
        self.terrain.reset(terrain_rng)
        pitch = self.terrain._pitch.value
        robot = RobotState(x=x, y=y, yaw=yaw)
        self._ep = _EpisodeState(
            frame=frame, robot=robot,
            psi_ref=frame.tangent_at(frame.nearest_arclength((x, y))),
            d_prev=frame.distance_to_eor((x, y)),
            step_index=0, outcome=Outcome.RUNNING,
            noise_rng=noise_rng, terrain_rng=terrain_rng, pitch=pitch)
        return self._observe()

    def _observe(self) -> Observation:
        ep = self._ep
        depth = render_depth(self.world, ep.robot.x, ep.robot.y, ep.robot.yaw,
                             self.camera, pitch_disturbance=ep.pitch)
        depth = apply_noise(depth, self.noise, ep.noise_rng, self.camera.max_range)
        psi = wrap_angle(ep.robot.yaw - ep.psi_ref)
        vec = np.array([ep.robot.v_prev, ep.robot.omega_prev, psi], dtype=np.float32)
        return Observation(depth=depth.astype(np.float32), state_vec=vec)

    def step(self, action: Action) -> StepResult:
        ep = self._ep
        if ep is None:
            raise RuntimeError("call reset() before step()")
        if ep.outcome.terminal:
            raise RuntimeError("episode already terminated; call reset()")

        eta_omega, pitch = self.terrain.sample(self.dt, ep.terrain_rng)
        ep.pitch = pitch
        ep.robot = step_kinematics(ep.robot, action.v, action.omega, eta_omega, self.dt)
        ep.step_index += 1

        x, y, yaw = ep.robot.x, ep.robot.y, ep.robot.yaw
        d_cur = ep.frame.distance_to_eor((x, y))
        phi = heading_error(x, y, yaw, ep.frame)
        outcome = check_termination(x, y, yaw, ep.frame, ep.step_index, self.world,
                                    self.platform, self.reward_cfg,
                                    self.episode_cfg.max_steps)
        r_h = reward_heading(phi)
        r_d = reward_distance(ep.d_prev, d_cur)
        reward = compose_reward(r_h, r_d, outcome, self.reward_cfg)
        ep.d_prev = d_cur
        ep.outcome = outcome

        obs = self._observe()
        info = {"x": x, "y": y, "yaw": yaw, "d": d_cur, "phi": phi,
                "step": ep.step_index, "r_h": r_h, "r_d": r_d}
        return StepResult(observation=obs, reward=reward, outcome=outcome, info=info)

    @property
    def current_frame(self) -> CorridorFrame:
        if self._ep is None:
            raise RuntimeError("no active episode")
        return self._ep.frame

    @property
    def initial_distance(self) -> float:
        if self._ep is None:
            raise RuntimeError("no active episode")
        return self._ep.d_prev if self._ep.step_index == 0 else math.nan


@dataclass
class EpisodeLog:
    """Step records of one episode, the substrate for all evaluation metrics."""

    corridor_id: int
    direction: str
    rows: list = field(default_factory=list)   # (t, x, y, yaw, v, omega, r, d, phi)
    outcome: Outcome = Outcome.RUNNING
    total_reward: float = 0.0

    HEADER = "t,x,y,yaw,v,omega,reward,d,phi,outcome"

    def append(self, t: int, x: float, y: float, yaw: float, v: float,
               omega: float, r: float, d: float, phi: float) -> None:
        self.rows.append((t, x, y, yaw, v, omega, r, d, phi))
        self.total_reward += r

    @property
    def steps(self) -> int:
        return len(self.rows)

    def positions(self) -> np.ndarray:
        return np.array([(r[1], r[2]) for r in self.rows], dtype=np.float64)

    def actions(self) -> np.ndarray:
        return np.array([(r[4], r[5]) for r in self.rows], dtype=np.float64)

    def to_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(self.HEADER + "\n")
            for row in self.rows:
                f.write(",".join(repr(v) for v in row) + f",{self.outcome.value}\n")
