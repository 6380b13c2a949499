"""Differential-drive kinematics, terrain disturbance processes, footprint collision."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .util import wrap_angle
from .world import VineyardWorld

DT = 0.1  # control period, seconds (10 Hz)


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    yaw: float                      # wrapped to (-pi, pi]
    v_prev: float = 0.0
    omega_prev: float = 0.0


@dataclass(frozen=True)
class PlatformSpec:
    """Footprint and camera mount of one rover platform."""

    name: str
    length: float
    width: float
    camera_forward: float
    camera_up: float

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("footprint dimensions must be positive")


JACKAL = PlatformSpec("jackal", length=0.508, width=0.430,
                      camera_forward=0.20, camera_up=0.30)
HUSKY = PlatformSpec("husky", length=0.990, width=0.670,
                     camera_forward=0.40, camera_up=0.55)

PLATFORMS = {p.name: p for p in (JACKAL, HUSKY)}


def platform_by_name(name: str) -> PlatformSpec:
    try:
        return PLATFORMS[name]
    except KeyError:
        raise KeyError(f"unknown platform {name!r}; choices: {sorted(PLATFORMS)}") from None


@dataclass
class OUProcess:
    """Mean-reverting disturbance with an exact discrete (AR(1)) update.

    Parameterized by the stationary standard deviation, so configured sigma
    is what a long sample run measures.
    """

    stationary_std: float
    reversion_rate: float = 5.0     # 1/s
    value: float = 0.0

    def reset(self, rng: np.random.Generator) -> None:
        self.value = float(rng.normal(0.0, self.stationary_std)) if self.stationary_std > 0 else 0.0

    def sample(self, dt: float, rng: np.random.Generator) -> float:
        phi = math.exp(-self.reversion_rate * dt)
        noise = self.stationary_std * math.sqrt(max(0.0, 1.0 - phi * phi))
        self.value = phi * self.value + noise * float(rng.normal())
        return self.value


@dataclass
class TerrainDisturbance:
    """Yaw-rate and camera-pitch perturbations standing in for rough terrain."""

    yaw_rate_std: float = 0.08      # rad/s
    pitch_std: float = 0.02         # rad
    reversion_rate: float = 5.0

    def __post_init__(self):
        self._yaw = OUProcess(self.yaw_rate_std, self.reversion_rate)
        self._pitch = OUProcess(self.pitch_std, self.reversion_rate)

    def reset(self, rng: np.random.Generator) -> None:
        self._yaw.reset(rng)
        self._pitch.reset(rng)

    def sample(self, dt: float, rng: np.random.Generator) -> tuple[float, float]:
        """Advance both processes; returns (yaw-rate disturbance, camera pitch)."""
        return self._yaw.sample(dt, rng), self._pitch.sample(dt, rng)


def step_kinematics(state: RobotState, v: float, omega: float,
                    yaw_disturbance: float, dt: float) -> RobotState:
    """Unicycle update; the disturbance adds to the commanded yaw rate."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.x + v * math.cos(state.yaw) * dt
    y = state.y + v * math.sin(state.yaw) * dt
    yaw = wrap_angle(state.yaw + (omega + yaw_disturbance) * dt)
    return RobotState(x=x, y=y, yaw=yaw, v_prev=v, omega_prev=omega)


def rectangle_circle_intersects(cx: float, cy: float, yaw: float,
                                half_len: float, half_wid: float,
                                px: float, py: float, radius: float) -> bool:
    """Exact oriented-rectangle vs circle test via clamping in the body frame."""
    c, s = math.cos(yaw), math.sin(yaw)
    rx = px - cx
    ry = py - cy
    lx = c * rx + s * ry
    ly = -s * rx + c * ry
    qx = min(max(lx, -half_len), half_len)
    qy = min(max(ly, -half_wid), half_wid)
    dx = lx - qx
    dy = ly - qy
    return dx * dx + dy * dy <= radius * radius


def check_collision(world: VineyardWorld, x: float, y: float, yaw: float,
                    platform: PlatformSpec) -> bool:
    """True iff the oriented footprint rectangle overlaps any plant trunk."""
    half_len = platform.length / 2.0
    half_wid = platform.width / 2.0
    reach = math.hypot(half_len, half_wid) + 0.05
    for i in world.nearby_plant_indices((x, y), reach):
        p = world.plants[i]
        if rectangle_circle_intersects(x, y, yaw, half_len, half_wid,
                                       p.position[0], p.position[1], p.trunk_radius):
            return True
    return False
