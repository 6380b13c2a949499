import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vinenav.robot import (DT, HUSKY, JACKAL, OUProcess, PlatformSpec,
                           TerrainDisturbance, check_collision, platform_by_name,
                           rectangle_circle_intersects, step_kinematics, RobotState)
from vinenav.world import PlantInstance, VineyardWorld, WorldConfig, generate_world


def world_with_plants(plants):
    cfg = WorldConfig(rows=2, row_length=5.0, jitter=0.0)
    base = generate_world(cfg, seed=0)
    from dataclasses import replace
    rows = [replace(base.rows[0], plants=tuple(plants),
                    plant_arclengths=tuple(0.0 for _ in plants)),
            replace(base.rows[1], plants=(), plant_arclengths=())]
    return VineyardWorld(rows, base.inter_row_distances, 0, cfg)


class TestKinematics:
    def test_straight_motion(self):
        s = RobotState(0.0, 0.0, 0.0)
        out = step_kinematics(s, v=0.5, omega=0.0, yaw_disturbance=0.0, dt=0.1)
        assert out.x == pytest.approx(0.05)
        assert out.y == 0.0
        assert out.yaw == 0.0
        assert (out.v_prev, out.omega_prev) == (0.5, 0.0)

    def test_pivot(self):
        s = RobotState(1.0, 2.0, 0.3)
        out = step_kinematics(s, v=0.0, omega=1.0, yaw_disturbance=0.0, dt=0.1)
        assert (out.x, out.y) == (1.0, 2.0)
        assert out.yaw == pytest.approx(0.4)

    def test_disturbance_statistics(self):
        # std of yaw increments under the disturbance tracks sigma * dt
        rng = np.random.default_rng(5)
        proc = OUProcess(stationary_std=0.08, reversion_rate=5.0)
        proc.reset(rng)
        s = RobotState(0.0, 0.0, 0.0)
        increments = []
        for _ in range(1000):
            eta = proc.sample(DT, rng)
            nxt = step_kinematics(s, v=0.0, omega=0.0, yaw_disturbance=eta, dt=DT)
            increments.append(nxt.yaw - s.yaw)
            s = nxt
        measured = float(np.std(increments))
        assert abs(measured - 0.08 * DT) / (0.08 * DT) < 0.10

    @given(st.floats(-50, 50), st.floats(0.01, 1.0), st.floats(-1, 1),
           st.floats(-0.3, 0.3))
    @settings(max_examples=200, deadline=None)
    def test_yaw_always_wrapped(self, yaw0, dt, omega, eta):
        s = RobotState(0.0, 0.0, math.remainder(yaw0, 2 * math.pi))
        out = step_kinematics(s, v=0.3, omega=omega, yaw_disturbance=eta, dt=dt)
        assert -math.pi < out.yaw <= math.pi

    def test_deterministic(self):
        s = RobotState(0.3, -0.2, 1.1, 0.1, 0.2)
        a = step_kinematics(s, 0.4, -0.5, 0.02, 0.1)
        b = step_kinematics(s, 0.4, -0.5, 0.02, 0.1)
        assert a == b

    def test_bad_dt_rejected(self):
        with pytest.raises(ValueError):
            step_kinematics(RobotState(0, 0, 0), 0.1, 0.0, 0.0, dt=0.0)


class TestOUProcess:
    def test_stationary_std(self):
        rng = np.random.default_rng(2)
        proc = OUProcess(stationary_std=0.02, reversion_rate=5.0)
        proc.reset(rng)
        samples = [proc.sample(0.1, rng) for _ in range(4000)]
        assert abs(np.std(samples) - 0.02) / 0.02 < 0.10
        assert abs(np.mean(samples)) < 3 * 0.02 / math.sqrt(300)  # effective n

    def test_terrain_reset_deterministic(self):
        t1 = TerrainDisturbance()
        t2 = TerrainDisturbance()
        t1.reset(np.random.default_rng(9))
        t2.reset(np.random.default_rng(9))
        r1 = [t1.sample(0.1, np.random.default_rng(10)) for _ in range(5)]
        r2 = [t2.sample(0.1, np.random.default_rng(10)) for _ in range(5)]
        assert r1 == r2


class TestCollision:
    def test_centered_in_corridor_clear(self):
        plants = [PlantInstance((2.0, 0.75)), PlantInstance((2.0, -0.75)),
                  PlantInstance((2.8, 0.75)), PlantInstance((2.8, -0.75))]
        world = world_with_plants(plants)
        assert not check_collision(world, 2.4, 0.0, 0.0, JACKAL)

    def test_trunk_under_footprint(self):
        world = world_with_plants([PlantInstance((2.0, 0.0), trunk_radius=0.06)])
        assert check_collision(world, 2.05, 0.0, 0.0, JACKAL)

    def test_matches_point_sampling_oracle(self, rng):
        """1000 random configurations vs a 1 mm footprint grid, zero disagreements."""
        grid_step = 1e-3
        disagreements = 0
        for _ in range(1000):
            half_len = rng.uniform(0.1, 0.6)
            half_wid = rng.uniform(0.1, 0.5)
            yaw = rng.uniform(-math.pi, math.pi)
            px, py = rng.uniform(-1.2, 1.2, size=2)
            radius = rng.uniform(0.02, 0.3)

            exact = rectangle_circle_intersects(0.0, 0.0, yaw, half_len, half_wid,
                                                px, py, radius)
            xs = np.arange(-half_len, half_len + grid_step / 2, grid_step)
            ys = np.arange(-half_wid, half_wid + grid_step / 2, grid_step)
            gx, gy = np.meshgrid(xs, ys)
            c, s = math.cos(yaw), math.sin(yaw)
            wx = c * gx - s * gy
            wy = s * gx + c * gy
            sampled = bool(np.any((wx - px) ** 2 + (wy - py) ** 2 <= radius ** 2))
            disagreements += int(exact != sampled)
        assert disagreements == 0

    def test_footprint_monotone(self, rng):
        world = world_with_plants(
            [PlantInstance((rng.uniform(0, 4), rng.uniform(-1, 1))) for _ in range(8)])
        small = JACKAL
        big = PlatformSpec("big", length=small.length * 1.5, width=small.width * 1.5,
                           camera_forward=0.2, camera_up=0.3)
        for _ in range(400):
            x, y = rng.uniform(-0.5, 4.5), rng.uniform(-1.5, 1.5)
            yaw = rng.uniform(-math.pi, math.pi)
            if check_collision(world, x, y, yaw, small):
                assert check_collision(world, x, y, yaw, big)

    def test_platform_changes_only_geometry(self):
        s = RobotState(0.0, 0.0, 0.2)
        out_a = step_kinematics(s, 0.3, 0.1, 0.0, 0.1)
        out_b = step_kinematics(s, 0.3, 0.1, 0.0, 0.1)
        assert out_a == out_b  # kinematics has no platform dependence
        assert JACKAL.length != HUSKY.length
        assert platform_by_name("husky").camera_up != platform_by_name("jackal").camera_up

    def test_unknown_platform(self):
        with pytest.raises(KeyError):
            platform_by_name("rover9000")
