import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vinenav.env import (Action, Observation, Outcome, RewardConfig,
                         StartSpec, VineyardEnv, check_termination, compose_reward,
                         heading_error, reward_distance, reward_heading, uniform_action)
from vinenav.robot import TerrainDisturbance
from vinenav.sensor import NoiseSpec
from vinenav.world import WorldConfig, corridor_frame, generate_world

CFG = RewardConfig()


def quiet_env(world, seed=0, **kw):
    """Environment with terrain disturbance off unless overridden."""
    kw.setdefault("terrain", TerrainDisturbance(yaw_rate_std=0.0, pitch_std=0.0))
    kw.setdefault("noise", NoiseSpec(factor=0.0))
    return VineyardEnv(world, seed=seed, **kw)


@pytest.fixture(scope="module")
def straight_world():
    return generate_world(WorldConfig(rows=2, row_length=10.0, jitter=0.0,
                                      explicit_offsets=(1.8,)), seed=0)


@pytest.fixture(scope="module")
def long_world():
    return generate_world(WorldConfig(rows=2, row_length=20.0, jitter=0.0,
                                      explicit_offsets=(1.8,)), seed=0)


class TestRewardHeading:
    def test_zero_heading(self):
        assert reward_heading(0.0) == 1.0

    def test_pi_extremes(self):
        assert reward_heading(math.pi) == pytest.approx(-1.0)
        assert reward_heading(-math.pi) == pytest.approx(-1.0)

    def test_quarter_pi(self):
        assert reward_heading(math.pi / 4) == pytest.approx(0.0)
        assert reward_heading(-math.pi / 4) == pytest.approx(0.0)

    @given(st.floats(-math.pi, math.pi))
    @settings(max_examples=300, deadline=None)
    def test_even_bounded(self, phi):
        r = reward_heading(phi)
        assert -1.0 <= r <= 1.0
        assert r == pytest.approx(reward_heading(-phi))

    @given(st.floats(0, math.pi - 1e-9), st.floats(1e-9, math.pi))
    @settings(max_examples=300, deadline=None)
    def test_strictly_decreasing_in_magnitude(self, phi, delta):
        hi = min(phi + delta, math.pi)
        assert reward_heading(hi) < reward_heading(phi)


class TestRewardDistance:
    def test_progress(self):
        assert reward_distance(10.00, 9.95) == pytest.approx(0.05)

    def test_stationary(self):
        assert reward_distance(4.2, 4.2) == 0.0

    def test_moving_away(self):
        assert reward_distance(4.2, 4.25) == pytest.approx(-0.05)


class TestComposeReward:
    def test_running(self):
        assert compose_reward(1.0, 0.05, Outcome.RUNNING, CFG) == pytest.approx(2.35)

    def test_success(self):
        assert compose_reward(1.0, 0.05, Outcome.SUCCESS, CFG) == pytest.approx(1002.35)

    def test_collision(self):
        assert compose_reward(0.0, 0.0, Outcome.COLLISION, CFG) == pytest.approx(-500.0)

    def test_reverse(self):
        assert compose_reward(0.0, 0.0, Outcome.REVERSE, CFG) == pytest.approx(-500.0)

    def test_timeout_no_bonus(self):
        assert compose_reward(0.5, 0.01, Outcome.TIMEOUT, CFG) == pytest.approx(
            0.6 * 0.5 + 35.0 * 0.01)


class TestHeadingError:
    def test_facing_eor(self, straight_world):
        frame = corridor_frame(straight_world, 0, "F")
        ex, ey = frame.eor
        assert heading_error(ex - 3.0, ey, 0.0, frame) == pytest.approx(0.0)

    def test_facing_away(self, straight_world):
        frame = corridor_frame(straight_world, 0, "F")
        ex, ey = frame.eor
        assert abs(heading_error(ex - 3.0, ey, math.pi, frame)) == pytest.approx(math.pi)

    def test_diagonal(self, straight_world):
        frame = corridor_frame(straight_world, 0, "F")
        ex, ey = frame.eor
        phi = heading_error(ex - 1.0, ey - 1.0, 0.0, frame)
        assert phi == pytest.approx(math.pi / 4)


class TestTermination:
    def test_past_gate_success(self, straight_world):
        frame = corridor_frame(straight_world, 0, "F")
        out = check_termination(frame.eor[0] + 0.1, frame.eor[1], 0.0, frame, 5,
                                straight_world, __import__("vinenav.robot", fromlist=["JACKAL"]).JACKAL,
                                CFG, 700)
        assert out is Outcome.SUCCESS

    def test_reverse_at_90deg(self, straight_world):
        from vinenav.robot import JACKAL
        frame = corridor_frame(straight_world, 0, "F")
        out = check_termination(5.0, 0.9, math.radians(90.0), frame, 5,
                                straight_world, JACKAL, CFG, 700)
        assert out is Outcome.REVERSE

    def test_timeout_mid_row(self, straight_world):
        from vinenav.robot import JACKAL
        frame = corridor_frame(straight_world, 0, "F")
        out = check_termination(5.0, 0.9, 0.0, frame, 700, straight_world, JACKAL,
                                CFG, 700)
        assert out is Outcome.TIMEOUT

    def test_running_mid_row(self, straight_world):
        from vinenav.robot import JACKAL
        frame = corridor_frame(straight_world, 0, "F")
        out = check_termination(5.0, 0.9, 0.0, frame, 10, straight_world, JACKAL,
                                CFG, 700)
        assert out is Outcome.RUNNING


class TestAction:
    def test_bounds_strict(self):
        with pytest.raises(ValueError):
            Action(0.0, 0.0)
        with pytest.raises(ValueError):
            Action(0.5, 0.0)
        with pytest.raises(ValueError):
            Action(0.25, 1.0)

    def test_near_bounds_accepted(self):
        a = Action(np.nextafter(0.5, 0), np.nextafter(1.0, 0))
        assert 0 < a.v < 0.5 and -1 < a.omega < 1

    def test_uniform_action_in_bounds(self, rng):
        for _ in range(2000):
            a = uniform_action(rng)
            assert 0.0 < a.v < 0.5
            assert -1.0 < a.omega < 1.0


class TestReset:
    def test_reposition_every_ten(self, straight_world):
        env = quiet_env(straight_world, seed=4)
        poses = []
        for ep in range(25):
            env.reset(ep)
            r = env._ep.robot
            poses.append((r.x, r.y, r.yaw))
        assert len(set(poses[0:10])) == 1
        assert len(set(poses[10:20])) == 1
        assert poses[0] != poses[10] or poses[10] != poses[20]

    def test_directions_roughly_balanced(self, straight_world):
        env = quiet_env(straight_world, seed=8)
        dirs = []
        for block in range(400):
            env.reset(block * 10)
            dirs.append(env._ep.frame.direction)
        n_f = dirs.count("F")
        # binomial 3-sigma window around 200
        assert abs(n_f - 200) < 3 * math.sqrt(400 * 0.25)

    def test_reset_sequence_deterministic(self, straight_world):
        seqs = []
        for _ in range(2):
            env = quiet_env(straight_world, seed=12)
            seq = []
            for ep in range(12):
                obs = env.reset(ep)
                seq.append((env._ep.robot.x, env._ep.robot.y, env._ep.robot.yaw,
                            float(obs.depth.sum())))
            seqs.append(seq)
        assert seqs[0] == seqs[1]

    def test_observation_shape_and_vec(self, straight_world):
        env = quiet_env(straight_world, seed=1)
        obs = env.reset(0)
        assert obs.depth.shape == (112, 112)
        assert obs.depth.dtype == np.float32
        assert obs.state_vec.shape == (3,)
        assert obs.state_vec[0] == 0.0 and obs.state_vec[1] == 0.0
        assert -math.pi < obs.state_vec[2] <= math.pi


class TestStep:
    def test_telescoping_and_terminal(self, long_world):
        env = quiet_env(long_world, seed=0,
                        fixed_start=StartSpec(0, "F", arclength=0.3))
        env.reset(0)
        d0 = env.initial_distance
        rewards, r_ds, d_last = [], [], d0
        phi_sum_bound = True
        for t in range(700):
            res = env.step(Action(0.49, 0.0))
            rewards.append(res.reward)
            r_ds.append(res.info["r_d"])
            d_last = res.info["d"]
            assert abs(res.info["r_d"]) <= 0.5 * env.dt + 1e-12
            assert abs(res.info["r_h"]) <= 1.0 + 1e-12
            if res.outcome.terminal:
                final = res.outcome
                break
        assert final is Outcome.SUCCESS
        # telescoping identity: sum of r_d equals d0 - d_final
        assert sum(r_ds) == pytest.approx(d0 - d_last, rel=1e-9)
        # a straight 20 m corridor gives ~700 of distance-term reward plus the bonus
        b_sum = 35.0 * sum(r_ds)
        assert 680 < b_sum < 720
        # success bonus plus dense terms bounded by a*1 + b*v_max*dt
        assert abs(rewards[-1] - 1000.0) <= 0.6 + 35.0 * 0.5 * env.dt + 1e-9

    def test_exactly_one_terminal_bonus(self, long_world):
        env = quiet_env(long_world, seed=0, fixed_start=StartSpec(0, "F"))
        env.reset(0)
        big = 0
        while True:
            res = env.step(Action(0.49, 0.0))
            if abs(res.reward) > 400:
                big += 1
            if res.outcome.terminal:
                break
        assert big == 1

    def test_bounds_actions_accepted(self, straight_world):
        env = quiet_env(straight_world, seed=2, fixed_start=StartSpec(0, "F"))
        env.reset(0)
        res = env.step(Action(np.nextafter(0.5, 0), np.nextafter(1.0, 0)))
        assert res.outcome in (Outcome.RUNNING, Outcome.REVERSE)

    def test_step_after_terminal_rejected(self, straight_world):
        env = quiet_env(straight_world, seed=2, fixed_start=StartSpec(0, "F"))
        env.reset(0)
        while True:
            res = env.step(Action(0.49, 0.4))
            if res.outcome.terminal:
                break
        with pytest.raises(RuntimeError):
            env.step(Action(0.2, 0.0))

    def test_identical_seeds_identical_streams(self, straight_world):
        def rollout():
            env = VineyardEnv(straight_world, seed=33,
                              fixed_start=StartSpec(0, "F"))
            obs = env.reset(0)
            sig = [float(obs.depth.sum())]
            for t in range(40):
                res = env.step(Action(0.3, 0.05 * math.sin(t)))
                sig.append((round(res.reward, 12), res.outcome.value,
                            float(res.observation.depth.sum())))
            return sig
        assert rollout() == rollout()

    def test_observation_has_no_pose_fields(self):
        # agent-visible data is the depth image and the 3-vector, nothing else
        fields = set(Observation.__dataclass_fields__)
        assert fields == {"depth", "state_vec"}

    def test_dense_reward_bound_under_kinematics(self, straight_world):
        env = quiet_env(straight_world, seed=3, fixed_start=StartSpec(0, "F"))
        env.reset(0)
        a, b = CFG.heading_coeff, CFG.distance_coeff
        for t in range(100):
            res = env.step(Action(0.49, 0.3 * math.sin(0.2 * t)))
            if not res.outcome.terminal:
                assert abs(res.reward) <= a * 1.0 + b * 0.5 * env.dt + 1e-9
            else:
                break
