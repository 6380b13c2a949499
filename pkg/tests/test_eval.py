import hashlib
import math

import numpy as np
import pytest
import torch

from vinenav.evaluate import (EvalError, Policy, benchmark_inference,
                              cross_track_error_values, cross_track_errors,
                              evaluate_suite, fit_ground_truth, run_episode)
from vinenav.env import StartSpec, VineyardEnv
from vinenav.net import ConvActor, ConvCritic, save_checkpoint
from vinenav.config import resolve_config
from vinenav.world import corridor_frame


@pytest.fixture(scope="module")
def random_policy_ckpt(tmp_path_factory):
    torch.manual_seed(21)
    path = tmp_path_factory.mktemp("ckpt") / "random.ckpt"
    save_checkpoint(str(path), {"actor": ConvActor(), "critic1": ConvCritic(),
                                "critic2": ConvCritic()})
    return str(path)


class TestFitGroundTruth:
    def test_line_recovers_degree_one(self):
        xs = np.linspace(0, 10, 40)
        pts = np.stack([xs, 0.5 * xs + 1.0], axis=1)
        gt = fit_ground_truth(pts)
        # in the chord frame the fit must be y = 0: only noise-level coeffs
        assert np.all(np.abs(gt.coeffs) < 1e-9)
        assert gt.residual_rms < 1e-9

    def test_quintic_recovered(self):
        # chord-aligned data (p(0) = p(12) = 0): the chord frame preserves the
        # abscissa, so the quintic must be reproduced to round-off
        coeffs = np.array([0.0, -0.02, 0.004, 3e-4, -2e-5, 1e-6])
        val_end = np.polynomial.polynomial.polyval(12.0, coeffs)
        coeffs[1] -= val_end / 12.0
        xs = np.linspace(0, 12, 60)
        ys = np.polynomial.polynomial.polyval(xs, coeffs)
        pts = np.stack([xs, ys], axis=1)
        gt = fit_ground_truth(pts, cache_resolution=1e-3)
        assert gt.heading == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(gt.coeffs, coeffs, rtol=1e-8, atol=1e-12)
        errs = cross_track_error_values(pts, gt)
        assert errs.max() < 1e-6
        assert gt.residual_rms < 1e-10

    def test_quintic_coefficients_exact_in_chord_frame(self):
        # points already chord-aligned (endpoints on the x-axis)
        coeffs = np.array([0.0, 0.3, -0.11, 0.012, -5e-4, 7e-6])
        xs = np.linspace(0, 10, 80)
        c = coeffs.copy()
        # force p(0)=p(10)=0 so the chord frame equals the input frame
        c[0] = 0.0
        val10 = np.polynomial.polynomial.polyval(10.0, c)
        c[1] -= val10 / 10.0
        ys = np.polynomial.polynomial.polyval(xs, c)
        pts = np.stack([xs, ys], axis=1)
        gt = fit_ground_truth(pts)
        assert np.allclose(gt.coeffs, c, rtol=1e-8, atol=1e-10)

    def test_noisy_fit_residual_below_noise(self, rng):
        coeffs = np.array([0.1, 0.05, -0.01, 1e-3, -4e-5, 5e-7])
        xs = np.linspace(0, 14, 300)
        ys = np.polynomial.polynomial.polyval(xs, coeffs)
        noise = rng.normal(0, 0.05, size=xs.size)
        gt = fit_ground_truth(np.stack([xs, ys + noise], axis=1))
        assert gt.residual_rms < float(noise.std())

    def test_rank_deficient_rejected(self):
        # only two distinct abscissae in the chord frame: quintic is underdetermined
        pts = np.array([[0.0, 0.0], [1.0, 1.0]] * 5)
        with pytest.raises(EvalError):
            fit_ground_truth(pts)
        # degenerate chord (all points identical)
        with pytest.raises(EvalError):
            fit_ground_truth(np.zeros((10, 2)))

    def test_too_few_points_rejected(self):
        with pytest.raises(EvalError):
            fit_ground_truth(np.zeros((5, 2)))

    def test_cache_resolution(self):
        xs = np.linspace(0, 10, 50)
        pts = np.stack([xs, 0.2 * xs ** 2 * 0 + np.sin(xs * 0.3)], axis=1)
        gt = fit_ground_truth(pts, cache_resolution=0.01)
        seg = np.hypot(*np.diff(gt.cache, axis=0).T)
        assert seg.max() <= 0.0101


class TestCrossTrackErrors:
    def straight_gt(self):
        xs = np.linspace(0, 10, 50)
        return fit_ground_truth(np.stack([xs, np.zeros_like(xs)], axis=1))

    def test_on_line_zero(self):
        gt = self.straight_gt()
        traj = np.stack([np.linspace(0.5, 9.5, 30), np.zeros(30)], axis=1)
        mae, rmse = cross_track_errors(traj, gt)
        assert mae == pytest.approx(0.0, abs=1e-9)
        assert rmse == pytest.approx(0.0, abs=1e-9)

    def test_constant_offset(self):
        gt = self.straight_gt()
        traj = np.stack([np.linspace(0.5, 9.5, 30), np.full(30, 0.1)], axis=1)
        mae, rmse = cross_track_errors(traj, gt)
        assert mae == pytest.approx(0.1, abs=1e-6)
        assert rmse == pytest.approx(0.1, abs=1e-6)

    def test_sawtooth_and_half_offsets(self):
        gt = self.straight_gt()
        n = 40
        xs = np.linspace(0.5, 9.5, n)
        saw = np.where(np.arange(n) % 2 == 0, 0.1, -0.1)
        mae, rmse = cross_track_errors(np.stack([xs, saw], axis=1), gt)
        assert mae == pytest.approx(0.1, abs=1e-6)
        assert rmse == pytest.approx(0.1, abs=1e-6)
        alt = np.where(np.arange(n) % 2 == 0, 0.0, 0.2)
        mae, rmse = cross_track_errors(np.stack([xs, alt], axis=1), gt)
        assert mae == pytest.approx(0.1, abs=1e-6)
        assert rmse == pytest.approx(math.sqrt(0.02), abs=1e-6)

    def test_gt_against_itself_within_cache_resolution(self, test_world):
        frame = corridor_frame(test_world, 5, "F")
        gt = fit_ground_truth(frame.median)
        errs = cross_track_error_values(gt.cache, gt)
        assert errs.max() == 0.0

    def test_empty_trajectory_rejected(self):
        with pytest.raises(EvalError):
            cross_track_errors(np.zeros((0, 2)), self.straight_gt())


class TestRunEpisode:
    def test_same_seed_identical_logs(self, random_policy_ckpt, test_world):
        policy = Policy(random_policy_ckpt)

        def once():
            env = VineyardEnv(test_world, seed=77, fixed_start=StartSpec(0, "F"))
            log = run_episode(policy, env)
            return [tuple(r) for r in log.rows], log.outcome

        assert once() == once()

    def test_log_bounded_and_consistent(self, random_policy_ckpt, test_world):
        policy = Policy(random_policy_ckpt)
        env = VineyardEnv(test_world, seed=5, fixed_start=StartSpec(0, "F"))
        log = run_episode(policy, env)
        assert log.steps <= env.episode_cfg.max_steps
        assert log.outcome.value in ("success", "collision", "reverse", "timeout")


class TestEvaluateSuite:
    @pytest.fixture(scope="class")
    def report(self, random_policy_ckpt, test_world):
        cfg, _ = resolve_config()
        policy = Policy(random_policy_ckpt)
        return evaluate_suite(policy, test_world, cfg, seed=9, runs_per_row=2)

    def test_table_shape(self, report):
        assert len(report.rows) == 10  # 5 rows x 2 directions
        names = [(r.label, r.direction) for r in report.rows]
        assert names == [(lab, d) for lab in "12345" for d in ("F", "R")]
        shapes = {r.label: r.shape for r in report.rows}
        assert shapes == {"1": "straight", "2": "straight", "3": "hybrid",
                          "4": "curved", "5": "curved"}

    def test_mae_not_above_rmse(self, report):
        for row in report.rows + [report.overall]:
            assert row.mae <= row.rmse + 1e-12

    def test_overall_is_pooled_recomputation(self, report):
        errors = np.concatenate([rr.errors for row in report.rows
                                 for rr in row.per_run])
        assert report.overall.mae == pytest.approx(float(np.mean(np.abs(errors))))
        assert report.overall.rmse == pytest.approx(float(np.sqrt(np.mean(errors ** 2))))
        assert report.overall.runs == sum(r.runs for r in report.rows)

    def test_success_counts_bounded(self, report):
        for row in report.rows:
            assert 0 <= row.successes <= row.runs

    def test_text_layout(self, report):
        text = report.to_text()
        assert "Test Row" in text and "Overall" in text
        assert len(text.splitlines()) == 13  # header + rule + 10 rows + overall

    def test_checkpoint_not_mutated(self, random_policy_ckpt, test_world):
        digest_before = hashlib.sha256(open(random_policy_ckpt, "rb").read()).hexdigest()
        cfg, _ = resolve_config()
        evaluate_suite(Policy(random_policy_ckpt), test_world, cfg, seed=1,
                       runs_per_row=2)
        digest_after = hashlib.sha256(open(random_policy_ckpt, "rb").read()).hexdigest()
        assert digest_before == digest_after

    def test_worker_pool_matches_serial(self, random_policy_ckpt, test_world):
        cfg, _ = resolve_config()
        policy = Policy(random_policy_ckpt)
        serial = evaluate_suite(policy, test_world, cfg, seed=13, runs_per_row=2,
                                workers=1)
        pooled = evaluate_suite(policy, test_world, cfg, seed=13, runs_per_row=2,
                                workers=2)
        assert serial.to_dict() == pooled.to_dict()


class TestBenchmark:
    def test_latency_stats(self, random_policy_ckpt):
        policy = Policy(random_policy_ckpt)
        stats = benchmark_inference(policy, trials=100)
        assert stats.trials == 100
        assert stats.std_ms >= 0.0
        assert stats.mean_ms < 10.0  # single-thread desktop-class bound
        assert "±" in stats.to_text()

    def test_trials_validated(self, random_policy_ckpt):
        with pytest.raises(EvalError):
            benchmark_inference(Policy(random_policy_ckpt), trials=0)
