"""Evaluation protocol: ground-truth lines, cross-track metrics, test suites.

Each labeled test corridor gets a ground-truth line: the corridor median
(pointwise mean of the bounding rows) expressed in a chord-aligned frame and
smoothed by a fifth-order polynomial fit, cached densely for nearest-point
queries. Trajectories from deterministic policy rollouts are scored by MAE
and RMSE of the per-point distance to that line, pooled per row and overall.
"""

from __future__ import annotations

import math
import os
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.spatial import cKDTree

from .env import EpisodeLog, Outcome, StartSpec, VineyardEnv
from .net import ConvActor, load_checkpoint
from .robot import PlatformSpec, platform_by_name
from .util import stream_int
from .world import VineyardWorld, corridor_frame
from . import config as cfgmod


class EvalError(RuntimeError):
    pass


@dataclass
class GroundTruthLine:
    """Quintic fit of the corridor median in a chord-aligned frame, plus a dense cache."""

    origin: tuple[float, float]
    heading: float
    coeffs: np.ndarray                 # ascending powers, degree 5
    cache: np.ndarray                  # (M, 2) world-frame points, <= 1 cm spacing
    residual_rms: float
    _tree: Optional[cKDTree] = field(default=None, repr=False, compare=False)

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.cache)
        return self._tree


def fit_ground_truth(median: np.ndarray, cache_resolution: float = 0.01) -> GroundTruthLine:
    """Least-squares degree-5 fit of median points, cached densely along arclength."""
    pts = np.asarray(median, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 6:
        raise EvalError("need at least 6 median points")
    origin = pts[0]
    chord = pts[-1] - pts[0]
    heading = math.atan2(chord[1], chord[0])
    c, s = math.cos(-heading), math.sin(-heading)
    rel = pts - origin
    xs = c * rel[:, 0] - s * rel[:, 1]
    ys = s * rel[:, 0] + c * rel[:, 1]
    if len(np.unique(np.round(xs, 12))) < 6 or np.ptp(xs) < 1e-9:
        raise EvalError("abscissae are rank-deficient; cannot fit a quintic")

    # fit in the scaled domain for conditioning, convert to plain powers
    poly = np.polynomial.Polynomial.fit(xs, ys, 5).convert()
    coeffs = np.zeros(6)
    coeffs[: poly.coef.size] = poly.coef
    fit_ys = np.polynomial.polynomial.polyval(xs, coeffs)
    residual_rms = float(np.sqrt(np.mean((fit_ys - ys) ** 2)))

    # dense cache: bound the arclength step by the max slope on a probe grid
    probe = np.linspace(xs.min(), xs.max(), 512)
    slope = np.polynomial.polynomial.polyval(
        probe, np.polynomial.polynomial.polyder(coeffs))
    max_slope = float(np.max(np.abs(slope)))
    dx = cache_resolution / math.sqrt(1.0 + max_slope * max_slope)
    n = max(2, int(math.ceil(np.ptp(xs) / dx)) + 1)
    gx = np.linspace(xs.min(), xs.max(), n)
    gy = np.polynomial.polynomial.polyval(gx, coeffs)
    cw, sw = math.cos(heading), math.sin(heading)
    cache = np.stack([origin[0] + cw * gx - sw * gy,
                      origin[1] + sw * gx + cw * gy], axis=1)
    return GroundTruthLine(origin=(float(origin[0]), float(origin[1])),
                           heading=heading, coeffs=coeffs, cache=cache,
                           residual_rms=residual_rms)


def cross_track_error_values(trajectory: np.ndarray, gt: GroundTruthLine) -> np.ndarray:
    """Per-point distance to the cached ground-truth polyline.

    The nearest cache vertex is refined by projecting onto its two adjacent
    segments, removing the along-line quantization a vertex-only query has.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 2 or len(traj) == 0:
        raise EvalError("trajectory must be a nonempty (N, 2) array")
    cache = gt.cache
    dists, idx = gt.tree().query(traj)
    best = dists ** 2
    for lo in (np.maximum(idx - 1, 0), np.minimum(idx, len(cache) - 2)):
        a = cache[lo]
        b = cache[lo + 1]
        ab = b - a
        denom = (ab ** 2).sum(axis=1)
        denom[denom == 0.0] = 1.0
        t = np.clip(((traj - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        best = np.minimum(best, ((traj - proj) ** 2).sum(axis=1))
    return np.sqrt(best)


def cross_track_errors(trajectory: np.ndarray, gt: GroundTruthLine) -> tuple[float, float]:
    e = cross_track_error_values(trajectory, gt)
    return float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e ** 2)))


# -- policy rollouts ----------------------------------------------------------

class Policy:
    """Frozen actor loaded from a checkpoint; deterministic inference."""

    def __init__(self, checkpoint_path: str):
        self.actor = ConvActor()
        self.header = load_checkpoint(checkpoint_path, {"actor": self.actor})
        self.actor.eval()
        self.path = checkpoint_path

    @torch.no_grad()
    def act(self, obs):
        from .net import deterministic_action_batch, action_from_tensor
        depth = torch.from_numpy(np.asarray(obs.depth, dtype=np.float32))[None, None]
        vec = torch.from_numpy(np.asarray(obs.state_vec, dtype=np.float32))[None]
        mu, _ = self.actor(depth, vec)
        return action_from_tensor(deterministic_action_batch(mu)[0])


def run_episode(policy: Policy, env: VineyardEnv, label: str = "",
                max_steps: Optional[int] = None) -> EpisodeLog:
    """Deterministic rollout of a policy checkpoint in a prepared environment."""
    obs = env.reset(0)
    spec = env.fixed_start
    log = EpisodeLog(corridor_id=spec.corridor_id if spec else -1,
                     direction=spec.direction if spec else "F")
    limit = max_steps or env.episode_cfg.max_steps
    for t in range(limit):
        action = policy.act(obs)
        res = env.step(action)
        info = res.info
        log.append(t, info["x"], info["y"], info["yaw"], action.v, action.omega,
                   res.reward, info["d"], info["phi"])
        obs = res.observation
        if res.outcome.terminal:
            log.outcome = res.outcome
            break
    else:
        log.outcome = Outcome.TIMEOUT
    return log


@dataclass
class RunResult:
    label: str
    direction: str
    run: int
    outcome: str
    steps: int
    mae: float
    rmse: float
    errors: np.ndarray
    actions: np.ndarray
    log: Optional[EpisodeLog] = None


@dataclass
class RowReport:
    label: str
    direction: str
    shape: str
    successes: int
    runs: int
    mae: float
    rmse: float
    v_mean: float
    v_std: float
    w_mean: float
    w_std: float
    t_avg_s: float
    per_run: list[RunResult] = field(default_factory=list)


@dataclass
class EvalReport:
    rows: list[RowReport]
    overall: RowReport
    meta: dict

    def to_dict(self) -> dict:
        def row(r: RowReport) -> dict:
            return {"row": r.label, "direction": r.direction, "shape": r.shape,
                    "success": [r.successes, r.runs], "mae_m": r.mae, "rmse_m": r.rmse,
                    "v_mean": r.v_mean, "v_std": r.v_std,
                    "omega_mean": r.w_mean, "omega_std": r.w_std,
                    "t_avg_s": r.t_avg_s,
                    "per_run": [{"run": p.run, "outcome": p.outcome, "steps": p.steps,
                                 "mae_m": p.mae, "rmse_m": p.rmse} for p in r.per_run]}
        return {"rows": [row(r) for r in self.rows], "overall": row(self.overall),
                "meta": self.meta}

    def to_text(self) -> str:
        head = (f"{'Test Row':>8}  {'Row Shape':>9}  {'MAE [m]':>8}  {'RMSE [m]':>8}  "
                f"{'v [m/s]':>15}  {'omega [rad/s]':>16}  {'Success':>7}")
        lines = [head, "-" * len(head)]
        for r in self.rows + [self.overall]:
            name = f"{r.label}{r.direction}" if r.direction else r.label
            lines.append(
                f"{name:>8}  {r.shape:>9}  {r.mae:8.3f}  {r.rmse:8.3f}  "
                f"{r.v_mean:6.3f} ± {r.v_std:5.3f}  {r.w_mean:6.3f} ± {r.w_std:6.3f}  "
                f"{r.successes:>3}/{r.runs}")
        return "\n".join(lines)


def _row_shape(world: VineyardWorld, corridor_id: int) -> str:
    kinds = {world.rows[corridor_id].curve.kind, world.rows[corridor_id + 1].curve.kind}
    if kinds == {"straight"}:
        return "straight"
    if "hybrid" in kinds:
        return "hybrid"
    return "curved"


def _make_env(world: VineyardWorld, cfg: dict, corridor_id: int, direction: str,
              seed: int, platform: Optional[PlatformSpec] = None,
              noise_factor: Optional[float] = None) -> VineyardEnv:
    platform = platform or platform_by_name(cfg["platform"])
    return VineyardEnv(
        world, seed=seed,
        camera=cfgmod.build_camera(cfg, platform.name),
        noise=cfgmod.build_noise(cfg, noise_factor),
        platform=platform,
        reward_cfg=cfgmod.build_reward(cfg),
        episode_cfg=cfgmod.build_episode(cfg),
        terrain=cfgmod.build_terrain(cfg),
        dt=float(cfg["dt"]),
        fixed_start=StartSpec(corridor_id=corridor_id, direction=direction))


def _ground_truth(world: VineyardWorld, corridor_id: int, direction: str) -> GroundTruthLine:
    frame = corridor_frame(world, corridor_id, direction)
    return fit_ground_truth(frame.median)


def _single_run(policy: Policy, world: VineyardWorld, cfg: dict, label: str,
                corridor_id: int, direction: str, run: int, seed: int,
                gt: GroundTruthLine, platform: Optional[PlatformSpec] = None,
                noise_factor: Optional[float] = None, keep_log: bool = False) -> RunResult:
    env = _make_env(world, cfg, corridor_id, direction, seed, platform, noise_factor)
    log = run_episode(policy, env, label)
    traj = log.positions()
    errors = cross_track_error_values(traj, gt)
    mae = float(np.mean(np.abs(errors)))
    rmse = float(np.sqrt(np.mean(errors ** 2)))
    return RunResult(label=label, direction=direction, run=run,
                     outcome=log.outcome.value, steps=log.steps, mae=mae, rmse=rmse,
                     errors=errors, actions=log.actions(),
                     log=log if keep_log else None)


# -- optional process pool ------------------------------------------------
#
# Episodes are independent; per-episode seeds fix every result, so the worker
# count never changes report contents, only wall time. Worker processes pin
# torch to one thread each.

_POOL_STATE: dict = {}


def _pool_init(world_dict: dict, ckpt_path: str, cfg: dict) -> None:
    from .world import world_from_dict
    torch.set_num_threads(1)
    _POOL_STATE["world"] = world_from_dict(world_dict)
    _POOL_STATE["policy"] = Policy(ckpt_path)
    _POOL_STATE["cfg"] = cfg


def _pool_run(job: dict) -> tuple[int, RunResult]:
    platform = platform_by_name(job["platform"]) if job.get("platform") else None
    result = _single_run(
        _POOL_STATE["policy"], _POOL_STATE["world"], _POOL_STATE["cfg"],
        job["label"], job["cid"], job["direction"], job["run"], job["seed"],
        job["gt"], platform=platform, noise_factor=job.get("noise_factor"),
        keep_log=job.get("keep_log", False))
    return job["index"], result


def resolve_workers(cfg: dict, workers: Optional[int] = None) -> int:
    if workers is None:
        env_val = os.environ.get("VINENAV_WORKERS")
        workers = int(env_val) if env_val else int(cfg["eval"]["workers"])
    if workers <= 0:
        workers = os.cpu_count() or 1
    return max(1, workers)


def run_jobs(policy: Policy, world: VineyardWorld, cfg: dict, jobs: list[dict],
             workers: int = 1) -> list[RunResult]:
    """Execute evaluation episodes, optionally fanned out; order-stable."""
    for i, job in enumerate(jobs):
        job["index"] = i
    if workers <= 1 or len(jobs) <= 1:
        out: list[RunResult] = []
        for job in jobs:
            platform = platform_by_name(job["platform"]) if job.get("platform") else None
            out.append(_single_run(policy, world, cfg, job["label"], job["cid"],
                                   job["direction"], job["run"], job["seed"],
                                   job["gt"], platform=platform,
                                   noise_factor=job.get("noise_factor"),
                                   keep_log=job.get("keep_log", False)))
        return out
    import multiprocessing as mp
    from .world import world_to_dict
    ctx = mp.get_context("spawn")
    with ctx.Pool(min(workers, len(jobs)), initializer=_pool_init,
                  initargs=(world_to_dict(world), policy.path, cfg)) as pool:
        results = pool.map(_pool_run, jobs)
    ordered = [r for _, r in sorted(results, key=lambda kv: kv[0])]
    return ordered


def _aggregate(label: str, direction: str, shape: str, results: list[RunResult],
               dt: float) -> RowReport:
    errors = np.concatenate([r.errors for r in results])
    actions = np.concatenate([r.actions for r in results], axis=0)
    succ = sum(1 for r in results if r.outcome == Outcome.SUCCESS.value)
    return RowReport(
        label=label, direction=direction, shape=shape,
        successes=succ, runs=len(results),
        mae=float(np.mean(np.abs(errors))),
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        v_mean=float(actions[:, 0].mean()), v_std=float(actions[:, 0].std()),
        w_mean=float(actions[:, 1].mean()), w_std=float(actions[:, 1].std()),
        t_avg_s=float(np.mean([r.steps for r in results]) * dt),
        per_run=results)


def evaluate_suite(policy: Policy, world: VineyardWorld, cfg: dict, seed: int,
                   runs_per_row: Optional[int] = None, keep_logs: bool = False,
                   workers: int = 1) -> EvalReport:
    """Full test-suite table: every labeled corridor, both directions."""
    torch.set_num_threads(1)
    runs_total = int(runs_per_row or cfg["eval"]["runs_per_row"])
    per_dir = max(1, runs_total // 2)
    labels = sorted(world.corridor_labels.items())
    jobs = []
    for label, cid in labels:
        for direction in ("F", "R"):
            gt = _ground_truth(world, cid, direction)
            for k in range(per_dir):
                jobs.append({"label": label, "cid": cid, "direction": direction,
                             "run": k, "gt": gt, "keep_log": keep_logs,
                             "seed": stream_int(seed, f"eval-{label}{direction}-{k}")})
    results = run_jobs(policy, world, cfg, jobs, workers=workers)
    rows: list[RowReport] = []
    i = 0
    for label, cid in labels:
        shape = _row_shape(world, cid)
        for direction in ("F", "R"):
            chunk = results[i:i + per_dir]
            i += per_dir
            rows.append(_aggregate(label, direction, shape, chunk, float(cfg["dt"])))
    overall = _aggregate("Overall", "", "-", results, float(cfg["dt"]))
    return EvalReport(rows=rows, overall=overall,
                      meta={"seed": seed, "runs_per_row": per_dir * 2,
                            "checkpoint": policy.path,
                            "noise_factor": float(cfg["noise_factor"])})


def noise_sweep(policy: Policy, world: VineyardWorld, cfg: dict, seed: int,
                factors: Optional[Sequence[float]] = None,
                runs: Optional[int] = None, workers: int = 1) -> dict:
    """Robustness sweep: straight (1F) and curved (4F) rows at rising noise factors.

    Per-run seeds depend only on the row and run index, so every factor sees
    the same start/noise-stream pairing (paired comparison across factors).
    """
    torch.set_num_threads(1)
    factors = [float(f) for f in (factors or cfg["eval"]["noise_factors"])]
    if not factors:
        raise EvalError("need at least one noise factor")
    runs = int(runs or cfg["eval"]["sweep_runs"])
    labels = world.corridor_labels
    targets = [("straight", "1", labels["1"]), ("curved", "4", labels["4"])]
    jobs = []
    for shape, label, cid in targets:
        gt = _ground_truth(world, cid, "F")
        for factor in factors:
            for k in range(runs):
                jobs.append({"label": label, "cid": cid, "direction": "F",
                             "run": k, "gt": gt, "noise_factor": factor,
                             "seed": stream_int(seed, f"sweep-{label}-{k}")})
    results = run_jobs(policy, world, cfg, jobs, workers=workers)
    table: dict[str, dict] = {}
    i = 0
    for shape, label, cid in targets:
        per_factor = []
        for factor in factors:
            chunk = results[i:i + runs]
            i += runs
            agg = _aggregate(label, "F", shape, chunk, float(cfg["dt"]))
            per_factor.append({
                "factor": factor, "success": [agg.successes, agg.runs],
                "v_mean": agg.v_mean, "v_std": agg.v_std,
                "omega_mean": agg.w_mean, "omega_std": agg.w_std})
        table[shape] = {"row": label, "factors": per_factor}
    return {"noise_sweep": table,
            "meta": {"seed": seed, "runs": runs, "factors": factors,
                     "checkpoint": policy.path}}


def sweep_to_text(report: dict) -> str:
    factors = report["meta"]["factors"]
    lines = ["Noise Factor      " + "  ".join(f"{f:>9g}" for f in factors)]
    for shape, block in report["noise_sweep"].items():
        succ = "  ".join(f"{p['success'][0]:>5}/{p['success'][1]}"
                         for p in block["factors"])
        lines.append(f"Success ({shape:>8} row {block['row']}F)  {succ}")
        wstd = "  ".join(f"{p['omega_std']:9.3f}" for p in block["factors"])
        lines.append(f"omega std ({shape:>6})          {wstd}")
    return "\n".join(lines)


def platform_swap_eval(policy: Policy, world: VineyardWorld, cfg: dict, seed: int,
                       platforms: Optional[Sequence[str]] = None,
                       runs: Optional[int] = None, workers: int = 1) -> dict:
    """Same checkpoint re-evaluated under different footprint + camera mounts.

    Per-run seeds are platform-independent, so the comparison is paired.
    """
    torch.set_num_threads(1)
    platform_names = list(platforms or ("jackal", "husky"))
    runs = int(runs or cfg["eval"]["sweep_runs"])
    labels = world.corridor_labels
    targets = [("Straight", "1", labels["1"]), ("Curved", "4", labels["4"])]
    jobs = []
    for shape, label, cid in targets:
        gt = _ground_truth(world, cid, "F")
        for name in platform_names:
            for k in range(runs):
                jobs.append({"label": label, "cid": cid, "direction": "F",
                             "run": k, "gt": gt, "platform": name,
                             "seed": stream_int(seed, f"swap-{label}-{k}")})
    results = run_jobs(policy, world, cfg, jobs, workers=workers)
    out_rows = []
    i = 0
    for shape, label, cid in targets:
        for name in platform_names:
            chunk = results[i:i + runs]
            i += runs
            agg = _aggregate(label, "F", shape, chunk, float(cfg["dt"]))
            out_rows.append({
                "row": shape, "rover": name,
                "success": [agg.successes, agg.runs],
                "t_avg_s": agg.t_avg_s, "mae_m": agg.mae, "rmse_m": agg.rmse})
    return {"platform_swap": out_rows,
            "meta": {"seed": seed, "runs": runs, "platforms": platform_names,
                     "checkpoint": policy.path}}


def swap_to_text(report: dict) -> str:
    head = f"{'Row':>9}  {'Rover':>7}  {'Success':>7}  {'T_avg [s]':>9}  {'MAE [m]':>8}  {'RMSE [m]':>8}"
    lines = [head, "-" * len(head)]
    for r in report["platform_swap"]:
        lines.append(f"{r['row']:>9}  {r['rover']:>7}  "
                     f"{r['success'][0]:>3}/{r['success'][1]}  {r['t_avg_s']:9.1f}  "
                     f"{r['mae_m']:8.3f}  {r['rmse_m']:8.3f}")
    return "\n".join(lines)


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    std_ms: float
    trials: int

    def to_text(self) -> str:
        return (f"Actor forward pass, single thread, {self.trials} trials: "
                f"{self.mean_ms:.2f} ± {self.std_ms:.2f} ms")


def benchmark_inference(policy: Policy, trials: int = 100, warmup: int = 10,
                        seed: int = 0) -> LatencyStats:
    """Wall time of single actor forward passes on fresh random inputs."""
    if trials < 1:
        raise EvalError("trials must be >= 1")
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        gen = torch.Generator().manual_seed(seed)
        times = []
        with torch.no_grad():
            for k in range(warmup + trials):
                depth = torch.rand((1, 1, 112, 112), generator=gen) * 5.0
                vec = torch.rand((1, 3), generator=gen)
                t0 = time.perf_counter()
                policy.actor(depth, vec)
                t1 = time.perf_counter()
                if k >= warmup:
                    times.append((t1 - t0) * 1e3)
    finally:
        torch.set_num_threads(prev_threads)
    return LatencyStats(mean_ms=float(statistics.fmean(times)),
                        std_ms=float(statistics.pstdev(times)), trials=trials)
