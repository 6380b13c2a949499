"""Command-line entry point: world generation, training, evaluation, benchmarks.

Every subcommand resolves its configuration (defaults < --config file <
flags), persists the resolved snapshot and seed next to its outputs, and can
be rerun bit-identically from that snapshot. Exit codes: 0 success, 2 usage,
3 training divergence, 4 checkpoint/architecture mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file or a resolved snapshot")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--out", "-o", help="output directory (default from env or ./runs/<cmd>)")


def _out_dir(args, default_name: str) -> Path:
    root = os.environ.get("VINENAV_OUT_ROOT", "runs")
    out = Path(args.out) if args.out else Path(root) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args, extra_overrides: dict | None = None):
    from .config import resolve_config
    overrides: dict = {}
    if extra_overrides:
        overrides.update(extra_overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return resolve_config(args.config, overrides)


def _load_world_arg(path: str, cfg: dict):
    from .world import load_world, generate_world
    from .config import build_world_config
    if path and Path(path).exists():
        return load_world(path)
    return generate_world(build_world_config(cfg), int(cfg["seed"]))


def cmd_gen_world(args) -> int:
    from .config import build_world_config, write_snapshot
    from .world import generate_world, save_world
    overrides = {}
    if args.preset:
        overrides["world"] = {"preset": args.preset}
    cfg, prov = _resolve(args, overrides)
    out = _out_dir(args, "gen-world")
    world = generate_world(build_world_config(cfg), int(cfg["seed"]))
    path = Path(args.world_out) if args.world_out else out / "world.json"
    save_world(world, str(path))
    write_snapshot(cfg, prov, str(out))
    widths = ", ".join(f"{w:.2f}" for w in world.inter_row_distances)
    gaps = sum(len(r.gap_intervals) for r in world.rows)
    print(f"wrote {path}")
    print(f"rows: {len(world.rows)}  corridors: {world.corridor_count}  "
          f"plants: {len(world.plants)}  gaps: {gaps}")
    print(f"corridor widths [m]: {widths}")
    print(f"labeled rows: {world.corridor_labels}")
    return 0


def cmd_train(args) -> int:
    import torch
    from .config import (build_camera, build_episode, build_noise, build_reward,
                         build_sac, build_schedule, build_terrain, write_snapshot)
    from .env import VineyardEnv
    from .net import ConvActor, ConvCritic
    from .robot import platform_by_name
    from .sac import SACAgent, TrainingDiverged, train
    from .world import save_world

    overrides: dict = {"sac": {}}
    if args.episodes is not None:
        overrides["sac"]["episodes"] = args.episodes
    cfg, prov = _resolve(args, overrides)
    out = _out_dir(args, f"train_seed{cfg['seed']}")
    write_snapshot(cfg, prov, str(out))
    seed = int(cfg["seed"])

    world = _load_world_arg(args.world, cfg)
    save_world(world, str(out / "world.json"))
    env = VineyardEnv(
        world, seed=seed, camera=build_camera(cfg), noise=build_noise(cfg),
        platform=platform_by_name(cfg["platform"]), reward_cfg=build_reward(cfg),
        episode_cfg=build_episode(cfg), terrain=build_terrain(cfg),
        dt=float(cfg["dt"]))
    sac_cfg = build_sac(cfg)
    from .util import stream_int
    torch.manual_seed(stream_int(seed, "net-init"))
    agent = SACAgent(ConvActor(), ConvCritic(), ConvCritic(), sac_cfg, seed=seed)

    def progress(rec):
        if rec.episode % 10 == 0 or rec.episode + 1 == sac_cfg.episodes:
            print(f"ep {rec.episode:4d}  return {rec.total_reward:9.1f}  "
                  f"steps {rec.steps:4d}  {rec.outcome:9s}  eps {rec.epsilon:.3f}  "
                  f"alpha {rec.alpha:.3f}  wall {rec.wall_s:7.0f}s", flush=True)

    try:
        result = train(env, agent, build_schedule(cfg), sac_cfg, seed=seed,
                       out_dir=str(out), episode_callback=progress)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def _policy_or_exit(path: str):
    from .evaluate import Policy
    from .net import CheckpointMismatch
    try:
        return Policy(path)
    except CheckpointMismatch as exc:
        print(f"checkpoint rejected: {exc}", file=sys.stderr)
        sys.exit(EXIT_CHECKPOINT)


def _dump_reports(out: Path, name: str, text: str, payload: dict) -> None:
    (out / f"{name}.txt").write_text(text + "\n")
    with open(out / f"{name}.json", "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    print(text)


def cmd_eval(args) -> int:
    from .config import write_snapshot
    from .evaluate import evaluate_suite
    overrides: dict = {"eval": {}}
    if args.runs_per_row is not None:
        overrides["eval"]["runs_per_row"] = args.runs_per_row
    if args.noise_factor is not None:
        overrides["noise_factor"] = args.noise_factor
    cfg, prov = _resolve(args, overrides)
    out = _out_dir(args, "eval")
    write_snapshot(cfg, prov, str(out))
    world = _load_world_arg(args.world, _test_world_cfg(cfg))
    policy = _policy_or_exit(args.checkpoint)
    from .evaluate import resolve_workers
    report = evaluate_suite(policy, world, cfg, seed=int(cfg["seed"]), keep_logs=True,
                            workers=resolve_workers(cfg, args.workers))
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for row in report.rows:
        for rr in row.per_run:
            if rr.log is not None:
                rr.log.to_csv(str(traj_dir / f"row{rr.label}{rr.direction}_run{rr.run}.csv"))
    _dump_reports(out, "eval_report", report.to_text(), report.to_dict())
    return 0


def _test_world_cfg(cfg: dict) -> dict:
    # eval-family commands default to the test preset unless a world file is given
    import copy
    c = copy.deepcopy(cfg)
    c["world"]["preset"] = "test"
    return c


def cmd_sweep_noise(args) -> int:
    from .config import write_snapshot
    from .evaluate import noise_sweep, sweep_to_text
    overrides: dict = {"eval": {}}
    if args.factors:
        overrides["eval"]["noise_factors"] = [float(x) for x in args.factors.split(",")]
    if args.runs is not None:
        overrides["eval"]["sweep_runs"] = args.runs
    cfg, prov = _resolve(args, overrides)
    out = _out_dir(args, "sweep-noise")
    write_snapshot(cfg, prov, str(out))
    world = _load_world_arg(args.world, _test_world_cfg(cfg))
    policy = _policy_or_exit(args.checkpoint)
    from .evaluate import resolve_workers
    report = noise_sweep(policy, world, cfg, seed=int(cfg["seed"]),
                         workers=resolve_workers(cfg, args.workers))
    _dump_reports(out, "noise_sweep", sweep_to_text(report), report)
    return 0


def cmd_swap_platform(args) -> int:
    from .config import write_snapshot
    from .evaluate import platform_swap_eval, swap_to_text
    overrides: dict = {"eval": {}}
    if args.runs is not None:
        overrides["eval"]["sweep_runs"] = args.runs
    cfg, prov = _resolve(args, overrides)
    out = _out_dir(args, "swap-platform")
    write_snapshot(cfg, prov, str(out))
    world = _load_world_arg(args.world, _test_world_cfg(cfg))
    policy = _policy_or_exit(args.checkpoint)
    platforms = args.platforms.split(",") if args.platforms else None
    from .evaluate import resolve_workers
    report = platform_swap_eval(policy, world, cfg, seed=int(cfg["seed"]),
                                platforms=platforms,
                                workers=resolve_workers(cfg, args.workers))
    _dump_reports(out, "platform_swap", swap_to_text(report), report)
    return 0


def cmd_bench(args) -> int:
    from .config import write_snapshot
    from .evaluate import benchmark_inference
    cfg, prov = _resolve(args)
    out = _out_dir(args, "bench")
    write_snapshot(cfg, prov, str(out))
    policy = _policy_or_exit(args.checkpoint)
    trials = args.trials if args.trials is not None else int(cfg["eval"]["bench_trials"])
    stats = benchmark_inference(policy, trials=trials, seed=int(cfg["seed"]))
    payload = {"latency": {"mean_ms": stats.mean_ms, "std_ms": stats.std_ms,
                           "trials": stats.trials},
               "meta": {"checkpoint": args.checkpoint, "seed": int(cfg["seed"])}}
    _dump_reports(out, "latency", stats.to_text(), payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vinenav",
        description="Vineyard row navigation: simulate, train, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a vineyard world file")
    _add_common(p)
    p.add_argument("--preset", choices=("train", "test"))
    p.add_argument("--world-out", help="world file path (default <out>/world.json)")
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train", help="train the navigation agent")
    _add_common(p)
    p.add_argument("--world", help="world file (generated from config when absent)")
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the full test-row evaluation table")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--world", help="world file (test preset generated when absent)")
    p.add_argument("--runs-per-row", type=int)
    p.add_argument("--noise-factor", type=float)
    p.add_argument("--workers", type=int, help="episode worker processes "
                   "(default: VINENAV_WORKERS or config; 0 = all cores)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-noise", help="noise-factor robustness sweep")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--world")
    p.add_argument("--factors", help="comma-separated noise factors")
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep_noise)

    p = sub.add_parser("swap-platform", help="evaluate the checkpoint on other rovers")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--world")
    p.add_argument("--platforms", help="comma-separated platform names")
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_swap_platform)

    p = sub.add_parser("bench", help="actor inference latency benchmark")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
