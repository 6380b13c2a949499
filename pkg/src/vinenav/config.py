"""Run configuration: layered resolution (defaults < file < flags) with provenance.

Every subcommand resolves one nested config dict, records where each leaf
came from, and persists the resolved snapshot next to its outputs so any run
can be reproduced bit-identically from the snapshot alone.
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path
from typing import Any, Optional

from .env import EpisodeConfig, RewardConfig
from .robot import TerrainDisturbance, platform_by_name
from .sac import ExplorationSchedule, SACConfig
from .sensor import CameraParams, NoiseSpec
from .world import WorldConfig, test_world_config, train_world_config

SNAPSHOT_NAME = "resolved_config.json"

DEFAULTS: dict[str, Any] = {
    "seed": 1,
    "platform": "jackal",
    "noise_factor": 1.0,
    "dt": 0.1,
    "world": {
        "preset": "train",            # train | test | custom
        "rows": 6,
        "row_length": 15.0,
        "row_shapes": None,           # custom: [[kind, curvature, straight_frac, length], ...]
        "explicit_offsets": None,     # custom: per-pair inter-row offsets at s=0
        "gaps_per_row": None,         # custom: gap count per row (presets decide otherwise)
        "gap_width": 2.5,
        "spacing_min": 0.7,
        "spacing_max": 1.0,
        "inter_row_min": 1.5,
        "inter_row_max": 2.0,
        "jitter": 0.08,
        "trunk_radius": 0.06,
        "canopy_half_width": 0.25,
        "plant_height": 1.8,
        "canopy_base": 0.6,
    },
    "camera": {
        "hfov_deg": 87.0,
        "vfov_deg": 58.0,
        "render_ground": True,
    },
    "episode": {
        "max_steps": 700,
        "reposition_period": 10,
        "start_lateral": 0.3,
        "start_yaw_deg": 30.0,
    },
    "reward": {
        "heading_coeff": 0.6,
        "distance_coeff": 35.0,
        "success_bonus": 1000.0,
        "collision_penalty": -500.0,
        "reverse_penalty": -500.0,
        "yaw_limit_deg": 85.0,
    },
    "terrain": {
        "yaw_rate_std": 0.08,
        "pitch_std": 0.02,
        "reversion_rate": 5.0,
    },
    "sac": {
        "episodes": 1500,
        "gamma": 0.99,
        "learning_rate": 2e-4,
        "batch_size": 32,
        "replay_capacity": 100000,
        "tau": 0.005,
        "auto_alpha": True,
        "alpha_init": 0.2,
        "target_entropy": -2.0,
        "warmup_steps": 1000,
        "update_every": 10,
        "checkpoint_every": 100,
        "torch_threads": 2,
        "epsilon_start": 1.0,
        "epsilon_decay": 0.992,
        "epsilon_min": 0.05,
    },
    "eval": {
        "runs_per_row": 10,
        "sweep_runs": 3,
        "noise_factors": [2.0, 4.0, 6.0, 8.0, 10.0],
        "bench_trials": 100,
        "workers": 0,                # 0 = use available parallelism
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, provenance: dict, source: str,
           path: str = "") -> None:
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be a section, got {type(value).__name__}")
            _merge(base[key], value, provenance, source, here)
        else:
            base[key] = value
            provenance[here] = source


def resolve_config(file_path: Optional[str] = None,
                   overrides: Optional[dict] = None,
                   ) -> tuple[dict, dict[str, str]]:
    """Merge defaults, an optional JSON file, and flag overrides.

    Returns (resolved config, provenance map keyed by dotted leaf path).
    A snapshot file produced by `write_snapshot` is accepted directly as
    `file_path`, which is what makes reruns reproducible.
    """
    cfg = copy.deepcopy(DEFAULTS)
    provenance: dict[str, str] = {}
    if file_path:
        with open(file_path) as f:
            data = json.load(f)
        if "config" in data and "provenance" in data:   # a snapshot
            data = data["config"]
        _merge(cfg, data, provenance, f"file:{file_path}")
    if overrides:
        _merge(cfg, overrides, provenance, "flag")
    return cfg, provenance


def write_snapshot(cfg: dict, provenance: dict[str, str], out_dir: str) -> str:
    path = Path(out_dir) / SNAPSHOT_NAME
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump({"config": cfg, "provenance": provenance}, f, indent=1, sort_keys=True)
        f.write("\n")
    return str(path)


# -- builders ----------------------------------------------------------------

def build_world_config(cfg: dict) -> WorldConfig:
    w = cfg["world"]
    if w["preset"] == "train":
        base = train_world_config(rows=int(w["rows"]), row_length=float(w["row_length"]))
    elif w["preset"] == "test":
        base = test_world_config(row_length=float(w["row_length"]))
    elif w["preset"] == "custom":
        if not w["row_shapes"]:
            raise ConfigError("custom world preset needs world.row_shapes")
        shapes = tuple((str(k), float(c), float(f), float(ln))
                       for k, c, f, ln in w["row_shapes"])
        base = WorldConfig(
            rows=len(shapes), row_length=float(w["row_length"]), row_shapes=shapes,
            explicit_offsets=(tuple(float(o) for o in w["explicit_offsets"])
                              if w["explicit_offsets"] else None),
            gaps_per_row=int(w["gaps_per_row"] or 0))
    else:
        raise ConfigError(f"unknown world preset {w['preset']!r}")
    gaps = base.gaps_per_row if w["gaps_per_row"] is None else int(w["gaps_per_row"])
    return WorldConfig(
        rows=base.rows, row_length=base.row_length, row_shapes=base.row_shapes,
        explicit_offsets=base.explicit_offsets,
        inter_row_range=(float(w["inter_row_min"]), float(w["inter_row_max"])),
        spacing_range=(float(w["spacing_min"]), float(w["spacing_max"])),
        jitter=float(w["jitter"]), gaps_per_row=gaps,
        gap_width=float(w["gap_width"]), corridor_labels=base.corridor_labels,
        trunk_radius=float(w["trunk_radius"]),
        canopy_half_width=float(w["canopy_half_width"]),
        plant_height=float(w["plant_height"]), canopy_base=float(w["canopy_base"]))


def build_camera(cfg: dict, platform_name: Optional[str] = None) -> CameraParams:
    cam = cfg["camera"]
    platform = platform_by_name(platform_name or cfg["platform"])
    return CameraParams(
        hfov=math.radians(float(cam["hfov_deg"])),
        vfov=math.radians(float(cam["vfov_deg"])),
        mount_forward=platform.camera_forward, mount_up=platform.camera_up,
        render_ground=bool(cam["render_ground"]))


def build_noise(cfg: dict, factor: Optional[float] = None) -> NoiseSpec:
    return NoiseSpec(factor=float(cfg["noise_factor"] if factor is None else factor))


def build_reward(cfg: dict) -> RewardConfig:
    r = cfg["reward"]
    return RewardConfig(
        heading_coeff=float(r["heading_coeff"]), distance_coeff=float(r["distance_coeff"]),
        success_bonus=float(r["success_bonus"]),
        collision_penalty=float(r["collision_penalty"]),
        reverse_penalty=float(r["reverse_penalty"]),
        yaw_limit=math.radians(float(r["yaw_limit_deg"])))


def build_episode(cfg: dict) -> EpisodeConfig:
    e = cfg["episode"]
    return EpisodeConfig(
        max_steps=int(e["max_steps"]), reposition_period=int(e["reposition_period"]),
        start_lateral=float(e["start_lateral"]),
        start_yaw=math.radians(float(e["start_yaw_deg"])))


def build_terrain(cfg: dict) -> TerrainDisturbance:
    t = cfg["terrain"]
    return TerrainDisturbance(yaw_rate_std=float(t["yaw_rate_std"]),
                              pitch_std=float(t["pitch_std"]),
                              reversion_rate=float(t["reversion_rate"]))


def build_sac(cfg: dict) -> SACConfig:
    s = cfg["sac"]
    return SACConfig(
        episodes=int(s["episodes"]), gamma=float(s["gamma"]),
        learning_rate=float(s["learning_rate"]), batch_size=int(s["batch_size"]),
        replay_capacity=int(s["replay_capacity"]), tau=float(s["tau"]),
        auto_alpha=bool(s["auto_alpha"]), alpha_init=float(s["alpha_init"]),
        target_entropy=float(s["target_entropy"]), warmup_steps=int(s["warmup_steps"]),
        update_every=int(s["update_every"]), checkpoint_every=int(s["checkpoint_every"]),
        torch_threads=int(s["torch_threads"]))


def build_schedule(cfg: dict) -> ExplorationSchedule:
    s = cfg["sac"]
    return ExplorationSchedule(epsilon_start=float(s["epsilon_start"]),
                               decay=float(s["epsilon_decay"]),
                               epsilon_min=float(s["epsilon_min"]))
