"""Depth-image-driven vineyard row navigation: simulator, SAC trainer, evaluator."""

from .env import Action, Observation, Outcome, RewardConfig, VineyardEnv
from .robot import JACKAL, HUSKY, PlatformSpec
from .sensor import CameraParams, NoiseSpec
from .world import (VineyardWorld, WorldConfig, generate_world, load_world,
                    save_world, test_world_config, train_world_config)

__version__ = "0.1.0"

__all__ = [
    "Action", "Observation", "Outcome", "RewardConfig", "VineyardEnv",
    "JACKAL", "HUSKY", "PlatformSpec", "CameraParams", "NoiseSpec",
    "VineyardWorld", "WorldConfig", "generate_world", "load_world",
    "save_world", "test_world_config", "train_world_config", "__version__",
]
