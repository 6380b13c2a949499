"""Soft Actor-Critic training: replay, twin-critic Bellman updates, temperature.

One agent class covers both the depth-image networks and the small dense
networks used by vision-free environments; the update math is identical.
Depth frames in the replay ring are quantized to uint8 over [0, 5] m to keep
a six-figure buffer inside desk-scale RAM (2 cm resolution, far below the
sensor noise floor).
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .env import Action, Observation, Outcome, uniform_action
from .net import (deterministic_action_batch, sample_action_batch,
                  save_checkpoint, action_from_tensor)
from .util import stream_int, stream_rng

MAX_DEPTH = 5.0


class TrainingDiverged(RuntimeError):
    """Critic loss stayed above the configured ceiling for too many updates."""


@dataclass(frozen=True)
class SACConfig:
    episodes: int = 1500
    gamma: float = 0.99
    learning_rate: float = 2e-4
    batch_size: int = 32
    replay_capacity: int = 100_000
    tau: float = 0.005
    auto_alpha: bool = True
    alpha_init: float = 0.2
    target_entropy: float = -2.0            # = -action dims
    warmup_steps: int = 1000
    update_every: int = 10                  # env steps per gradient update
    checkpoint_every: int = 100             # episodes
    divergence_ceiling: float = 1e8
    divergence_patience: int = 50
    torch_threads: int = 2

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must be in [0, 1)")
        for name in ("learning_rate", "tau", "alpha_init"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ExplorationSchedule:
    """Exponentially decaying chance of replacing the policy action."""

    epsilon_start: float = 1.0
    decay: float = 0.992
    epsilon_min: float = 0.05

    def epsilon(self, episode: int) -> float:
        if episode < 0:
            raise ValueError("episode must be >= 0")
        return max(self.epsilon_min, self.epsilon_start * self.decay ** episode)


class ReplayBuffer:
    """Uniform-sampling ring buffer; depth frames stored uint8-quantized."""

    def __init__(self, capacity: int, rng: np.random.Generator,
                 state_dim: int = 3, image_shape: Optional[tuple[int, int]] = (112, 112)):
        self.capacity = int(capacity)
        self.rng = rng
        self.image_shape = image_shape
        if image_shape is not None:
            self.depth = np.zeros((capacity, *image_shape), dtype=np.uint8)
            self.next_depth = np.zeros((capacity, *image_shape), dtype=np.uint8)
        self.vec = np.zeros((capacity, state_dim), dtype=np.float32)
        self.next_vec = np.zeros((capacity, state_dim), dtype=np.float32)
        self.action = np.zeros((capacity, 2), dtype=np.float32)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.size = 0
        self._cursor = 0

    @staticmethod
    def _quantize(depth: np.ndarray) -> np.ndarray:
        return np.round(np.clip(depth, 0.0, MAX_DEPTH) / MAX_DEPTH * 255.0).astype(np.uint8)

    @staticmethod
    def _dequantize(q: np.ndarray) -> np.ndarray:
        return q.astype(np.float32) * (MAX_DEPTH / 255.0)

    def push(self, obs: Observation, action: Action, reward: float,
             next_obs: Observation, done: bool) -> None:
        i = self._cursor
        if self.image_shape is not None:
            self.depth[i] = self._quantize(obs.depth)
            self.next_depth[i] = self._quantize(next_obs.depth)
        self.vec[i] = obs.state_vec
        self.next_vec[i] = next_obs.state_vec
        self.action[i] = (action.v, action.omega)
        self.reward[i] = reward
        self.done[i] = 1.0 if done else 0.0
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> dict[str, torch.Tensor]:
        if self.size == 0:
            raise RuntimeError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self.size, size=batch_size)
        batch = {
            "vec": torch.from_numpy(self.vec[idx]),
            "next_vec": torch.from_numpy(self.next_vec[idx]),
            "action": torch.from_numpy(self.action[idx]),
            "reward": torch.from_numpy(self.reward[idx]),
            "done": torch.from_numpy(self.done[idx]),
        }
        if self.image_shape is not None:
            batch["depth"] = torch.from_numpy(self._dequantize(self.depth[idx])).unsqueeze(1)
            batch["next_depth"] = torch.from_numpy(
                self._dequantize(self.next_depth[idx])).unsqueeze(1)
        return batch


def soft_update(target: torch.nn.Module, online: torch.nn.Module, tau: float) -> None:
    """theta' <- tau*theta + (1 - tau)*theta', elementwise."""
    with torch.no_grad():
        for tp, op in zip(target.parameters(), online.parameters()):
            if tp.shape != op.shape:
                raise ValueError("target/online parameter shape mismatch")
            tp.mul_(1.0 - tau).add_(op, alpha=tau)


class SACAgent:
    """Actor, twin critics with targets, and the entropy temperature."""

    def __init__(self, actor: torch.nn.Module, critic1: torch.nn.Module,
                 critic2: torch.nn.Module, cfg: SACConfig, seed: int,
                 vision: bool = True):
        self.cfg = cfg
        self.vision = vision
        self.actor = actor
        self.critic1 = critic1
        self.critic2 = critic2
        self.target1 = copy.deepcopy(critic1)
        self.target2 = copy.deepcopy(critic2)
        for t in (self.target1, self.target2):
            for p in t.parameters():
                p.requires_grad_(False)
        lr = cfg.learning_rate
        self.actor_opt = torch.optim.Adam(actor.parameters(), lr=lr)
        self.critic1_opt = torch.optim.Adam(critic1.parameters(), lr=lr)
        self.critic2_opt = torch.optim.Adam(critic2.parameters(), lr=lr)
        self.log_alpha = torch.tensor(math.log(cfg.alpha_init), requires_grad=True)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=lr)
        self.torch_gen = torch.Generator().manual_seed(stream_int(seed, "policy-sample"))
        self._diverged_streak = 0
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.detach().exp())

    # -- observation plumbing -------------------------------------------

    def _obs_tensors(self, obs) -> tuple[Optional[torch.Tensor], torch.Tensor]:
        vec = torch.from_numpy(np.asarray(obs.state_vec, dtype=np.float32)).unsqueeze(0)
        if not self.vision:
            return None, vec
        depth = torch.from_numpy(np.asarray(obs.depth, dtype=np.float32))
        return depth.unsqueeze(0).unsqueeze(0), vec

    def _actor_forward(self, depth, vec):
        return self.actor(depth, vec) if self.vision else self.actor(vec)

    def _critic_forward(self, critic, depth, vec, action):
        return critic(depth, vec, action) if self.vision else critic(vec, action)

    # -- acting -----------------------------------------------------------

    def select_training_action(self, obs, epsilon: float,
                               rng: np.random.Generator) -> tuple[Action, bool]:
        """epsilon-greedy overlay: uniform action with probability epsilon."""
        if rng.random() < epsilon:
            return uniform_action(rng), True
        return self.sample_action(obs), False

    def sample_action(self, obs) -> Action:
        depth, vec = self._obs_tensors(obs)
        with torch.no_grad():
            mu, log_std = self._actor_forward(depth, vec)
            act, _ = sample_action_batch(mu, log_std, generator=self.torch_gen)
        return action_from_tensor(act[0])

    def act_deterministic(self, obs) -> Action:
        depth, vec = self._obs_tensors(obs)
        with torch.no_grad():
            mu, _ = self._actor_forward(depth, vec)
            act = deterministic_action_batch(mu)
        return action_from_tensor(act[0])

    # -- updates ----------------------------------------------------------

    def critic_targets(self, batch: dict[str, torch.Tensor]) -> torch.Tensor:
        cfg = self.cfg
        with torch.no_grad():
            nd = batch.get("next_depth")
            nv = batch["next_vec"]
            mu, log_std = self._actor_forward(nd, nv)
            next_a, next_logp = sample_action_batch(mu, log_std, generator=self.torch_gen)
            q1 = self._critic_forward(self.target1, nd, nv, next_a)
            q2 = self._critic_forward(self.target2, nd, nv, next_a)
            soft_q = torch.min(q1, q2) - self.log_alpha.exp() * next_logp
            return batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * soft_q

    def update(self, batch: dict[str, torch.Tensor]) -> dict[str, float]:
        """One full SAC step: both critics, the actor, and the temperature."""
        d = batch.get("depth")
        vec = batch["vec"]
        y = self.critic_targets(batch)
        if not torch.isfinite(y).all():
            raise TrainingDiverged("non-finite Bellman target")

        q1 = self._critic_forward(self.critic1, d, vec, batch["action"])
        loss1 = torch.mean((q1 - y) ** 2)
        self.critic1_opt.zero_grad()
        loss1.backward()
        self.critic1_opt.step()

        q2 = self._critic_forward(self.critic2, d, vec, batch["action"])
        loss2 = torch.mean((q2 - y) ** 2)
        self.critic2_opt.zero_grad()
        loss2.backward()
        self.critic2_opt.step()

        actor_loss, logp = self._actor_step(d, vec)
        alpha_loss = self._alpha_step(logp)

        soft_update(self.target1, self.critic1, self.cfg.tau)
        soft_update(self.target2, self.critic2, self.cfg.tau)
        self.updates += 1

        critic_loss = float(0.5 * (loss1.detach() + loss2.detach()))
        if not math.isfinite(critic_loss) or critic_loss > self.cfg.divergence_ceiling:
            self._diverged_streak += 1
            if self._diverged_streak >= self.cfg.divergence_patience:
                raise TrainingDiverged(
                    f"critic loss {critic_loss:.3g} above ceiling for "
                    f"{self._diverged_streak} consecutive updates")
        else:
            self._diverged_streak = 0
        return {"critic_loss": critic_loss, "actor_loss": float(actor_loss),
                "alpha_loss": alpha_loss, "alpha": self.alpha}

    def _actor_step(self, d, vec) -> tuple[torch.Tensor, torch.Tensor]:
        """Reparameterized actor loss; critic parameters frozen for this step."""
        for critic in (self.critic1, self.critic2):
            for p in critic.parameters():
                p.requires_grad_(False)
        try:
            mu, log_std = self._actor_forward(d, vec)
            a, logp = sample_action_batch(mu, log_std, generator=self.torch_gen)
            if self.vision:
                with torch.no_grad():
                    f1 = self.critic1.features(d)
                    f2 = self.critic2.features(d)
                q = torch.min(self.critic1.q_from_features(f1, vec, a),
                              self.critic2.q_from_features(f2, vec, a))
            else:
                q = torch.min(self.critic1(vec, a), self.critic2(vec, a))
            actor_loss = (self.log_alpha.exp().detach() * logp - q).mean()
            self.actor_opt.zero_grad()
            actor_loss.backward()
            self.actor_opt.step()
        finally:
            for critic in (self.critic1, self.critic2):
                for p in critic.parameters():
                    p.requires_grad_(True)
        return actor_loss.detach(), logp.detach()

    def _alpha_step(self, logp: torch.Tensor) -> float:
        if not self.cfg.auto_alpha:
            return 0.0
        alpha_loss = -(self.log_alpha * (logp + self.cfg.target_entropy)).mean()
        self.alpha_opt.zero_grad()
        alpha_loss.backward()
        self.alpha_opt.step()
        return float(alpha_loss.detach())

    def checkpoint_sections(self) -> dict[str, torch.nn.Module]:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "target1": self.target1, "target2": self.target2}


@dataclass
class EpisodeRecord:
    episode: int
    total_reward: float
    steps: int
    outcome: str
    epsilon: float
    random_frac: float
    critic_loss: float
    actor_loss: float
    alpha: float
    buffer_size: int
    wall_s: float

    # wall_s stays out of the CSV so a same-seed rerun reproduces it bit-identically
    HEADER = ("episode,return,steps,outcome,epsilon,random_frac,"
              "critic_loss,actor_loss,alpha,buffer_size")

    def line(self) -> str:
        return (f"{self.episode},{self.total_reward:.6f},{self.steps},{self.outcome},"
                f"{self.epsilon:.6f},{self.random_frac:.6f},{self.critic_loss:.6g},"
                f"{self.actor_loss:.6g},{self.alpha:.6g},{self.buffer_size}")


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    records: list[EpisodeRecord] = field(default_factory=list)


def train(env, agent: SACAgent, schedule: ExplorationSchedule, cfg: SACConfig,
          seed: int, out_dir: str,
          episode_callback: Optional[Callable[[EpisodeRecord], None]] = None,
          ) -> TrainResult:
    """Full training loop: collect with the epsilon overlay, update on a cadence.

    Writes an episode-level CSV log as it goes, periodic checkpoints, and a
    final checkpoint. Timeout terminations are stored with done=False so the
    bootstrap continues past the artificial truncation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(cfg.torch_threads)
    torch.manual_seed(stream_int(seed, "torch-init"))

    explore_rng = stream_rng(seed, "exploration")
    buffer = ReplayBuffer(cfg.replay_capacity, stream_rng(seed, "replay"),
                          state_dim=len(env.reset(0).state_vec),
                          image_shape=(112, 112) if agent.vision else None)

    log_path = out / "training_log.csv"
    ckpt_path = out / "checkpoint_final.ckpt"
    records: list[EpisodeRecord] = []
    global_step = 0
    t_start = time.perf_counter()

    with open(log_path, "w") as log_file:
        log_file.write(EpisodeRecord.HEADER + "\n")
        for episode in range(cfg.episodes):
            eps = schedule.epsilon(episode)
            obs = env.reset(episode)
            total_reward = 0.0
            n_random = 0
            losses: list[dict[str, float]] = []
            steps = 0
            outcome = Outcome.RUNNING
            for _ in range(env.episode_cfg.max_steps):
                action, was_random = agent.select_training_action(obs, eps, explore_rng)
                n_random += int(was_random)
                res = env.step(action)
                done = res.outcome.terminal and res.outcome is not Outcome.TIMEOUT
                buffer.push(obs, action, res.reward, res.observation, done)
                obs = res.observation
                total_reward += res.reward
                global_step += 1
                steps += 1
                if (global_step >= cfg.warmup_steps
                        and global_step % cfg.update_every == 0
                        and buffer.size >= cfg.batch_size):
                    losses.append(agent.update(buffer.sample(cfg.batch_size)))
                if res.outcome.terminal:
                    outcome = res.outcome
                    break

            mean = lambda key: (sum(l[key] for l in losses) / len(losses)) if losses else math.nan
            rec = EpisodeRecord(
                episode=episode, total_reward=total_reward, steps=steps,
                outcome=outcome.value, epsilon=eps,
                random_frac=n_random / max(steps, 1),
                critic_loss=mean("critic_loss"), actor_loss=mean("actor_loss"),
                alpha=agent.alpha, buffer_size=buffer.size,
                wall_s=time.perf_counter() - t_start)
            records.append(rec)
            log_file.write(rec.line() + "\n")
            log_file.flush()
            if episode_callback is not None:
                episode_callback(rec)
            if cfg.checkpoint_every > 0 and (episode + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(str(out / f"checkpoint_ep{episode + 1:05d}.ckpt"),
                                agent.checkpoint_sections(),
                                meta={"episode": episode + 1, "seed": seed,
                                      "alpha": agent.alpha})

    save_checkpoint(str(ckpt_path), agent.checkpoint_sections(),
                    meta={"episode": cfg.episodes, "seed": seed, "alpha": agent.alpha})
    return TrainResult(checkpoint_path=str(ckpt_path), log_path=str(log_path),
                       records=records)
