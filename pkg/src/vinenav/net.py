"""Actor and critic networks, squashed-Gaussian action maps, checkpoint format.

The convolutional trunk maps the 112x112 depth frame to 32 features
(stride-2 conv, stride-1 conv, 2x2 max-pool, stride-2 conv, stride-1 conv,
global average pool); the head concatenates the robot state (and the action,
for critics) and applies two 256-unit dense layers. Constructed sizes:
actor 104,100 parameters, critic 103,841.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .env import Action

STATE_DIM = 3
ACTION_DIM = 2
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_TANH_EDGE = 1.0 - 1e-6

CHECKPOINT_MAGIC = b"VNCK"
CHECKPOINT_VERSION = 1


class CheckpointMismatch(RuntimeError):
    """Checkpoint architecture hash does not match the constructed network."""


class ConvTrunk(nn.Module):
    """Depth-image feature extractor ending in a 32-wide global average pool."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 32, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(32, 32, kernel_size=3, stride=1, padding=1)
        self.pool = nn.MaxPool2d(2)
        self.conv3 = nn.Conv2d(32, 32, kernel_size=3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(32, 32, kernel_size=3, stride=1, padding=1)

    def forward(self, depth: torch.Tensor) -> torch.Tensor:
        if depth.dim() != 4 or depth.shape[1] != 1 or depth.shape[2:] != (112, 112):
            raise ValueError(f"expected (B, 1, 112, 112) depth input, got {tuple(depth.shape)}")
        x = depth / 5.0                       # bring meters into unit scale
        x = F.relu(self.conv1(x))             # 112 -> 56
        x = F.relu(self.conv2(x))             # 56
        x = self.pool(x)                      # 56 -> 28
        x = F.relu(self.conv3(x))             # 28 -> 14
        x = F.relu(self.conv4(x))             # 14
        return x.mean(dim=(2, 3))             # (B, 32)


class DenseHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, hidden: int = 256):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.fc1(x))
        x = F.relu(self.fc2(x))
        return self.out(x)


class ConvActor(nn.Module):
    """Policy network: depth frame + state vector -> (mu, log_std) per action."""

    def __init__(self):
        super().__init__()
        self.trunk = ConvTrunk()
        self.head = DenseHead(32 + STATE_DIM, 2 * ACTION_DIM)

    def forward(self, depth: torch.Tensor, vec: torch.Tensor,
                ) -> tuple[torch.Tensor, torch.Tensor]:
        if vec.dim() != 2 or vec.shape[1] != STATE_DIM:
            raise ValueError(f"expected (B, {STATE_DIM}) state vector, got {tuple(vec.shape)}")
        feats = self.trunk(depth)
        raw = self.head(torch.cat([feats, vec], dim=1))
        mu, log_std = raw[:, :ACTION_DIM], raw[:, ACTION_DIM:]
        return mu, torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)


class ConvCritic(nn.Module):
    """Q network: same trunk; the action joins the state at the dense input."""

    def __init__(self):
        super().__init__()
        self.trunk = ConvTrunk()
        self.head = DenseHead(32 + STATE_DIM + ACTION_DIM, 1)

    def forward(self, depth: torch.Tensor, vec: torch.Tensor,
                action: torch.Tensor) -> torch.Tensor:
        if action.dim() != 2 or action.shape[1] != ACTION_DIM:
            raise ValueError(f"expected (B, {ACTION_DIM}) action, got {tuple(action.shape)}")
        feats = self.trunk(depth)
        return self.head(torch.cat([feats, vec, action], dim=1)).squeeze(-1)

    def features(self, depth: torch.Tensor) -> torch.Tensor:
        return self.trunk(depth)

    def q_from_features(self, feats: torch.Tensor, vec: torch.Tensor,
                        action: torch.Tensor) -> torch.Tensor:
        return self.head(torch.cat([feats, vec, action], dim=1)).squeeze(-1)


class MlpActor(nn.Module):
    """Small dense policy for vision-free environments (same output contract)."""

    def __init__(self, state_dim: int, hidden: int = 64):
        super().__init__()
        self.fc1 = nn.Linear(state_dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, 2 * ACTION_DIM)

    def forward(self, vec: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = F.relu(self.fc1(vec))
        x = F.relu(self.fc2(x))
        raw = self.out(x)
        mu, log_std = raw[:, :ACTION_DIM], raw[:, ACTION_DIM:]
        return mu, torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)


class MlpCritic(nn.Module):
    def __init__(self, state_dim: int, hidden: int = 64):
        super().__init__()
        self.fc1 = nn.Linear(state_dim + ACTION_DIM, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, 1)

    def forward(self, vec: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        x = torch.cat([vec, action], dim=1)
        x = F.relu(self.fc1(x))
        x = F.relu(self.fc2(x))
        return self.out(x).squeeze(-1)


# -- squashing maps ----------------------------------------------------------

def squash_raw(raw: torch.Tensor) -> torch.Tensor:
    """Map post-tanh values onto the action box: v=(tanh0+1)/4, omega=tanh1."""
    raw = torch.clamp(raw, -_TANH_EDGE, _TANH_EDGE)
    v = 0.25 * (raw[..., 0] + 1.0)
    return torch.stack([v, raw[..., 1]], dim=-1)


def sample_action_batch(mu: torch.Tensor, log_std: torch.Tensor,
                        generator: Optional[torch.Generator] = None,
                        ) -> tuple[torch.Tensor, torch.Tensor]:
    """Reparameterized squashed-Gaussian sample with its log density.

    The density correction covers the tanh squash of both actions plus the
    affine map of the velocity onto (0, 0.5).
    """
    std = log_std.exp()
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    u = mu + std * eps
    action = squash_raw(torch.tanh(u))
    log_prob = gaussian_log_prob(u, mu, log_std) - tanh_affine_log_det(u)
    return action, log_prob


def gaussian_log_prob(u: torch.Tensor, mu: torch.Tensor,
                      log_std: torch.Tensor) -> torch.Tensor:
    var = torch.exp(2.0 * log_std)
    log_n = -0.5 * ((u - mu) ** 2 / var + 2.0 * log_std + math.log(2.0 * math.pi))
    return log_n.sum(dim=-1)


def tanh_affine_log_det(u: torch.Tensor) -> torch.Tensor:
    """log |d action / d u| for the tanh squash plus the velocity affine map."""
    # log(1 - tanh(u)^2) == 2*(log 2 - u - softplus(-2u)), numerically stable
    log_one_minus_t2 = 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))
    return log_one_minus_t2.sum(dim=-1) + math.log(0.25)


def deterministic_action_batch(mu: torch.Tensor) -> torch.Tensor:
    return squash_raw(torch.tanh(mu))


def action_from_tensor(t: torch.Tensor) -> Action:
    v, w = float(t[0]), float(t[1])
    return Action(v, w)


# -- parameter bookkeeping ----------------------------------------------------

def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_ledger(module: nn.Module) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, count) per parameter tensor, in registration order."""
    return [(name, tuple(p.shape), p.numel())
            for name, p in module.named_parameters()]


def arch_hash(module: nn.Module) -> str:
    desc = json.dumps([[name, list(shape)] for name, shape, _ in parameter_ledger(module)])
    return hashlib.sha256((module.__class__.__name__ + desc).encode()).hexdigest()[:16]


def flat_parameters(module: nn.Module) -> np.ndarray:
    with torch.no_grad():
        return torch.cat([p.reshape(-1) for p in module.parameters()]).cpu().numpy().copy()


def flat_gradients(module: nn.Module) -> np.ndarray:
    """Concatenated gradient of the last backward pass, zeros where absent."""
    chunks = []
    for p in module.parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        chunks.append(g.reshape(-1))
    return torch.cat(chunks).detach().cpu().numpy().copy()


def load_flat_parameters(module: nn.Module, flat: np.ndarray) -> None:
    flat_t = torch.as_tensor(flat)
    offset = 0
    with torch.no_grad():
        for p in module.parameters():
            n = p.numel()
            p.copy_(flat_t[offset:offset + n].reshape(p.shape).to(p.dtype))
            offset += n
    if offset != flat_t.numel():
        raise ValueError(f"parameter payload size mismatch: {flat_t.numel()} vs {offset}")


# -- checkpoint format --------------------------------------------------------

def save_checkpoint(path: str, sections: dict[str, nn.Module],
                    meta: Optional[dict] = None) -> None:
    """Versioned header (arch hashes, shapes) + flat little-endian float32 payload."""
    names = sorted(sections)
    header = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "sections": {
            name: {
                "arch": arch_hash(sections[name]),
                "tensors": [[t, list(s)] for t, s, _ in parameter_ledger(sections[name])],
            }
            for name in names
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in names:
            payload = flat_parameters(sections[name]).astype("<f4")
            f.write(payload.tobytes())


def read_checkpoint_header(path: str) -> dict:
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointMismatch(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        return json.loads(f.read(hlen).decode("utf-8"))


def load_checkpoint(path: str, sections: dict[str, nn.Module]) -> dict:
    """Load named sections into modules; rejects any architecture mismatch."""
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointMismatch(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointMismatch(f"unsupported checkpoint version {header.get('version')}")
        stored = header["sections"]
        for name, module in sections.items():
            if name not in stored:
                raise CheckpointMismatch(f"checkpoint has no section {name!r}")
            if stored[name]["arch"] != arch_hash(module):
                raise CheckpointMismatch(
                    f"architecture hash mismatch for section {name!r}")
        for name in sorted(stored):
            n_values = sum(int(np.prod(s)) for _, s in stored[name]["tensors"])
            payload = np.frombuffer(f.read(4 * n_values), dtype="<f4")
            if name in sections:
                load_flat_parameters(sections[name], payload)
    return header
