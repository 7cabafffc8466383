"""The conditional denoiser: residual S4 blocks with step and label conditioning."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
from torch import nn
import torch.nn.functional as F

from .conditioning import MECHANISMS, ConditioningError, make_conditioner
from .s4 import S4Layer


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 2
    length: int = 256
    residual_channels: int = 32
    skip_channels: int = 32
    num_blocks: int = 4
    s4_state_dim: int = 16
    embed_dim: int = 128
    step_embed_dim: int = 128
    step_hidden_dim: int = 128
    mechanism: str = "nle"
    num_labels: int = 1
    padding: bool = False
    s4_activation: str = "gelu"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {MECHANISMS}")
        if self.step_embed_dim % 2:
            raise ValueError("step_embed_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# 8 leads x 1000 samples (10 s at 100 Hz), 128-d label embeddings
FULL_SCALE = ModelConfig(channels=8, length=1000, residual_channels=256, skip_channels=256,
                          num_blocks=36, s4_state_dim=64, step_hidden_dim=512, num_labels=1)
DESK_SCALE = ModelConfig()


def sinusoidal_encoding(t, dim: int) -> torch.Tensor:
    """Raw step encoding: sin half then cos half, frequencies 10^(-4k/(dim/2 - 1))."""
    if dim % 2:
        raise ValueError("encoding dimension must be even")
    half = dim // 2
    t = torch.as_tensor(t, dtype=torch.float64).reshape(-1, 1)
    scale = math.log(10000.0) / max(half - 1, 1)
    freqs = torch.exp(-scale * torch.arange(half, dtype=torch.float64))
    arg = t * freqs
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=1)


class StepEmbedding(nn.Module):
    def __init__(self, dim: int = 128, hidden: int = 512):
        super().__init__()
        self.dim = dim
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        h = sinusoidal_encoding(t, self.dim).to(self.fc1.weight.dtype)
        h = F.silu(self.fc1(h))
        return F.silu(self.fc2(h))


def diffusion_step_embedding(t, dim: int, embedder: StepEmbedding | None = None) -> torch.Tensor:
    """Raw sinusoidal encoding, or the trained embedding when ``embedder`` is given."""
    if embedder is None:
        return sinusoidal_encoding(t, dim)
    if embedder.dim != dim:
        raise ValueError("embedder dimension mismatch")
    return embedder(torch.as_tensor(t).reshape(-1))


class ResidualBlock(nn.Module):
    """conv1x1 -> S4 -> + step + label bias -> tanh*sigmoid gate -> residual/skip."""

    def __init__(self, res: int, skip: int, state_dim: int, step_hidden: int, cond_dim: int,
                 activation: str = "gelu"):
        super().__init__()
        self.in_conv = nn.Conv1d(res, 2 * res, kernel_size=1)
        self.s4 = S4Layer(2 * res, state_dim, activation=activation)
        self.step_proj = nn.Linear(step_hidden, 2 * res)
        # no bias: a zero label embedding contributes nothing
        self.cond_proj = nn.Linear(cond_dim, 2 * res, bias=False)
        self.res_conv = nn.Conv1d(res, res, kernel_size=1)
        self.skip_conv = nn.Conv1d(res, skip, kernel_size=1)
        nn.init.kaiming_normal_(self.in_conv.weight)
        nn.init.kaiming_normal_(self.res_conv.weight)
        nn.init.kaiming_normal_(self.skip_conv.weight)

    def forward(self, x, step_emb, cond):
        h = self.s4(self.in_conv(x))
        h = h + self.step_proj(step_emb)[..., None] + self.cond_proj(cond)[..., None]
        a, b = h.chunk(2, dim=1)
        h = torch.tanh(a) * torch.sigmoid(b)
        return (x + self.res_conv(h)) / math.sqrt(2.0), self.skip_conv(h)


# 1 / sqrt(E[silu(z)^2]) for z ~ N(0, 1): the He gain for a SiLU that follows the layer
SILU_GAIN = 1.6776


def _silu_init(conv: nn.Conv1d):
    fan_in = conv.in_channels * conv.kernel_size[0]
    nn.init.normal_(conv.weight, std=SILU_GAIN / math.sqrt(fan_in))


class Denoiser(nn.Module):
    """Predicts the injected noise from (x_t, t, labels); x_t is (batch, channels, length)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = c = config
        self.init_conv = nn.Conv1d(c.channels, c.residual_channels, kernel_size=1)
        _silu_init(self.init_conv)
        self.step_embed = StepEmbedding(c.step_embed_dim, c.step_hidden_dim)
        self.conditioner = make_conditioner(c.mechanism, c.num_labels, c.embed_dim, c.padding)
        self.blocks = nn.ModuleList(
            ResidualBlock(c.residual_channels, c.skip_channels, c.s4_state_dim, c.step_hidden_dim,
                          c.embed_dim, c.s4_activation)
            for _ in range(c.num_blocks)
        )
        self.final_conv1 = nn.Conv1d(c.skip_channels, c.skip_channels, kernel_size=1)
        self.final_conv2 = nn.Conv1d(c.skip_channels, c.channels, kernel_size=1)
        # unit gain so the initial noise estimate is on the scale of the target
        nn.init.normal_(self.final_conv2.weight, std=1.0 / math.sqrt(c.skip_channels))
        _silu_init(self.final_conv1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        c = self.config
        if x.dim() != 3 or x.shape[1:] != (c.channels, c.length):
            raise ValueError(f"expected (batch, {c.channels}, {c.length}), got {tuple(x.shape)}")
        y = torch.as_tensor(y)
        if y.dim() == 1:
            y = y.unsqueeze(0).expand(x.shape[0], -1)
        if y.shape[-1] != c.num_labels:
            raise ConditioningError(f"model expects {c.num_labels} labels, got {y.shape[-1]}")
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(x.shape[0])
        step_emb = self.step_embed(t)
        cond = self.conditioner(y)
        h = F.silu(self.init_conv(x))
        skip = 0.0
        for block in self.blocks:
            h, s = block(h, step_emb, cond)
            skip = skip + s
        out = F.silu(self.final_conv1(skip / math.sqrt(c.num_blocks)))
        return self.final_conv2(out)


def init_params(config: ModelConfig, seed: int = 0) -> Denoiser:
    """Build a denoiser with a reproducible initialization."""
    devices = []
    with torch.random.fork_rng(devices=devices):
        torch.manual_seed(seed)
        model = Denoiser(config)
    return model
