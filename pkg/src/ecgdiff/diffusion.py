"""Forward and reverse DDPM processes with an epsilon-parameterized denoiser."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule. Step indices are 1-based: ``betas[t - 1]`` is beta_t."""

    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("schedule needs at least one step")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        if np.any(1.0 - betas == 1.0):
            raise ValueError("beta below float64 resolution")
        alpha_bars = np.cumprod(1.0 - betas)
        if alpha_bars[-1] < np.finfo(np.float64).tiny:
            # past this point the product goes subnormal and stops decreasing
            raise ValueError("alpha_bar underflows; use fewer steps or smaller betas")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def beta(self, t: int) -> float:
        self._check_step(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to ``t``; ``alpha_bar(0) == 1``."""
        if t == 0:
            return 1.0
        self._check_step(t)
        return float(self.alpha_bars[t - 1])

    def _check_step(self, t: int):
        if not 1 <= int(t) <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")

    def to_dict(self) -> dict:
        return {"T": self.T, "betas": [float(b) for b in self.betas]}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        sched = cls(d["betas"])
        if sched.T != int(d["T"]):
            raise ValueError("schedule T does not match betas length")
        return sched


def make_linear_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def _check_same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Draw from q(x_t | x_0) given the noise ``eps``."""
    _check_same_shape(x0, eps)
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def forward_step(x_prev, t: int, eps, sched: NoiseSchedule):
    """One transition of q(x_t | x_{t-1})."""
    _check_same_shape(x_prev, eps)
    b = sched.beta(t)
    return math.sqrt(1.0 - b) * x_prev + math.sqrt(b) * eps


def posterior_variance(t: int, sched: NoiseSchedule) -> float:
    b = sched.beta(t)
    return (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t)) * b


def reverse_step(x_t, eps_hat, t: int, sched: NoiseSchedule, z=None):
    """x_{t-1} from x_t and the predicted noise. ``z`` is ignored at t = 1."""
    _check_same_shape(x_t, eps_hat)
    b = sched.beta(t)
    ab = sched.alpha_bar(t)
    mean = (x_t - (b / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(1.0 - b)
    if t == 1 or z is None:
        return mean
    _check_same_shape(x_t, z)
    return mean + math.sqrt(posterior_variance(t, sched)) * z


def per_example_forward(x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Batched closed-form noising with one step index per example (``t`` is 1-based)."""
    _check_same_shape(x0, eps)
    ab = torch.as_tensor(sched.alpha_bars, dtype=torch.float64)[t.long() - 1]
    ab = ab.to(x0.dtype).view(-1, *([1] * (x0.dim() - 1)))
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps


@torch.no_grad()
def sample(model, labels, sched: NoiseSchedule, rng_seed: int | None = None,
           generator: torch.Generator | None = None) -> torch.Tensor:
    """Ancestral sampling from x_T ~ N(0, I) down to x_0.

    ``model(x_t, t, labels)`` must return the predicted noise and expose
    ``model.config.channels`` and ``model.config.length``. ``labels`` is a
    (batch, n_labels) integer tensor.
    """
    if generator is None:
        generator = torch.Generator().manual_seed(0 if rng_seed is None else int(rng_seed))
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.dim() == 1:
        labels = labels.unsqueeze(0)
    cfg = model.config
    dtype = next(model.parameters()).dtype
    shape = (labels.shape[0], cfg.channels, cfg.length)
    x = torch.randn(shape, generator=generator, dtype=dtype)
    for t in range(sched.T, 0, -1):
        steps = torch.full((shape[0],), t, dtype=torch.long)
        eps_hat = model(x, steps, labels)
        z = torch.randn(shape, generator=generator, dtype=dtype) if t > 1 else None
        x = reverse_step(x, eps_hat, t, sched, z)
    return x
