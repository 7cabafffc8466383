"""Denoising-objective training, sample-indexed checkpoints and gradient checks."""
from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .diffusion import NoiseSchedule, forward_sample, make_linear_schedule, per_example_forward
from .model import Denoiser, ModelConfig, init_params

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "params.f32"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 2e-4
    total_samples: int = 8000
    checkpoint_every_samples: int = 4000
    seed: int = 0
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.checkpoint_every_samples <= 0:
            raise ValueError("checkpoint_every_samples must be > 0")
        if self.batch_size < 1 or self.total_samples < 1:
            raise ValueError("batch_size and total_samples must be >= 1")

    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Checkpoint:
    params: "OrderedDict[str, torch.Tensor]"
    schedule: NoiseSchedule
    config: ModelConfig
    samples_seen: int
    format_version: int = FORMAT_VERSION
    label_names: list = field(default_factory=list)

    def build_model(self) -> Denoiser:
        model = Denoiser(self.config)
        model.load_state_dict(self.params)
        model.eval()
        return model

    def save(self, path) -> Path:
        return save_checkpoint(self, path)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write ``manifest.json`` plus a flat little-endian float32 payload."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = [], [], 0
    for name, tensor in ckpt.params.items():
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        index.append({"name": name, "offset": offset, "shape": list(arr.shape)})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    manifest = {
        "format_version": ckpt.format_version,
        "samples_seen": ckpt.samples_seen,
        "config": ckpt.config.to_dict(),
        "schedule": ckpt.schedule.to_dict(),
        "label_names": list(ckpt.label_names),
        "tensors": index,
    }
    (path / PAYLOAD).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    payload = (path / PAYLOAD).read_bytes()
    params = OrderedDict()
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + 4 * count
        if end > len(payload):
            raise ValueError(f"payload too short for tensor {entry['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        params[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).astype(np.float32))
    return Checkpoint(
        params=params,
        schedule=NoiseSchedule.from_dict(manifest["schedule"]),
        config=ModelConfig.from_dict(manifest["config"]),
        samples_seen=int(manifest["samples_seen"]),
        format_version=manifest["format_version"],
        label_names=list(manifest.get("label_names", [])),
    )


def loss_term(model, x0, t, eps, y, sched: NoiseSchedule) -> torch.Tensor:
    """Mean squared error between the injected and the predicted noise."""
    if isinstance(t, (int, np.integer)):
        x_t = forward_sample(x0, int(t), eps, sched)
        t = torch.full((x0.shape[0],), int(t), dtype=torch.long)
    else:
        x_t = per_example_forward(x0, t, eps, sched)
    return torch.mean((eps - model(x_t, t, y)) ** 2)


@dataclass
class TrainResult:
    checkpoints: list
    loss_trace: list  # (step, samples_seen, loss)


def train(signals, labels, model_config: ModelConfig, train_config: TrainConfig,
          on_checkpoint=None, label_names=()) -> TrainResult:
    """Train a denoiser on ``signals`` (n, C, L) with integer ``labels`` (n, N).

    A checkpoint is taken every ``checkpoint_every_samples`` processed
    examples; the batch that would cross a boundary is shortened so that
    boundaries do not depend on the batch size. ``on_checkpoint`` is called
    with each checkpoint as it is produced.
    """
    signals = torch.as_tensor(np.asarray(signals), dtype=torch.float32)
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    n = signals.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if tuple(signals.shape[1:]) != (model_config.channels, model_config.length):
        raise ValueError(f"signals {tuple(signals.shape[1:])} do not match model config")
    tc = train_config
    sched = tc.schedule()
    model = init_params(model_config, tc.seed)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=tc.learning_rate, weight_decay=0.0)
    order_rng = np.random.default_rng(tc.seed)
    gen = torch.Generator().manual_seed(tc.seed)

    order, pos = order_rng.permutation(n), 0
    samples_seen, step = 0, 0
    next_ckpt = tc.checkpoint_every_samples
    checkpoints, trace = [], []
    while samples_seen < tc.total_samples:
        bs = min(tc.batch_size, next_ckpt - samples_seen, tc.total_samples - samples_seen)
        idx = []
        while len(idx) < bs:
            if pos == n:
                order, pos = order_rng.permutation(n), 0
            take = min(bs - len(idx), n - pos)
            idx.extend(order[pos:pos + take].tolist())
            pos += take
        x0, y = signals[idx], labels[idx]
        t = torch.randint(1, sched.T + 1, (bs,), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        loss = loss_term(model, x0, t, eps, y, sched)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(f"loss became {value} at step {step} ({samples_seen} samples)")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        step += 1
        samples_seen += bs
        trace.append((step, samples_seen, value))
        if samples_seen == next_ckpt or samples_seen == tc.total_samples:
            ckpt = Checkpoint(
                params=OrderedDict((k, v.detach().clone()) for k, v in model.state_dict().items()),
                schedule=sched, config=model_config, samples_seen=samples_seen,
                label_names=list(label_names),
            )
            checkpoints.append(ckpt)
            log.info("checkpoint at %d samples, loss %.4f", samples_seen, value)
            if on_checkpoint is not None:
                on_checkpoint(ckpt)
            if samples_seen == next_ckpt:
                next_ckpt += tc.checkpoint_every_samples
    return TrainResult(checkpoints, trace)


def _flat_params(model):
    return [p for p in model.parameters() if p.requires_grad]


def autograd_gradient(model, loss_fn) -> torch.Tensor:
    params = _flat_params(model)
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    return torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)
    ])


@dataclass
class GradCheckResult:
    max_rel_err: float
    coords: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def grad_check(model, loss_fn, n_coords: int = 50, seed: int = 0, h_rel: float = 1e-3,
               grad_fn=None, floor: float = 1e-8) -> GradCheckResult:
    """Compare an analytic gradient against central finite differences.

    ``loss_fn()`` evaluates the scalar loss with the model's current
    parameters. ``grad_fn(model, loss_fn)`` returns the flat analytic
    gradient and defaults to reverse-mode autodiff. The step for coordinate
    ``i`` is ``h_rel * |theta_i|``, or ``h_rel`` when ``theta_i`` is zero. Run on a float64 model.
    """
    grad_fn = grad_fn or autograd_gradient
    params = _flat_params(model)
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    analytic_all = grad_fn(model, loss_fn).detach()
    rng = np.random.default_rng(seed)
    coords = np.sort(rng.choice(total, size=min(n_coords, total), replace=False))
    offsets = np.cumsum([0] + sizes)
    analytic, numeric = [], []
    with torch.no_grad():
        for c in coords:
            k = int(np.searchsorted(offsets, c, side="right") - 1)
            flat = params[k].view(-1)
            j = int(c - offsets[k])
            orig = flat[j].item()
            h = h_rel * abs(orig) if orig != 0.0 else h_rel
            flat[j] = orig + h
            up = loss_fn().item()
            flat[j] = orig - h
            down = loss_fn().item()
            flat[j] = orig
            numeric.append((up - down) / (2 * h))
            analytic.append(analytic_all[c].item())
    analytic, numeric = np.array(analytic), np.array(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    return GradCheckResult(float(rel.max()), coords, analytic, numeric)


def tiny_probe(seed: int = 0, mechanism: str = "nle"):
    """A float64 one-block model (N=4, L=16) with a fixed batch, for gradient checks."""
    cfg = ModelConfig(channels=2, length=16, residual_channels=4, skip_channels=4, num_blocks=1,
                      s4_state_dim=4, embed_dim=8, step_embed_dim=8, step_hidden_dim=8,
                      mechanism=mechanism, num_labels=2)
    model = init_params(cfg, seed).double()
    sched = make_linear_schedule(10, 1e-3, 0.2)
    g = torch.Generator().manual_seed(seed + 1)
    x0 = torch.randn(3, 2, 16, generator=g, dtype=torch.float64)
    eps = torch.randn(3, 2, 16, generator=g, dtype=torch.float64)
    t = torch.tensor([1, 5, 10])
    y = torch.tensor([[0, 1], [1, 0], [1, 1]])
    return model, (lambda: loss_term(model, x0, t, eps, y, sched))
