"""Label conditioning: the legacy matrix product and the two-row ("nle") table.

Label vectors hold 0/1 per label, or ``PAD`` where the label is masked out.
The legacy mechanism has no padding slot; the nle table keeps a separate
padding row outside the (N, 2, d) tensor.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import torch
from torch import nn

PAD = -1
MECHANISMS = ("legacy", "nle")


class ConditioningError(ValueError):
    pass


def validate_labels(y, n_labels: int | None = None, allow_pad: bool = False) -> np.ndarray:
    y = np.asarray(y)
    if n_labels is not None and y.shape[-1] != n_labels:
        raise ConditioningError(f"expected {n_labels} labels, got {y.shape[-1]}")
    ok = (y == 0) | (y == 1) | ((y == PAD) if allow_pad else False)
    if not np.all(ok):
        if not allow_pad and np.any(y == PAD):
            raise ConditioningError("PAD entries need a padding row")
        raise ConditioningError("label entries must be 0, 1 or PAD")
    return y.astype(np.int64)


def embed_legacy(E_legacy, y) -> np.ndarray:
    """Sum of the embedding rows of the present labels, ``y @ E``."""
    E_legacy = np.asarray(E_legacy, dtype=np.float64)
    y = validate_labels(y, E_legacy.shape[0], allow_pad=False)
    return y.astype(np.float64) @ E_legacy


def embed_nle(table, fold_w, y, fold_b=0.0, pad_row=None) -> np.ndarray:
    """Gather ``table[i, y_i]`` per label and fold the N rows with a 1x1 kernel."""
    table = np.asarray(table, dtype=np.float64)
    n = table.shape[0]
    y = validate_labels(y, n, allow_pad=pad_row is not None)
    rows = np.stack([
        np.asarray(pad_row, dtype=np.float64) if yi == PAD else table[i, yi]
        for i, yi in enumerate(y)
    ])
    return np.asarray(fold_w, dtype=np.float64) @ rows + fold_b


def neutral_distinguishability(table, fold_w, fold_b=0.0) -> float:
    """Smallest embedding gap between y_i = 0 and y_i = 1, other labels at 0."""
    table = np.asarray(table, dtype=np.float64)
    n = table.shape[0]
    gaps = []
    for i in range(n):
        y0 = np.zeros(n, dtype=np.int64)
        y1 = y0.copy()
        y1[i] = 1
        gaps.append(np.linalg.norm(embed_nle(table, fold_w, y0, fold_b) - embed_nle(table, fold_w, y1, fold_b)))
    return float(min(gaps))


def legacy_distinguishability(E_legacy) -> float:
    E_legacy = np.asarray(E_legacy, dtype=np.float64)
    n = E_legacy.shape[0]
    return float(min(
        np.linalg.norm(embed_legacy(E_legacy, np.zeros(n, dtype=int)) - embed_legacy(E_legacy, np.eye(n, dtype=int)[i]))
        for i in range(n)
    ))


def all_label_vectors(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)


class LegacyConditioner(nn.Module):
    """y (B, N) -> y @ E, shape (B, d)."""

    mechanism = "legacy"

    def __init__(self, n_labels: int, dim: int = 128):
        super().__init__()
        self.n_labels, self.dim = n_labels, dim
        self.E = nn.Parameter(torch.randn(n_labels, dim) / math.sqrt(dim))

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[-1] != self.n_labels:
            raise ConditioningError(f"expected {self.n_labels} labels, got {y.shape[-1]}")
        if torch.any(y == PAD):
            raise ConditioningError("legacy conditioning has no padding index")
        return y.to(self.E.dtype) @ self.E


class NleConditioner(nn.Module):
    """Two embeddings per label, selected by y_i, folded N -> 1 by a 1x1 conv.

    Embeddings are drawn N(0, 1/d); the fold starts at uniform weights 1/N
    with zero bias.
    """

    mechanism = "nle"

    def __init__(self, n_labels: int, dim: int = 128, padding: bool = False):
        super().__init__()
        self.n_labels, self.dim = n_labels, dim
        self.table = nn.Parameter(torch.randn(n_labels, 2, dim) / math.sqrt(dim))
        self.pad_row = nn.Parameter(torch.randn(dim) / math.sqrt(dim)) if padding else None
        self.fold = nn.Conv1d(n_labels, 1, kernel_size=1)
        with torch.no_grad():
            self.fold.weight.fill_(1.0 / n_labels)
            self.fold.bias.zero_()

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[-1] != self.n_labels:
            raise ConditioningError(f"expected {self.n_labels} labels, got {y.shape[-1]}")
        is_pad = y == PAD
        if torch.any(is_pad) and self.pad_row is None:
            raise ConditioningError("PAD label given but no padding row configured")
        idx = y.clamp(min=0).long()
        # rows[b, i, :] = table[i, y[b, i], :]
        rows = self.table[torch.arange(self.n_labels), idx]
        if self.pad_row is not None:
            rows = torch.where(is_pad[..., None], self.pad_row.expand_as(rows), rows)
        return self.fold(rows).squeeze(1)


def make_conditioner(mechanism: str, n_labels: int, dim: int = 128, padding: bool = False) -> nn.Module:
    if mechanism == "legacy":
        if padding:
            raise ConditioningError("legacy conditioning has no padding index")
        return LegacyConditioner(n_labels, dim)
    if mechanism == "nle":
        return NleConditioner(n_labels, dim, padding=padding)
    raise ConditioningError(f"unknown conditioning mechanism {mechanism!r}")
