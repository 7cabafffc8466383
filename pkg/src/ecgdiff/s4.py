"""Structured state-space sequence layer.

The numpy functions are the reference path: HiPPO-LegS initialization,
bilinear discretization, dense kernel materialization, the step-by-step
recurrence and causal convolution (FFT or direct). ``S4Layer`` is the
trainable torch version used inside the denoiser; it builds the same kernel
by repeated squaring so that autograd sees only O(log L) matrix products.

Output convention for the recurrence: the state absorbs ``u_k`` before the
readout, ``x_{k+1} = Abar x_k + Bbar u_k`` and ``y_k = C x_{k+1} + D u_k``.
With that convention the kernel is ``K_l = C Abar^l Bbar`` and recurrence and
convolution agree exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F


class DiscretizationError(np.linalg.LinAlgError):
    pass


def hippo_legs_matrix(N: int) -> tuple[np.ndarray, np.ndarray]:
    """HiPPO-LegS state matrix and input vector (0-indexed rows ``n``, cols ``k``)."""
    if N < 1:
        raise ValueError("state dimension must be >= 1")
    q = np.sqrt(2.0 * np.arange(N) + 1.0)
    A = -np.tril(np.outer(q, q), k=-1) - np.diag(np.arange(N) + 1.0)
    return A, q.copy()


@dataclass
class StateSpaceParams:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float = 0.0
    log_dt: float = 0.0

    @property
    def dt(self) -> float:
        return math.exp(self.log_dt)

    def discretize(self):
        return discretize_bilinear(self.A, self.B, self.dt)


def discretize_bilinear(A, B, dt: float) -> tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_1d(np.asarray(B, dtype=np.float64))
    eye = np.eye(A.shape[0])
    lhs = eye - dt / 2.0 * A
    rhs = np.concatenate([eye + dt / 2.0 * A, (dt * B)[:, None]], axis=1)
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise DiscretizationError(f"ill-conditioned discretization at dt={dt}") from exc
    if not np.all(np.isfinite(sol)) or np.linalg.cond(lhs) > 1e14:
        raise DiscretizationError(f"ill-conditioned discretization at dt={dt}")
    return sol[:, :-1], sol[:, -1]


def compute_kernel(Abar, Bbar, C, L: int) -> np.ndarray:
    """K_l = C Abar^l Bbar for l < L, by iterated matrix-vector products."""
    if L < 1:
        raise ValueError("kernel length must be >= 1")
    Abar = np.atleast_2d(Abar)
    x = np.atleast_1d(np.asarray(Bbar, dtype=np.float64)).copy()
    C = np.atleast_1d(C)
    if Abar.shape != (x.size, x.size) or C.size != x.size:
        raise ValueError("inconsistent state dimensions")
    K = np.empty(L)
    for l in range(L):
        K[l] = C @ x
        x = Abar @ x
    return K


def compute_kernel_doubling(Abar, Bbar, C, L: int) -> np.ndarray:
    """Same kernel via a Krylov block grown by repeated squaring of Abar."""
    if L < 1:
        raise ValueError("kernel length must be >= 1")
    P = np.atleast_2d(np.asarray(Abar, dtype=np.float64))
    X = np.atleast_1d(np.asarray(Bbar, dtype=np.float64))[:, None]
    while X.shape[1] < L:
        X = np.concatenate([X, P @ X], axis=1)
        P = P @ P
    return np.atleast_1d(C) @ X[:, :L]


def apply_recurrence(Abar, Bbar, C, D: float, u) -> np.ndarray:
    Abar = np.atleast_2d(Abar)
    Bbar = np.atleast_1d(Bbar)
    C = np.atleast_1d(C)
    u = np.asarray(u, dtype=np.float64)
    x = np.zeros(Bbar.size)
    y = np.empty_like(u)
    for k, uk in enumerate(u):
        x = Abar @ x + Bbar * uk
        y[k] = C @ x + D * uk
    return y


def causal_conv_direct(K, u) -> np.ndarray:
    """O(L^2) causal convolution through an explicit lower-triangular Toeplitz matrix."""
    K = np.asarray(K, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    L = u.shape[-1]
    lag = np.arange(L)[:, None] - np.arange(L)[None, :]
    T = np.where(lag >= 0, K[..., np.clip(lag, 0, None)], 0.0)
    return np.einsum("...kj,...j->...k", T, u)


def causal_conv_fft(K, u) -> np.ndarray:
    L = u.shape[-1]
    n = 2 * L
    return np.fft.irfft(np.fft.rfft(u, n=n) * np.fft.rfft(K, n=n), n=n)[..., :L]


def apply_convolution(K, D, u, method: str = "fft") -> np.ndarray:
    """y = causal_conv(K, u) + D u along the last axis."""
    K = np.asarray(K, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if K.shape[-1] != u.shape[-1]:
        raise ValueError(f"kernel length {K.shape[-1]} != input length {u.shape[-1]}")
    if method == "fft":
        y = causal_conv_fft(K, u)
    elif method == "direct":
        y = causal_conv_direct(K, u)
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    D = np.asarray(D, dtype=np.float64)
    return y + (D[..., None] if D.ndim else D) * u


class S4Layer(nn.Module):
    """H independent single-input single-output state-space channels.

    A and B are frozen at the HiPPO-LegS values; each channel trains its own
    C, D and log step size. Input and output are (batch, H, L).
    """

    def __init__(self, H: int, N: int = 16, dt_min: float = 1e-3, dt_max: float = 1e-1,
                 activation: str = "gelu"):
        super().__init__()
        self.H, self.N = H, N
        A, B = hippo_legs_matrix(N)
        # fixed by N, so rebuilt rather than checkpointed
        self.register_buffer("A", torch.tensor(A, dtype=torch.float64), persistent=False)
        self.register_buffer("B", torch.tensor(B, dtype=torch.float64), persistent=False)
        log_dt = torch.rand(H) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min)
        self.log_dt = nn.Parameter(log_dt)
        self.C = nn.Parameter(torch.randn(H, N) / math.sqrt(N))
        self.D = nn.Parameter(torch.randn(H))
        if activation not in ("gelu", "silu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    def discretize(self):
        dt = self.log_dt.exp()[:, None, None]
        A = self.A.to(dt.dtype)
        B = self.B.to(dt.dtype)
        eye = torch.eye(self.N, dtype=dt.dtype, device=dt.device)
        lhs = eye - dt / 2 * A
        Abar = torch.linalg.solve(lhs, eye + dt / 2 * A)
        Bbar = torch.linalg.solve(lhs, dt * B[:, None]).squeeze(-1)
        return Abar, Bbar

    def kernel(self, L: int) -> torch.Tensor:
        Abar, Bbar = self.discretize()
        X = Bbar.unsqueeze(-1)
        P = Abar
        while X.shape[-1] < L:
            X = torch.cat([X, P @ X], dim=-1)
            P = P @ P
        return torch.einsum("hn,hnl->hl", self.C, X[..., :L])

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        if u.dim() != 3 or u.shape[1] != self.H:
            raise ValueError(f"expected (batch, {self.H}, L) input, got {tuple(u.shape)}")
        L = u.shape[-1]
        K = self.kernel(L)
        n = 2 * L
        y = torch.fft.irfft(torch.fft.rfft(u, n=n) * torch.fft.rfft(K, n=n), n=n)[..., :L]
        y = y + self.D[:, None] * u
        if self.activation == "gelu":
            return F.gelu(y)
        if self.activation == "silu":
            return F.silu(y)
        return y
