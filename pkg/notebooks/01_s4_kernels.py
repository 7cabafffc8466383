# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
# ---

# %% [markdown]
# # S4 kernels by hand
#
# A linear state space layer maps an input sequence through the latent
# dynamics x' = Ax + Bu, y = Cx + Du. After discretization it can be run as a
# recurrence or as one long causal convolution. This script builds both from
# the HiPPO-LegS matrices and checks that they agree.

# %%
import numpy as np

from ecgdiff.s4 import (
    apply_convolution,
    apply_recurrence,
    compute_kernel,
    compute_kernel_doubling,
    discretize_bilinear,
    hippo_legs_matrix,
)

np.set_printoptions(precision=3, suppress=True)

# %% [markdown]
# The LegS matrix is lower triangular with a negative diagonal, so every
# eigenvalue is negative and the continuous system is stable.

# %%
A, B = hippo_legs_matrix(4)
print(A)
print(B)
print("eigenvalues:", np.linalg.eigvals(A))

# %% [markdown]
# The bilinear transform maps the left half plane into the unit disc, so
# the discrete system stays stable for any positive step.

# %%
for dt in (1e-3, 1e-2, 1e-1, 1.0):
    Abar, _ = discretize_bilinear(A, B, dt)
    print(f"dt={dt:<6} spectral radius {np.max(np.abs(np.linalg.eigvals(Abar))):.6f}")

# %% [markdown]
# The kernel K_l = C Abar^l Bbar can be built step by step or by repeated
# squaring. Convolving with it reproduces the recurrence.

# %%
rng = np.random.default_rng(0)
N, L = 8, 128
A, B = hippo_legs_matrix(N)
Abar, Bbar = discretize_bilinear(A, B, 0.05)
C, D = rng.standard_normal(N), 0.5
u = rng.standard_normal(L)

K = compute_kernel(Abar, Bbar, C, L)
print("doubling vs iteration:", np.max(np.abs(compute_kernel_doubling(Abar, Bbar, C, L) - K)))

y_rec = apply_recurrence(Abar, Bbar, C, D, u)
for method in ("fft", "direct"):
    y = apply_convolution(K, D, u, method=method)
    print(f"{method:>6}: max relative error {np.max(np.abs(y - y_rec)) / np.max(np.abs(y_rec)):.2e}")

# %% [markdown]
# The step size sets the memory horizon: a smaller dt stretches the kernel
# over more lags. This is why log_dt is trained per channel.

# %%
for dt in (0.2, 0.05, 0.01):
    Abar, Bbar = discretize_bilinear(A, B, dt)
    k = np.abs(compute_kernel(Abar, Bbar, C, L))
    print(f"dt={dt:<5} |K| at lags 0, 16, 64, 127:", k[[0, 16, 64, 127]])
