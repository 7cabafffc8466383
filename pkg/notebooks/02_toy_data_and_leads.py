# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
# ---

# %% [markdown]
# # Toy ECG data and lead algebra
#
# The toy generator stands in for a real 12-lead corpus. Class 0 is a
# regular beat train, class 1 has irregular RR intervals, no P wave and a
# fibrillatory ripple. Signals stay in millivolts.

# %%
import numpy as np

from ecgdiff.data import make_toy_dataset, split_folds
from ecgdiff.leads import LEADS_12, reconstruct_full, reduce_to_independent

d = make_toy_dataset(50, classes=2, seed=0)
print(len(d), "records,", d.signals().shape, "fs =", d.fs, "Hz")
print("positives:", int(d.labels()[:, 0].sum()))
train, val, test = split_folds(d)
print("train/val/test:", len(train), len(val), len(test))

# %% [markdown]
# A rough look at rhythm: the spread of the gaps between peaks in lead II.

# %%
def peak_gaps(sig, fs, thresh=0.5):
    above = sig > thresh
    onsets = np.flatnonzero(above[1:] & ~above[:-1])
    return np.diff(onsets) / fs

for cls in (0, 1):
    recs = [r for r in d if r.labels[0] == cls][:20]
    spread = np.mean([np.std(peak_gaps(r.signal[1], r.fs)) for r in recs])
    print(f"class {cls}: mean std of RR gaps {spread:.3f} s")

# %% [markdown]
# With eight recorded leads, the four limb leads III, aVR, aVL and aVF
# follow linearly from I and II.

# %%
eight = make_toy_dataset(2, classes=2, seed=1, n_leads=8).records[0].signal
full = reconstruct_full(eight)
lead = dict(zip(LEADS_12, full))
print("I - II + III     :", np.abs(lead["I"] - lead["II"] + lead["III"]).max())
print("aVR + aVL + aVF  :", np.abs(lead["aVR"] + lead["aVL"] + lead["aVF"]).max())
print("round trip exact :", np.array_equal(reduce_to_independent(full), eight))
