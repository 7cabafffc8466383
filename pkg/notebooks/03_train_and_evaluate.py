# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
# ---

# %% [markdown]
# # Train, synthesize, evaluate
#
# A short end-to-end run: train a label-conditioned denoiser on toy data,
# draw a synthetic copy of the dataset, then score it with the TSTR and
# TRTS protocols. Raise `TOTAL_SAMPLES` to about 32000 for usable samples;
# the default keeps the script quick.

# %%
import os

import numpy as np

from ecgdiff.data import generate_synthetic_copy, make_toy_dataset
from ecgdiff.evaluation import summarize, train_classifier, trts, tstr
from ecgdiff.model import ModelConfig
from ecgdiff.training import TrainConfig, train

TOTAL_SAMPLES = int(os.environ.get("TOTAL_SAMPLES", 2000))
PER_CLASS = int(os.environ.get("PER_CLASS", 40))

real = make_toy_dataset(PER_CLASS, classes=2, seed=100)
model_cfg = ModelConfig(mechanism="nle", num_labels=1)
train_cfg = TrainConfig(batch_size=16, learning_rate=1e-3, total_samples=TOTAL_SAMPLES,
                        checkpoint_every_samples=min(4000, TOTAL_SAMPLES), seed=0)

# %%
result = train(real.signals(), real.labels(), model_cfg, train_cfg, label_names=real.label_names)
losses = np.array([row[2] for row in result.loss_trace])
print(f"{len(losses)} steps, loss {losses[:20].mean():.3f} -> {losses[-20:].mean():.3f}")
print("checkpoints at", [c.samples_seen for c in result.checkpoints])

# %% [markdown]
# Every real record gets one synthetic counterpart with the same labels
# and fold.

# %%
ckpt = result.checkpoints[-1]
synth = generate_synthetic_copy(ckpt, real, seed=0)
print("real std %.3f, synthetic std %.3f" % (real.signals().std(), synth.signals().std()))

# %%
reports = [tstr(synth, real, 0, seed=0, samples_seen=ckpt.samples_seen)]
clf = train_classifier(real, 0, seed=0)
reports.append(trts(real, synth, 0, seed=0, samples_seen=ckpt.samples_seen, classifier=clf))
print(summarize(reports))
