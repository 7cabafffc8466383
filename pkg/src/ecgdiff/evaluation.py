"""Downstream evaluation: binary metrics, a small 1-D conv classifier and the
TSTR / TRTS / augmentation / convergence protocols."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .data import TEST_FOLD, TRAIN_FOLDS, VAL_FOLD, AUGMENT_MODES, Dataset, augment_with_positives

REPORT_COLUMNS = ["experiment", "dataset_ids", "label", "seed", "samples_seen",
                  "sens", "spec", "prec", "gmean", "f1", "auc"]


class EvaluationError(ValueError):
    pass


# metrics ---------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(int(np.sum(y_true & y_pred)), int(np.sum(~y_true & y_pred)),
                   int(np.sum(~y_true & ~y_pred)), int(np.sum(y_true & ~y_pred)))


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def sensitivity(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fp)


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def gmean(c: ConfusionCounts) -> float:
    """sqrt(sensitivity * specificity); 0 when either is undefined."""
    return math.sqrt(sensitivity(c) * specificity(c))


def f1(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def roc_auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with ties counted half; None when only one class is present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    counts: ConfusionCounts
    sensitivity: float
    specificity: float
    precision: float
    gmean: float
    f1: float
    roc_auc: float | None
    experiment: str = ""
    dataset_ids: str = ""
    label: str = ""
    seed: int | str = ""
    samples_seen: int | str = ""
    flags: tuple = ()

    @classmethod
    def from_scores(cls, scores, y_true, threshold: float, **meta) -> "MetricsReport":
        y_true = np.asarray(y_true).astype(int)
        c = ConfusionCounts.from_predictions(y_true, np.asarray(scores) >= threshold)
        flags = []
        if c.tp + c.fn == 0:
            flags.append("sensitivity_undefined")
        if c.tn + c.fp == 0:
            flags.append("specificity_undefined")
        auc = roc_auc(scores, y_true)
        if auc is None:
            flags.append("auc_undefined")
        return cls(c, sensitivity(c), specificity(c), precision(c), gmean(c), f1(c), auc,
                   flags=tuple(flags), **meta)

    def row(self) -> list:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"
        return [self.experiment, self.dataset_ids, self.label, self.seed, self.samples_seen,
                fmt(self.sensitivity), fmt(self.specificity), fmt(self.precision),
                fmt(self.gmean), fmt(self.f1), fmt(self.roc_auc)]


def reports_to_csv(reports, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow(r.row())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def summarize(reports) -> str:
    lines = [f"{'experiment':<22} {'samples':>8} {'seed':>5} {'sens':>6} {'spec':>6} {'gmean':>6} {'f1':>6} {'auc':>6}"]
    for r in reports:
        auc = "  -   " if r.roc_auc is None else f"{r.roc_auc:6.3f}"
        flags = f"  [{', '.join(r.flags)}]" if r.flags else ""
        lines.append(f"{r.experiment:<22} {str(r.samples_seen):>8} {str(r.seed):>5} {r.sensitivity:6.3f} "
                     f"{r.specificity:6.3f} {r.gmean:6.3f} {r.f1:6.3f} {auc}{flags}")
    return "\n".join(lines)


# classifier ------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierConfig:
    channels: tuple = (16, 32, 32)
    kernel_size: int = 7
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3


class ConvNet1d(nn.Module):
    """Three conv blocks, global average pooling, one logit."""

    def __init__(self, in_channels: int, channels=(16, 32, 32), kernel_size: int = 7):
        super().__init__()
        layers, c_in = [], in_channels
        for c_out in channels:
            layers += [nn.Conv1d(c_in, c_out, kernel_size, padding=kernel_size // 2), nn.ReLU(), nn.MaxPool1d(2)]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c_in, 1)

    def forward(self, x):
        return self.head(self.features(x).mean(-1)).squeeze(-1)


@dataclass
class Classifier:
    net: ConvNet1d
    threshold: float
    label_index: int
    val_gmean: float

    @torch.no_grad()
    def scores(self, d: Dataset) -> np.ndarray:
        if len(d) == 0:
            return np.zeros(0)
        self.net.eval()
        x = torch.as_tensor(d.signals())
        return torch.sigmoid(self.net(x)).numpy().astype(np.float64)

    def evaluate(self, d: Dataset, **meta) -> MetricsReport:
        y = d.labels()[:, self.label_index] if len(d) else np.zeros(0, dtype=int)
        return MetricsReport.from_scores(self.scores(d), y, self.threshold, **meta)


def best_gmean_threshold(scores, y_true) -> tuple[float, float]:
    """Threshold in (0, 1) maximizing G-mean; first maximum in ascending order."""
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(y_true).astype(int)
    uniq = np.unique(scores)
    cands = np.concatenate([[0.5], (uniq[:-1] + uniq[1:]) / 2.0]) if uniq.size > 1 else np.array([0.5])
    cands = np.unique(np.clip(cands, 1e-6, 1 - 1e-6))
    best_t, best_g = 0.5, -1.0
    for t in cands:
        g = gmean(ConfusionCounts.from_predictions(y_true, scores >= t))
        if g > best_g:
            best_t, best_g = float(t), g
    return best_t, best_g


def train_classifier(d: Dataset, label_index: int, config: ClassifierConfig | None = None,
                     seed: int = 0, val: Dataset | None = None) -> Classifier:
    """Fit on folds 1-8 and pick the decision threshold on fold 9 (or ``val``)."""
    config = config or ClassifierConfig()
    train = d.subset(TRAIN_FOLDS)
    val = d.subset([VAL_FOLD]) if val is None else val
    if len(train) == 0:
        raise EvaluationError("no training records in folds 1-8")
    y = train.labels()[:, label_index].astype(np.float32)
    if y.min() == y.max():
        raise EvaluationError("training data has a single class")
    x = torch.as_tensor(train.signals())
    yt = torch.as_tensor(y)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = ConvNet1d(x.shape[1], config.channels, config.kernel_size)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(seed)
    pos_weight = torch.tensor((1 - y.mean()) / y.mean())
    net.train()
    for _ in range(config.epochs):
        perm = torch.randperm(len(train), generator=gen)
        for start in range(0, len(train), config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss = F.binary_cross_entropy_with_logits(net(x[idx]), yt[idx], pos_weight=pos_weight)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    clf = Classifier(net, 0.5, label_index, 0.0)
    if len(val):
        clf.threshold, clf.val_gmean = best_gmean_threshold(clf.scores(val), val.labels()[:, label_index])
    return clf


# protocols -------------------------------------------------------------------

def _label_name(d: Dataset, label_index: int) -> str:
    return d.label_names[label_index] if label_index < len(d.label_names) else str(label_index)


def tstr(synth: Dataset, real: Dataset, label_index: int, seed: int = 0,
         config: ClassifierConfig | None = None, samples_seen="") -> MetricsReport:
    """Train on synthetic folds 1-9, test on the real fold 10."""
    clf = train_classifier(synth, label_index, config, seed)
    return clf.evaluate(real.subset([TEST_FOLD]), experiment="TSTR",
                        dataset_ids=f"{synth.name}|{real.name}", label=_label_name(real, label_index),
                        seed=seed, samples_seen=samples_seen)


def trts(real: Dataset, synth: Dataset, label_index: int, seed: int = 0,
         config: ClassifierConfig | None = None, samples_seen="",
         classifier: Classifier | None = None) -> MetricsReport:
    """Train on real folds 1-9, test on the synthetic fold 10."""
    clf = classifier or train_classifier(real, label_index, config, seed)
    return clf.evaluate(synth.subset([TEST_FOLD]), experiment="TRTS",
                        dataset_ids=f"{real.name}|{synth.name}", label=_label_name(real, label_index),
                        seed=seed, samples_seen=samples_seen)


def trtr(real: Dataset, label_index: int, seed: int = 0, config: ClassifierConfig | None = None) -> MetricsReport:
    return replace(tstr(real, real, label_index, seed, config), experiment="TRTR",
                   dataset_ids=f"{real.name}|{real.name}")


def convergence_sweep(ckpts, real: Dataset, label_index: int, seed: int = 0, gen_seed: int = 0,
                      config: ClassifierConfig | None = None, synth_factory=None) -> list:
    """TSTR and TRTS for every checkpoint, rows ordered by samples seen.

    ``synth_factory(ckpt)`` builds the synthetic copy; it defaults to
    ``generate_synthetic_copy(ckpt, real, gen_seed)``.
    """
    from .data import generate_synthetic_copy

    if len(ckpts) < 2:
        raise EvaluationError("convergence sweep needs at least two checkpoints")
    synth_factory = synth_factory or (lambda c: generate_synthetic_copy(c, real, gen_seed))
    real_clf = train_classifier(real, label_index, config, seed)
    rows = []
    for ckpt in sorted(ckpts, key=lambda c: c.samples_seen):
        synth = synth_factory(ckpt)
        rows.append(tstr(synth, real, label_index, seed, config, samples_seen=ckpt.samples_seen))
        rows.append(trts(real, synth, label_index, seed, config, samples_seen=ckpt.samples_seen,
                         classifier=real_clf))
    return rows


def augmentation_experiment(real: Dataset, synth: Dataset, label_index: int, seeds=(0, 1, 2),
                            config: ClassifierConfig | None = None) -> list:
    """baseline / double / synth_aug training sets, each tested on the real fold 10.

    Returns one row per (mode, seed) followed by one mean row per mode.
    """
    if len(seeds) < 1:
        raise EvaluationError("need at least one seed")
    rows, by_mode = [], {m: [] for m in AUGMENT_MODES}
    test = real.subset([TEST_FOLD])
    for seed in seeds:
        for mode in AUGMENT_MODES:
            train_set = augment_with_positives(real, synth, mode, label_index)
            clf = train_classifier(train_set, label_index, config, seed)
            rep = clf.evaluate(test, experiment=f"augment:{mode}", dataset_ids=f"{train_set.name}|{real.name}",
                               label=_label_name(real, label_index), seed=seed)
            rows.append(rep)
            by_mode[mode].append(rep)
    for mode, reps in by_mode.items():
        rows.append(mean_report(reps, experiment=f"augment:{mode}", seed="mean"))
    return rows


def mean_report(reports, **meta) -> MetricsReport:
    def avg(attr):
        vals = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else None
    counts = ConfusionCounts(*(int(sum(getattr(r.counts, k) for r in reports)) for k in ("tp", "fp", "tn", "fn")))
    base = reports[0]
    fields_ = dict(experiment=base.experiment, dataset_ids=base.dataset_ids, label=base.label,
                   seed="mean", samples_seen=base.samples_seen)
    fields_.update(meta)
    return MetricsReport(counts, avg("sensitivity"), avg("specificity"), avg("precision"), avg("gmean"),
                         avg("f1"), avg("roc_auc"), **fields_)
