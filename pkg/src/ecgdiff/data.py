"""Datasets on disk, the 10-fold protocol, the toy generator and synthetic copies.

On-disk layout of a dataset directory::

    meta.csv      # lead_names=I;II       (comment header lines)
                  # label_names=irregular
                  id,fold,fs,n_leads,length,labels,source_id
                  rec00000,1,25.6,2,256,0,
    rec00000.f32  little-endian float32, row-major (n_leads, length)

Signals are kept in millivolts exactly as given; nothing here rescales them.
"""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .leads import LEADS_12

log = logging.getLogger(__name__)

META = "meta.csv"
COLUMNS = ["id", "fold", "fs", "n_leads", "length", "labels", "source_id"]
TRAIN_FOLDS = tuple(range(1, 9))
VAL_FOLD = 9
TEST_FOLD = 10
AUGMENT_MODES = ("baseline", "double", "synth_aug")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class EcgRecord:
    id: str
    signal: np.ndarray  # (n_leads, length) float32, millivolts
    fs: float
    labels: np.ndarray  # (n_labels,) int
    fold: int
    source_id: str | None = None

    def __post_init__(self):
        if not 1 <= int(self.fold) <= 10:
            raise DatasetError(f"record {self.id}: fold {self.fold} outside 1..10")
        if np.asarray(self.signal).ndim != 2:
            raise DatasetError(f"record {self.id}: signal must be (leads, length)")


@dataclass
class Dataset:
    records: list
    label_names: tuple
    fs: float
    lead_names: tuple
    name: str = ""

    def __post_init__(self):
        self.label_names = tuple(self.label_names)
        self.lead_names = tuple(self.lead_names)
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DatasetError("record ids are not unique")
        for r in self.records:
            if r.signal.shape[0] != len(self.lead_names):
                raise DatasetError(f"record {r.id}: {r.signal.shape[0]} leads, expected {len(self.lead_names)}")
            if len(r.labels) != len(self.label_names):
                raise DatasetError(f"record {r.id}: {len(r.labels)} labels, expected {len(self.label_names)}")
            if r.signal.shape != self.records[0].signal.shape:
                raise DatasetError(f"record {r.id}: inconsistent signal shape")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def length(self) -> int:
        return self.records[0].signal.shape[1] if self.records else 0

    def signals(self) -> np.ndarray:
        return np.stack([r.signal for r in self.records]).astype(np.float32, copy=False)

    def labels(self) -> np.ndarray:
        return np.stack([np.asarray(r.labels, dtype=np.int64) for r in self.records])

    def folds(self) -> np.ndarray:
        return np.array([r.fold for r in self.records])

    def subset(self, folds) -> "Dataset":
        folds = set(folds)
        return replace(self, records=[r for r in self.records if r.fold in folds])

    def with_records(self, records, name=None) -> "Dataset":
        return replace(self, records=list(records), name=self.name if name is None else name)


def save_dataset(d: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# lead_names={';'.join(d.lead_names)}\n")
    buf.write(f"# label_names={';'.join(d.label_names)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in d.records:
        sig = np.ascontiguousarray(r.signal, dtype="<f4")
        (path / f"{r.id}.f32").write_bytes(sig.tobytes(order="C"))
        writer.writerow([r.id, r.fold, repr(float(r.fs)), sig.shape[0], sig.shape[1],
                         ";".join(str(int(v)) for v in r.labels), r.source_id or ""])
    (path / META).write_text(buf.getvalue())
    return path


def load_dataset(path, known_leads=None) -> Dataset:
    """Read a dataset directory, validating shapes and metadata."""
    path = Path(path)
    meta_path = path / META
    if not meta_path.exists():
        raise DatasetError(f"no {META} in {path}")
    header, rows = {}, []
    for line in meta_path.read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = tuple(v for v in value.strip().split(";") if v)
        elif line.strip():
            rows.append(line)
    if "lead_names" not in header or "label_names" not in header:
        raise DatasetError("meta.csv header must declare lead_names and label_names")
    lead_names = header["lead_names"]
    allowed = set(known_leads or LEADS_12) | {f"ch{i}" for i in range(64)}
    unknown = [n for n in lead_names if n not in allowed]
    if unknown:
        raise DatasetError(f"unknown lead names: {unknown}")
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or reader.fieldnames[:6] != COLUMNS[:6]:
        raise DatasetError(f"meta.csv columns must start with {COLUMNS[:6]}")
    records, fs_values = [], set()
    for row in reader:
        n_leads, length = int(row["n_leads"]), int(row["length"])
        if n_leads != len(lead_names):
            raise DatasetError(f"record {row['id']}: n_leads {n_leads} != {len(lead_names)} lead names")
        payload = (path / f"{row['id']}.f32").read_bytes()
        if len(payload) != n_leads * length * 4:
            raise DatasetError(f"record {row['id']}: payload has {len(payload)} bytes, "
                               f"expected {n_leads * length * 4}")
        signal = np.frombuffer(payload, dtype="<f4").reshape(n_leads, length).astype(np.float32)
        labels = np.array([int(v) for v in row["labels"].split(";") if v != ""], dtype=np.int64)
        if np.any((labels != 0) & (labels != 1)):
            raise DatasetError(f"record {row['id']}: labels must be 0/1")
        fs = float(row["fs"])
        fs_values.add(fs)
        records.append(EcgRecord(row["id"], signal, fs, labels, int(row["fold"]),
                                 row.get("source_id") or None))
    if len(fs_values) > 1:
        raise DatasetError(f"mixed sampling rates {sorted(fs_values)}")
    fs = fs_values.pop() if fs_values else 0.0
    return Dataset(records, header["label_names"], fs, lead_names, name=path.name)


def split_folds(d: Dataset) -> tuple[Dataset, Dataset, Dataset]:
    """Folds 1-8 train, 9 validation, 10 test."""
    parts = d.subset(TRAIN_FOLDS), d.subset([VAL_FOLD]), d.subset([TEST_FOLD])
    for label, part in zip(("train", "validation", "test"), parts):
        if len(part) == 0:
            warnings.warn(f"{label} split is empty", stacklevel=2)
    return parts


# toy generator ---------------------------------------------------------------

TOY_LABELS = ("irregular", "wide")
_TOY_GAINS = {"I": 0.6, "II": 1.0, "V1": -0.5, "V2": 0.3, "V3": 0.8, "V4": 1.2, "V5": 1.1, "V6": 0.9}


def _beat_times(rng, duration, irregular):
    if irregular:
        times, t = [], rng.uniform(0, 0.8)
        while t < duration + 1.0:
            times.append(t)
            t += rng.uniform(0.35, 1.15)
        return np.array(times)
    rr = rng.uniform(0.7, 1.1)
    t0 = rng.uniform(0, rr)
    k = np.arange(-1, int(duration / rr) + 3)
    return t0 + k * rr + rng.normal(0, 0.01, k.size)


def _toy_signal(rng, cls, n_leads_names, length, fs):
    duration = length / fs
    t = np.arange(length) / fs
    irregular = cls == 1
    qrs_width = 0.09 if cls == 2 else 0.04
    beats = _beat_times(rng, duration, irregular)
    d = t[None, :] - beats[:, None]
    qrs = np.exp(-0.5 * (d / qrs_width) ** 2).sum(0)
    twave = 0.3 * np.exp(-0.5 * ((d - 0.3) / 0.07) ** 2).sum(0)
    pwave = 0.0 if irregular else 0.15 * np.exp(-0.5 * ((d + 0.16) / 0.04) ** 2).sum(0)
    if cls == 2:
        qrs = qrs - 0.4 * np.exp(-0.5 * ((d - 0.12) / 0.05) ** 2).sum(0)
    fib = 0.15 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t + rng.uniform(0, 2 * np.pi)) if irregular else 0.0
    base = qrs + twave + pwave + fib
    amp = rng.uniform(0.8, 1.2)
    out = []
    for name in n_leads_names:
        wander = 0.05 * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))
        noise = rng.normal(0, 0.02, length)
        out.append(amp * _TOY_GAINS[name] * base + wander + noise)
    return np.clip(np.array(out), -3.0, 3.0).astype(np.float32)


def make_toy_dataset(n_per_class, classes: int = 2, seed: int = 0, length: int = 256,
                     fs: float = 25.6, n_leads: int = 2) -> Dataset:
    """Quasi-periodic toy records with class-dependent rhythm and morphology.

    Class 0 is a regular beat train. Class 1 has random RR intervals, no P
    wave and a small fibrillatory ripple. Class 2 (if requested) is regular
    with widened QRS complexes. Labels are one bit per non-zero class, so
    class 0 is the all-zero label vector. Folds 1..10 are assigned
    round-robin within each class.
    """
    if classes not in (2, 3):
        raise ValueError("toy data supports 2 or 3 classes")
    if n_leads not in (2, 8):
        raise ValueError("toy data supports 2 or 8 leads")
    counts = ([n_per_class] * classes if np.isscalar(n_per_class) else list(n_per_class))
    if len(counts) != classes:
        raise ValueError("need one count per class")
    lead_names = ("I", "II") if n_leads == 2 else ("I", "II", "V1", "V2", "V3", "V4", "V5", "V6")
    label_names = TOY_LABELS[: classes - 1]
    rng = np.random.default_rng(seed)
    records = []
    for i in range(max(counts)):
        for c in range(classes):
            if i >= counts[c]:
                continue
            labels = np.zeros(classes - 1, dtype=np.int64)
            if c > 0:
                labels[c - 1] = 1
            rid = f"rec{len(records):05d}"
            records.append(EcgRecord(rid, _toy_signal(rng, c, lead_names, length, fs), fs, labels, i % 10 + 1))
    return Dataset(records, label_names, fs, lead_names, name=f"toy-s{seed}")


# synthetic copies and augmentation -------------------------------------------

def generate_synthetic_copy(ckpt, d: Dataset, seed: int = 0, batch_size: int = 128) -> Dataset:
    """One synthetic record per real record, conditioned on the real labels."""
    from .diffusion import sample

    cfg = ckpt.config
    if cfg.num_labels != len(d.label_names):
        raise DatasetError(f"checkpoint has {cfg.num_labels} labels, dataset has {len(d.label_names)}")
    if ckpt.label_names and tuple(ckpt.label_names) != tuple(d.label_names):
        raise DatasetError("checkpoint label names differ from the dataset's")
    if len(d) and (len(d.lead_names), d.length) != (cfg.channels, cfg.length):
        raise DatasetError("checkpoint signal shape differs from the dataset's")
    model = ckpt.build_model()
    gen = torch.Generator().manual_seed(seed)
    out = []
    for start in range(0, len(d), batch_size):
        chunk = d.records[start:start + batch_size]
        labels = torch.as_tensor(np.stack([r.labels for r in chunk]), dtype=torch.long)
        x = sample(model, labels, ckpt.schedule, generator=gen).numpy().astype(np.float32)
        for r, sig in zip(chunk, x):
            out.append(EcgRecord(f"syn_{r.id}", sig, r.fs, r.labels.copy(), r.fold, source_id=r.id))
    return Dataset(out, d.label_names, d.fs, d.lead_names, name=f"{d.name}-synth{ckpt.samples_seen}")


def augment_with_positives(d: Dataset, synth: Dataset | None, mode: str, label_index: int) -> Dataset:
    """Add positives for ``label_index`` to the training folds only."""
    if mode not in AUGMENT_MODES:
        raise ValueError(f"unknown augmentation mode {mode!r}; expected one of {AUGMENT_MODES}")
    if mode == "baseline":
        return d.with_records(d.records)
    positives = [r for r in d.records if r.fold in TRAIN_FOLDS and r.labels[label_index] == 1]
    if mode == "double":
        extra = [replace(r, id=f"{r.id}_dup", source_id=r.id) for r in positives]
    else:
        if synth is None:
            raise ValueError("synth_aug needs a synthetic dataset")
        by_source = {r.source_id: r for r in synth.records}
        missing = [r.id for r in positives if r.id not in by_source]
        if missing:
            raise DatasetError(f"no synthetic counterpart for {len(missing)} positives, e.g. {missing[0]}")
        extra = [by_source[r.id] for r in positives]
    return d.with_records(d.records + extra, name=f"{d.name}+{mode}")
