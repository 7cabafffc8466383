"""Command line entry point: toy-data, train, generate, eval.

Every run is determined by a JSON run config plus a seed. A config file
looks like::

    {
      "seed": 0,
      "model": {"residual_channels": 32, "mechanism": "nle"},
      "train": {"batch_size": 16, "total_samples": 48000},
      "eval": {"label_index": 0, "seeds": [0, 1, 2]}
    }

Omitted keys take their defaults; unknown keys are an error. The model
fields ``channels``, ``length`` and ``num_labels`` are filled in from the
training data.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .data import (
    DatasetError,
    generate_synthetic_copy,
    load_dataset,
    make_toy_dataset,
    save_dataset,
)
from .evaluation import (
    ClassifierConfig,
    EvaluationError,
    augmentation_experiment,
    reports_to_csv,
    summarize,
    train_classifier,
    trts,
    tstr,
)
from .leads import expand_leads
from .model import ModelConfig
from .training import TrainConfig, TrainingDivergedError, load_checkpoint, train

log = logging.getLogger("ecgdiff")

DATA_ROOT_ENV = "ECGDIFF_DATA_ROOT"
CKPT_PREFIX = "ckpt_"
EVAL_MODES = ("tstr", "trts", "augment", "convergence")


class UsageError(Exception):
    pass


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise UsageError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class EvalSettings:
    label_index: int = 0
    seeds: tuple = (0, 1, 2)
    gen_seed: int = 0
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSettings":
        _check_keys(d, {f.name for f in dataclasses.fields(cls)}, "eval")
        d = dict(d)
        if "classifier" in d:
            _check_keys(d["classifier"], {f.name for f in dataclasses.fields(ClassifierConfig)}, "eval.classifier")
            c = dict(d["classifier"])
            if "channels" in c:
                c["channels"] = tuple(c["channels"])
            d["classifier"] = ClassifierConfig(**c)
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        out["classifier"]["channels"] = list(self.classifier.channels)
        return out


@dataclass
class RunConfig:
    seed: int = 0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: EvalSettings = field(default_factory=EvalSettings)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, {"seed", "model", "train", "eval"}, "run config")
        model, train_ = dict(d.get("model", {})), dict(d.get("train", {}))
        _check_keys(model, {f.name for f in dataclasses.fields(ModelConfig)}, "model")
        _check_keys(train_, {f.name for f in dataclasses.fields(TrainConfig)}, "train")
        if "seed" in train_:
            raise UsageError("set the seed at the top level of the run config")
        return cls(int(d.get("seed", 0)), model, train_, EvalSettings.from_dict(d.get("eval", {})))

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("run config must be a JSON object")
        return cls.from_dict(raw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": self.seed})

    def model_config(self, data, mechanism=None) -> ModelConfig:
        derived = {"channels": len(data.lead_names), "length": data.length, "num_labels": len(data.label_names)}
        for key, value in derived.items():
            if key in self.model and self.model[key] != value:
                raise UsageError(f"model.{key}={self.model[key]} does not match the data ({value})")
        fields_ = {**self.model, **derived}
        if mechanism is not None:
            fields_["mechanism"] = mechanism
        return ModelConfig(**fields_)


# output directories ------------------------------------------------------------

def _prepare_out_dir(out_dir: Path, force: bool, owned) -> Path:
    """Create ``out_dir``; with ``force`` remove only the entries this command writes."""
    out_dir.mkdir(parents=True, exist_ok=True)
    existing = [p for p in out_dir.iterdir()]
    if existing and not force:
        raise UsageError(f"{out_dir} is not empty (use --force to overwrite)")
    for p in existing:
        if owned(p):
            shutil.rmtree(p) if p.is_dir() else p.unlink()
    return out_dir


def _dataset_owned(p: Path) -> bool:
    return p.name == "meta.csv" or p.suffix == ".f32"


def _data_dir(arg) -> Path:
    if arg is not None:
        return Path(arg)
    root = os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise UsageError(f"--data-dir not given and {DATA_ROOT_ENV} is not set")
    return Path(root)


def _write_reports(reports, out_dir: Path):
    reports_to_csv(reports, out_dir / "report.csv")
    (out_dir / "summary.txt").write_text(summarize(reports) + "\n")


# commands ----------------------------------------------------------------------

def cmd_toy_data(args) -> int:
    if args.n < args.classes:
        raise UsageError("--n must be at least the number of classes")
    counts = [args.n // args.classes + (i < args.n % args.classes) for i in range(args.classes)]
    d = make_toy_dataset(counts, args.classes, seed=args.seed, length=args.length, n_leads=args.leads)
    out = _prepare_out_dir(Path(args.out_dir), args.force, _dataset_owned)
    save_dataset(d, out)
    log.info("wrote %d records to %s", len(d), out)
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.total_samples is not None:
        cfg.train["total_samples"] = args.total_samples
    data = load_dataset(_data_dir(args.data_dir))
    model_cfg = cfg.model_config(data, args.mechanism)
    train_cfg = cfg.train_config()
    out = _prepare_out_dir(Path(args.out_dir), args.force,
                           lambda p: p.name.startswith(CKPT_PREFIX) or p.name in ("loss_log.csv", "run_config.json"))
    resolved = {"seed": cfg.seed, "model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                "eval": cfg.eval.to_dict()}
    resolved["train"].pop("seed")
    (out / "run_config.json").write_text(json.dumps(resolved, indent=1) + "\n")

    def save(ckpt):
        path = ckpt.save(out / f"{CKPT_PREFIX}{ckpt.samples_seen:09d}")
        log.info("saved %s", path)

    result = train(data.signals(), data.labels(), model_cfg, train_cfg, on_checkpoint=save,
                   label_names=data.label_names)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "samples_seen", "loss"])
    for step, seen, loss in result.loss_trace:
        w.writerow([step, seen, repr(float(loss))])
    (out / "loss_log.csv").write_text(buf.getvalue())
    return 0


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    data = load_dataset(_data_dir(args.data_dir))
    synth = generate_synthetic_copy(ckpt, data, seed=args.seed, batch_size=args.batch_size)
    if args.full_leads:
        records, names = [], None
        for r in synth.records:
            sig, names = expand_leads(r.signal, synth.lead_names)
            records.append(dataclasses.replace(r, signal=sig))
        synth = dataclasses.replace(synth, records=records, lead_names=names)
    out = _prepare_out_dir(Path(args.out_dir), args.force, _dataset_owned)
    save_dataset(synth, out)
    log.info("wrote %d synthetic records to %s", len(synth), out)
    return 0


def _checkpoint_dirs(args):
    paths = [Path(p) for p in (args.ckpt or [])]
    if args.ckpt_dir:
        paths += sorted(p for p in Path(args.ckpt_dir).iterdir() if p.name.startswith(CKPT_PREFIX))
    return paths


def _convergence_cell(ckpt_path, data_dir, label_index, seed, gen_seed, clf_cfg):
    ckpt = load_checkpoint(ckpt_path)
    real = load_dataset(data_dir)
    synth = generate_synthetic_copy(ckpt, real, seed=gen_seed)
    real_clf = train_classifier(real, label_index, clf_cfg, seed)
    return [tstr(synth, real, label_index, seed, clf_cfg, samples_seen=ckpt.samples_seen),
            trts(real, synth, label_index, seed, clf_cfg, samples_seen=ckpt.samples_seen, classifier=real_clf)]


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    ev = cfg.eval
    label_index = ev.label_index if args.label_index is None else args.label_index
    seed = cfg.seed if args.seed is None else args.seed
    data_dir = _data_dir(args.data_dir)
    real = load_dataset(data_dir)
    if not 0 <= label_index < len(real.label_names):
        raise UsageError(f"label index {label_index} out of range for {len(real.label_names)} labels")
    if args.mode in ("tstr", "trts", "augment"):
        if not args.synth_dir:
            raise UsageError(f"eval {args.mode} needs --synth-dir")
        synth = load_dataset(args.synth_dir)
        if args.mode == "tstr":
            reports = [tstr(synth, real, label_index, seed, ev.classifier)]
        elif args.mode == "trts":
            reports = [trts(real, synth, label_index, seed, ev.classifier)]
        else:
            seeds = tuple(args.seeds) if args.seeds else ev.seeds
            reports = augmentation_experiment(real, synth, label_index, seeds, ev.classifier)
    else:
        paths = _checkpoint_dirs(args)
        if len(paths) < 2:
            raise UsageError("eval convergence needs at least two checkpoints (--ckpt-dir or --ckpt)")
        cells = [(p, data_dir, label_index, seed, ev.gen_seed, ev.classifier) for p in paths]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_convergence_cell, *zip(*cells)))
        else:
            results = [_convergence_cell(*c) for c in cells]
        reports = [r for rows in results for r in rows]
        reports.sort(key=lambda r: (r.samples_seen, r.experiment != "TSTR"))
    out = _prepare_out_dir(Path(args.out_dir), args.force, lambda p: p.name in ("report.csv", "summary.txt"))
    _write_reports(reports, out)
    return 0


# argument parsing --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ecgdiff", description="Label-conditioned diffusion for ECG-like signals.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("toy-data", help="write a toy dataset")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--n", type=int, default=400, help="total number of records")
    t.add_argument("--classes", type=int, choices=(2, 3), default=2)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--length", type=int, default=256)
    t.add_argument("--leads", type=int, choices=(2, 8), default=2)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_toy_data)

    tr = sub.add_parser("train", help="train a denoiser")
    tr.add_argument("--config")
    tr.add_argument("--data-dir")
    tr.add_argument("--out-dir", required=True)
    tr.add_argument("--mechanism", choices=("legacy", "nle"))
    tr.add_argument("--seed", type=int)
    tr.add_argument("--total-samples", type=int)
    tr.add_argument("--force", action="store_true")
    tr.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="synthesize a copy of a dataset")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data-dir")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--batch-size", type=int, default=128)
    g.add_argument("--full-leads", action="store_true", help="append the derived limb leads")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="run an evaluation protocol")
    e.add_argument("mode", choices=EVAL_MODES)
    e.add_argument("--config")
    e.add_argument("--data-dir")
    e.add_argument("--synth-dir")
    e.add_argument("--ckpt-dir", help="training output directory holding ckpt_* checkpoints")
    e.add_argument("--ckpt", action="append", help="checkpoint directory (repeatable)")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--label-index", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--seeds", type=int, nargs="+")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, EvaluationError, TrainingDivergedError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
