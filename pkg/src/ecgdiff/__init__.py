"""Label-conditioned diffusion models for ECG-like signals with S4 denoisers."""
from .conditioning import PAD, LegacyConditioner, NleConditioner, make_conditioner
from .data import Dataset, EcgRecord, load_dataset, make_toy_dataset, save_dataset, split_folds
from .diffusion import NoiseSchedule, make_linear_schedule, sample
from .model import DESK_SCALE, FULL_SCALE, Denoiser, ModelConfig, init_params
from .training import Checkpoint, TrainConfig, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "PAD", "LegacyConditioner", "NleConditioner", "make_conditioner",
    "Dataset", "EcgRecord", "load_dataset", "make_toy_dataset", "save_dataset", "split_folds",
    "NoiseSchedule", "make_linear_schedule", "sample",
    "DESK_SCALE", "FULL_SCALE", "Denoiser", "ModelConfig", "init_params",
    "Checkpoint", "TrainConfig", "load_checkpoint", "train",
]
