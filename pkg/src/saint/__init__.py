"""Self- and intersample-attention transformer for tabular data, on a small numpy autodiff core."""

from .data import Dataset, Split, TabularSchema, fit_transform, load_csv, make_split
from .model import ModelConfig, SaintModel
from .pretrain import PretrainConfig, pretrain
from .train import TrainConfig, auroc, evaluate, finetune, train_supervised

__all__ = [
    "Dataset", "Split", "TabularSchema", "fit_transform", "load_csv", "make_split",
    "ModelConfig", "SaintModel", "PretrainConfig", "pretrain",
    "TrainConfig", "auroc", "evaluate", "finetune", "train_supervised",
]
