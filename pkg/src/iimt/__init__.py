"""Inter- and intra-domain mixup training for unsupervised domain adaptation."""

from .config import IimtConfig, load_config
from .data import DomainDataset, gen_mini_digits, gen_shifted_blobs, gen_two_moons
from .models import ModelBundle, ModelConfig, init_params
from .tensor import Tensor, no_grad
from .trainer import evaluate, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "DomainDataset",
    "IimtConfig",
    "ModelBundle",
    "ModelConfig",
    "Tensor",
    "evaluate",
    "gen_mini_digits",
    "gen_shifted_blobs",
    "gen_two_moons",
    "init_params",
    "load_config",
    "no_grad",
    "run_ablation",
    "train",
]
