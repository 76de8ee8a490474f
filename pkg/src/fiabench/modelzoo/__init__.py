"""Desk-scale model zoo: tapped CNNs, ensembles, datasets and checkpoints."""

from .architectures import ARCHITECTURES, TappedNet, build_architecture, default_tap
from .classifier import CNNClassifier
from .data import Dataset, eval_slice, load_dataset, save_npz
from .ensemble import EnsembleClassifier
from .handle import ModelHandle, ModelOutputs, state_hash
from .training import DEFAULT_ZOO, ZooMember, load_checkpoint, save_checkpoint, train_model, train_zoo

__all__ = [
    "ARCHITECTURES", "CNNClassifier", "DEFAULT_ZOO", "Dataset", "EnsembleClassifier", "ModelHandle",
    "ModelOutputs", "TappedNet", "ZooMember", "build_architecture", "default_tap", "eval_slice",
    "load_checkpoint", "load_dataset", "save_checkpoint", "save_npz", "state_hash", "train_model", "train_zoo",
]
