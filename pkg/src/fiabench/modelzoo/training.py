"""Training the desk-scale zoo and persisting checkpoints.

A checkpoint is ``<name>.pt`` (the module state dict) plus a JSON sidecar
``<name>.json`` holding ``arch_id, params_id, num_classes, taps, training_mode,
clean_accuracy, seed`` and the estimator hyperparameters.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..exceptions import TrainingFailureError
from .architectures import build_architecture
from .classifier import CNNClassifier
from .data import Dataset, load_dataset

logger = logging.getLogger(__name__)


@dataclass
class ZooMember:
    name: str
    arch: str
    training_mode: str = "normal"
    seed: int = 0
    accuracy_floor: float = 0.80
    params: dict = field(default_factory=dict)


DEFAULT_ZOO = [
    ZooMember("vgg", "vgg", seed=1),
    ZooMember("resnet", "resnet", seed=2),
    ZooMember("wide", "wide", seed=3),
    ZooMember("allconv", "allconv", seed=4),
    ZooMember("lenet", "lenet", seed=5),
    # adversarial training costs (adv_steps + 1) forward/backward passes per batch
    ZooMember("adv-vgg", "vgg", "adversarial", seed=11, accuracy_floor=0.70),
    ZooMember("adv-resnet", "resnet", "adversarial", seed=12, accuracy_floor=0.70),
]


def _atomic_write_bytes(path, data):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text):
    _atomic_write_bytes(path, text.encode())


def accuracy(model, X, y, batch_size=500):
    correct = 0
    for i in range(0, len(y), batch_size):
        correct += int((model.predict(X[i:i + batch_size]) == np.asarray(y[i:i + batch_size])).sum())
    return correct / len(y)


def save_checkpoint(model, directory, name, clean_accuracy=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    import io

    buf = io.BytesIO()
    torch.save(model.module_.state_dict(), buf)
    sidecar = {
        "name": name,
        "arch_id": model.arch_id,
        "params_id": model.params_id_,
        "num_classes": int(model.n_classes_),
        "taps": list(model.taps_),
        "training_mode": model.training_mode,
        "clean_accuracy": clean_accuracy,
        "seed": int(model.random_state),
        "input_shape": list(model.input_shape_),
        "params": model.get_params(),
    }
    _atomic_write_bytes(directory / f"{name}.pt", buf.getvalue())
    atomic_write_text(directory / f"{name}.json", json.dumps(sidecar, indent=2))
    return directory / f"{name}.json"


def read_sidecar(path):
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    return json.loads(path.read_text())


def load_checkpoint(path):
    """Load a fitted :class:`CNNClassifier` from a sidecar or ``.pt`` path."""
    path = Path(path)
    meta = read_sidecar(path)
    shape = meta["input_shape"]
    module = build_architecture(meta["arch_id"], shape[0], meta["num_classes"], shape[-1])
    module.load_state_dict(torch.load(path.with_suffix(".pt"), weights_only=True))
    params = dict(meta.get("params", {}))
    params.pop("arch", None)
    params.pop("training_mode", None)
    model = CNNClassifier.from_module(module, arch=meta["arch_id"], num_classes=meta["num_classes"],
                                      input_shape=shape, training_mode=meta["training_mode"], **params)
    model.name_ = meta.get("name", path.stem)
    model.clean_accuracy_ = meta.get("clean_accuracy")
    return model


def train_model(arch_id, dataset, training_mode="normal", seed=0, accuracy_floor=0.80,
                checkpoint_dir=None, name=None, **params):
    """Train one zoo model, check its accuracy floor and optionally persist it.

    ``dataset`` is a :class:`Dataset` or anything :func:`load_dataset` accepts.
    Raises :class:`TrainingFailureError` if held-out accuracy is below the floor.
    """
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    model = CNNClassifier(arch=arch_id, training_mode=training_mode, random_state=seed, **params)
    model.fit(dataset.x_train, dataset.y_train)
    acc = accuracy(model, dataset.x_test, dataset.y_test)
    model.clean_accuracy_ = acc
    model.name_ = name or f"{arch_id}-{training_mode}-{seed}"
    logger.info("trained %s: accuracy %.4f in %.1fs", model.name_, acc, model.train_seconds_)
    if acc < accuracy_floor:
        raise TrainingFailureError(
            f"{model.name_} reached accuracy {acc:.4f} < floor {accuracy_floor}",
            diagnostics={"accuracy": acc, "floor": accuracy_floor, "loss_history": model.history_,
                         "params": model.get_params()},
        )
    if checkpoint_dir is not None:
        save_checkpoint(model, checkpoint_dir, model.name_, clean_accuracy=acc)
    return model


def train_zoo(dataset, checkpoint_dir, members=None, force=False):
    """Train every zoo member not already checkpointed.

    Returns ``{name: (model, status)}`` with status ``"cached"``, ``"trained"``
    or the failure message.
    """
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    checkpoint_dir = Path(checkpoint_dir)
    out = {}
    for m in members or DEFAULT_ZOO:
        sidecar = checkpoint_dir / f"{m.name}.json"
        if sidecar.exists() and sidecar.with_suffix(".pt").exists() and not force:
            out[m.name] = (load_checkpoint(sidecar), "cached")
            continue
        try:
            model = train_model(m.arch, dataset, m.training_mode, m.seed, m.accuracy_floor,
                                checkpoint_dir, name=m.name, **m.params)
            out[m.name] = (model, "trained")
        except TrainingFailureError as exc:
            out[m.name] = (None, f"failed: {exc}")
    return out


def member_from_dict(d):
    return ZooMember(**d)


def member_to_dict(m):
    return asdict(m)
