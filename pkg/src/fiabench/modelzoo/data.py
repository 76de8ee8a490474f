"""Dataset loading.

Three sources are understood:

* a built-in id: ``"mnist5k"`` (the 5000-image MNIST subset bundled with
  ``mlxtend``) or ``"digits"`` (scikit-learn's 8x8 digits scaled to 0..255);
* a packed ``.npz`` file with ``x_train, y_train, x_test, y_test`` arrays
  (images as ``(n, c, h, w)`` or ``(n, h, w)`` in ``[0, 255]``);
* a directory ``root/{train,test}/<class index>/<image>.png``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import check_images

BUILTIN_DATASETS = ("mnist5k", "digits")


@dataclass
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def num_classes(self):
        return int(max(self.y_train.max(), self.y_test.max()) + 1)

    @property
    def input_shape(self):
        return tuple(self.x_train.shape[1:])


def _split(name, X, y, n_test, seed):
    perm = np.random.default_rng(seed).permutation(len(y))
    X, y = X[perm], y[perm]
    return Dataset(name, X[n_test:], y[n_test:], X[:n_test], y[:n_test])


def _mnist5k(n_test=1000, seed=0):
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    X = X.reshape(-1, 1, 28, 28).astype(np.float32)
    return _split("mnist5k", X, y.astype(np.int64), n_test, seed)


def _digits(n_test=500, seed=0):
    from sklearn.datasets import load_digits

    d = load_digits()
    X = (d.images[:, None] * (255.0 / 16.0)).round().astype(np.float32)
    return _split("digits", X, d.target.astype(np.int64), n_test, seed)


def _from_npz(path):
    with np.load(path) as z:
        arrays = {k: z[k] for k in ("x_train", "y_train", "x_test", "y_test")}
    for key in ("x_train", "x_test"):
        arrays[key] = check_images(arrays[key], name=key).numpy()
    return Dataset(Path(path).stem, arrays["x_train"], arrays["y_train"].astype(np.int64),
                   arrays["x_test"], arrays["y_test"].astype(np.int64))


def _read_split(root):
    from PIL import Image

    images, labels = [], []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(class_dir.glob("*.png")):
            arr = np.asarray(Image.open(f), dtype=np.float32)
            images.append(arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1))
            labels.append(int(class_dir.name))
    if not images:
        raise FileNotFoundError(f"no images under {root}")
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def _from_directory(root):
    x_train, y_train = _read_split(root / "train")
    x_test, y_test = _read_split(root / "test")
    return Dataset(root.name, x_train, y_train, x_test, y_test)


def load_dataset(source, seed=0):
    """Load a dataset from a built-in id, a ``.npz`` file or an image directory."""
    if source == "mnist5k":
        return _mnist5k(seed=seed)
    if source == "digits":
        return _digits(seed=seed)
    path = Path(source)
    if path.is_file() and path.suffix == ".npz":
        return _from_npz(path)
    if path.is_dir():
        return _from_directory(path)
    raise FileNotFoundError(
        f"dataset {source!r} not found; use one of {BUILTIN_DATASETS}, an .npz file or a directory"
    )


def save_npz(dataset, path):
    np.savez_compressed(path, x_train=dataset.x_train, y_train=dataset.y_train,
                        x_test=dataset.x_test, y_test=dataset.y_test)


def eval_slice(dataset, n=500, seed=0):
    """Seed-selected indices of ``n`` held-out images (all of them if fewer)."""
    n_test = len(dataset.y_test)
    order = np.random.default_rng(seed).permutation(n_test)
    return np.sort(order[: min(n, n_test)])
