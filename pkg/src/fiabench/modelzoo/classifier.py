"""scikit-learn style estimators wrapping the small CNN zoo."""

from __future__ import annotations

import logging
import time

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch.nn import functional as F

from ..core import DEFAULT_VALUE_RANGE, check_images, check_labels, check_seed
from ..exceptions import ParameterError
from .architectures import build_architecture, default_tap
from .handle import ModelHandle, freeze, state_hash

logger = logging.getLogger(__name__)

TRAINING_MODES = ("normal", "adversarial")


def _random_shift(xb, max_shift, generator):
    """Translate every image by an integer offset in ``[-max_shift, max_shift]``."""
    if max_shift <= 0:
        return xb
    n, _, h, w = xb.shape
    span = 2 * max_shift + 1
    padded = F.pad(xb, (max_shift,) * 4)
    offsets = torch.randint(0, span, (n, 2), generator=generator)
    out = torch.empty_like(xb)
    for dy in range(span):
        for dx in range(span):
            sel = (offsets[:, 0] == dy) & (offsets[:, 1] == dx)
            if sel.any():
                out[sel] = padded[sel, :, dy:dy + h, dx:dx + w]
    return out


class CNNClassifier(ModelHandle, ClassifierMixin, BaseEstimator):
    """A small CNN from the zoo, trained with Adam on pixel-space images.

    Parameters
    ----------
    arch : str
        Architecture id, one of :data:`fiabench.modelzoo.ARCHITECTURES`.
    training_mode : {"normal", "adversarial"}
        Adversarial mode mixes every batch with MIM adversarial examples
        crafted on the current model at ``adv_epsilon``.
    epochs, batch_size, learning_rate : training schedule.
    augment_shift : int
        Maximum random translation in pixels applied to training batches.
    adv_epsilon, adv_steps : budget and iteration count of the training attack.
    random_state : int
        Seeds weight initialisation, shuffling and augmentation.
    """

    def __init__(self, arch="vgg", training_mode="normal", epochs=10, batch_size=64,
                 learning_rate=1e-3, augment_shift=2, adv_epsilon=32.0, adv_steps=5,
                 random_state=0):
        self.arch = arch
        self.training_mode = training_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.augment_shift = augment_shift
        self.adv_epsilon = adv_epsilon
        self.adv_steps = adv_steps
        self.random_state = random_state

    @property
    def arch_id(self):
        return self.arch

    def fit(self, X, y):
        if self.training_mode not in TRAINING_MODES:
            raise ParameterError(f"training_mode must be one of {TRAINING_MODES}")
        X = check_images(X, self.value_range)
        y = check_labels(y, X.shape[0])
        classes = np.unique(y.numpy())
        if not np.array_equal(classes, np.arange(len(classes))):
            raise ParameterError("labels must be the consecutive integers 0..K-1")
        seed = check_seed(self.random_state)
        self.classes_ = classes
        self.n_classes_ = len(classes)
        self.input_shape_ = tuple(X.shape[1:])

        with torch.random.fork_rng():
            torch.manual_seed(seed)
            module = build_architecture(self.arch, X.shape[1], self.n_classes_, X.shape[-1])
        gen = torch.Generator().manual_seed(seed)
        opt = torch.optim.Adam(module.parameters(), lr=self.learning_rate)
        self.history_ = []
        self.module_ = module
        self.taps_ = list(module.tap_names)
        n = X.shape[0]
        start = time.time()
        for epoch in range(self.epochs):
            perm = torch.randperm(n, generator=gen)
            total, count = 0.0, 0
            for i in range(0, n, self.batch_size):
                idx = perm[i:i + self.batch_size]
                xb = _random_shift(X[idx], self.augment_shift, gen)
                yb = y[idx]
                if self.training_mode == "adversarial":
                    xb, yb = self._with_adversarial(module, xb, yb, seed, epoch, i)
                module.train()
                loss = F.cross_entropy(module(xb), yb)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(yb)
                count += len(yb)
            self.history_.append(total / count)
            logger.info("%s epoch %d loss %.4f", self.arch, epoch + 1, total / count)
        self.train_seconds_ = time.time() - start
        freeze(module)
        self.params_id_ = state_hash(module)
        return self

    def _with_adversarial(self, module, xb, yb, seed, epoch, offset):
        from ..attacks.config import AttackConfig
        from ..attacks.runner import run_attack
        from ..core import derive_seed

        module.eval()
        self.module_ = module
        cfg = AttackConfig(method="MIM", epsilon=self.adv_epsilon, iterations=self.adv_steps,
                           seed=derive_seed(seed, "advtrain", epoch, offset))
        adv = run_attack(self, xb, yb, cfg, validate=False).adversarial
        return torch.cat([xb, adv]), torch.cat([yb, yb])

    @classmethod
    def from_module(cls, module, *, arch="custom", num_classes, input_shape, training_mode="normal",
                    **params):
        """Wrap an already trained :class:`TappedNet` as a fitted estimator."""
        est = cls(arch=arch, training_mode=training_mode, **params)
        est.module_ = freeze(module)
        est.n_classes_ = int(num_classes)
        est.classes_ = np.arange(num_classes)
        est.taps_ = list(module.tap_names)
        est.input_shape_ = tuple(input_shape)
        est.params_id_ = state_hash(module)
        est.history_ = []
        return est

    @property
    def default_tap_(self):
        return default_tap(self.taps_)

    def __sklearn_is_fitted__(self):
        return hasattr(self, "module_")
