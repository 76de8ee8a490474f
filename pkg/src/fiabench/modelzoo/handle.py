"""Differentiable classifier handles with named feature taps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.utils.validation import check_is_fitted

from ..core import DEFAULT_VALUE_RANGE, check_images, check_labels
from ..exceptions import CapabilityError, ContractViolationError, TapLookupError


@dataclass(frozen=True)
class ModelOutputs:
    logits: np.ndarray
    probabilities: np.ndarray
    predicted_label: np.ndarray


class ModelHandle:
    """Mixin giving a fitted torch classifier the attack-facing API.

    Subclasses set ``module_`` (a :class:`TappedNet`-like module exposing
    ``features``, ``head_from`` and ``forward``), ``n_classes_``, ``taps_``,
    ``input_shape_`` and ``params_id_`` when fitted. ``arch_id`` and
    ``training_mode`` describe the handle.
    """

    value_range = DEFAULT_VALUE_RANGE

    # -- torch level, used by the attack code -------------------------------
    def logits_t(self, x):
        return self.module_(x)

    def features_t(self, x, tap):
        self._check_tap(tap)
        return self.module_.features(x, tap)

    def tap_logits_t(self, x, tap):
        """Return ``(features, logits)`` with ``features`` as a fresh autograd leaf."""
        feats = self.features_t(x, tap).detach().requires_grad_(True)
        return feats, self.module_.head_from(feats, tap)

    # -- validation --------------------------------------------------------
    def _check_tap(self, tap):
        check_is_fitted(self, "module_")
        if tap not in self.taps_:
            raise TapLookupError(f"unknown tap {tap!r}; available: {list(self.taps_)}")

    def _validate(self, X):
        check_is_fitted(self, "module_")
        # float64 input stays float64 (finite-difference checks rely on it)
        X = check_images(X, self.value_range, dtype=None)
        if tuple(X.shape[1:]) != tuple(self.input_shape_):
            raise ContractViolationError(
                f"expected images of shape {tuple(self.input_shape_)}, got {tuple(X.shape[1:])}"
            )
        return X

    # -- numpy level ---------------------------------------------------------
    @torch.no_grad()
    def decision_function(self, X):
        return self.logits_t(self._validate(X)).numpy()

    def forward(self, X):
        logits = torch.as_tensor(self.decision_function(X), dtype=torch.float64)
        probs = torch.softmax(logits, dim=1)
        return ModelOutputs(logits.numpy(), probs.numpy(), logits.argmax(1).numpy())

    def predict_proba(self, X):
        return self.forward(X).probabilities

    def predict(self, X):
        return np.asarray(self.classes_)[self.decision_function(X).argmax(1)]

    @torch.no_grad()
    def features_at(self, X, tap):
        return self.features_t(self._validate(X), tap).numpy()

    def grad_logit_wrt_features(self, X, tap, labels):
        """Gradient of the true-class (pre-softmax) logit w.r.t. the tap's feature map."""
        X = self._validate(X)
        labels = check_labels(labels, X.shape[0], self.n_classes_)
        with torch.enable_grad():
            feats, logits = self.tap_logits_t(X, tap)
            selected = logits.gather(1, labels[:, None]).sum()
            if not selected.requires_grad:
                raise CapabilityError(f"logits do not depend on tap {tap!r}")
            (grad,) = torch.autograd.grad(selected, feats, allow_unused=True)
        if grad is None:
            raise CapabilityError(f"logits do not depend on tap {tap!r}")
        return grad.numpy()

    def grad_scalar_wrt_input(self, X, scalar_fn, **context):
        """Gradient of a registered attack objective w.r.t. the input pixels.

        ``scalar_fn`` names an entry of :data:`fiabench.attacks.objectives.OBJECTIVES`;
        ``context`` carries what the objective needs (labels, importance, tap ...).
        """
        from ..attacks.objectives import get_objective

        objective = get_objective(scalar_fn)
        X = self._validate(X).clone().requires_grad_(True)
        with torch.enable_grad():
            value = objective(self, X, **context).sum()
            if not value.requires_grad:
                return np.zeros(tuple(X.shape), dtype=np.float32)
            (grad,) = torch.autograd.grad(value, X, allow_unused=True)
        if grad is None:
            return np.zeros(tuple(X.shape), dtype=np.float32)
        return grad.numpy()

    @property
    def num_classes(self):
        return self.n_classes_

    @property
    def taps(self):
        return list(self.taps_)

    def describe(self):
        return {
            "arch_id": getattr(self, "arch_id", None),
            "params_id": getattr(self, "params_id_", None),
            "num_classes": int(self.n_classes_),
            "taps": list(self.taps_),
            "training_mode": getattr(self, "training_mode", "normal"),
        }


def freeze(module):
    """Put a module in eval mode and stop parameter gradients."""
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def state_hash(module):
    import hashlib

    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()[:16]
