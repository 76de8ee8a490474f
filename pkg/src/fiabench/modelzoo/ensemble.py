"""Weighted logit ensembles of zoo models."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn

from ..exceptions import ContractViolationError, TapLookupError
from .handle import ModelHandle, freeze


class _EnsembleModule(nn.Module):
    def __init__(self, modules, weights):
        super().__init__()
        self.members = nn.ModuleList(modules)
        self.register_buffer("weights", torch.as_tensor(weights, dtype=torch.float32))
        self.tap_names = [f"m{i}/{t}" for i, m in enumerate(modules) for t in m.tap_names]

    def split_tap(self, tap):
        member, _, inner = tap.partition("/")
        if tap not in self.tap_names:
            raise TapLookupError(f"unknown tap {tap!r}; available: {self.tap_names}")
        return int(member[1:]), inner

    def member_logits(self, x):
        return [m(x) for m in self.members]

    def forward(self, x):
        out = None
        for w, logits in zip(self.weights, self.member_logits(x)):
            out = w * logits if out is None else out + w * logits
        return out

    def features(self, x, tap):
        i, inner = self.split_tap(tap)
        return self.members[i].features(x, inner)


class EnsembleClassifier(ModelHandle, ClassifierMixin, BaseEstimator):
    """Composite handle whose logits are ``sum_i w_i * logits_i``.

    Feature taps are the union of member taps, namespaced as ``m<i>/<tap>``.
    ``fit`` only validates the (already fitted) members.
    """

    def __init__(self, estimators, weights=None):
        self.estimators = estimators
        self.weights = weights

    arch_id = property(lambda self: "ensemble[" + ",".join(e.arch_id for e in self.estimators) + "]")

    @property
    def training_mode(self):
        modes = {e.training_mode for e in self.estimators}
        return modes.pop() if len(modes) == 1 else "mixed"

    def fit(self, X=None, y=None):
        members = list(self.estimators)
        if not members:
            raise ContractViolationError("an ensemble needs at least one member")
        weights = (np.full(len(members), 1.0 / len(members)) if self.weights is None
                   else np.asarray(self.weights, dtype=np.float64))
        if weights.shape != (len(members),) or (weights < 0).any() or abs(weights.sum() - 1) > 1e-6:
            raise ContractViolationError("ensemble weights must be non-negative and sum to 1")
        n_classes = {m.n_classes_ for m in members}
        shapes = {tuple(m.input_shape_) for m in members}
        if len(n_classes) != 1:
            raise ContractViolationError(f"members disagree on the number of classes: {n_classes}")
        if len(shapes) != 1:
            raise ContractViolationError(f"members disagree on input shape: {shapes}")
        self.module_ = freeze(_EnsembleModule([m.module_ for m in members], weights))
        self.weights_ = weights
        self.n_classes_ = n_classes.pop()
        self.classes_ = np.arange(self.n_classes_)
        self.input_shape_ = shapes.pop()
        self.taps_ = list(self.module_.tap_names)
        self.params_id_ = "+".join(str(m.params_id_) for m in members)
        return self

    def tap_logits_t(self, x, tap):
        self._check_tap(tap)
        i, inner = self.module_.split_tap(tap)
        member = self.module_.members[i]
        feats = member.features(x, inner).detach().requires_grad_(True)
        own = self.module_.weights[i] * member.head_from(feats, inner)
        with torch.no_grad():
            others = [w * m(x) for j, (w, m) in enumerate(zip(self.module_.weights, self.module_.members))
                      if j != i]
        # keep member order so the sum matches forward() term by term
        terms = others[:i] + [own] + others[i:]
        logits = terms[0]
        for term in terms[1:]:
            logits = logits + term
        return feats, logits

    def __sklearn_is_fitted__(self):
        return hasattr(self, "module_")
