"""Registry of differentiable attack objectives.

An objective is called as ``objective(model, X, **context)`` with ``X`` a
``(batch, C, H, W)`` tensor and returns one value per image. ``tap`` may be a
single tap name or a sequence; per-tap context (``importance``,
``clean_features``, ``weights``) is then a matching sequence and the values
are summed over taps.
"""

from __future__ import annotations

import torch
from torch.nn import functional as F

from ..exceptions import ConfigError
from .losses import fda_loss, feature_l1_loss, fia_loss, nrdm_loss, weighted_divergence_loss


def _taps(tap, *per_tap):
    if isinstance(tap, str):
        return [(tap, *per_tap)]
    return list(zip(tap, *per_tap))


def _sum_over_taps(model, X, tap, loss, *per_tap):
    total = None
    for t, *args in _taps(tap, *per_tap):
        value = loss(*args, model.features_t(X, t))
        total = value if total is None else total + value
    return total


def fia_objective(model, X, *, tap, importance, **_):
    return _sum_over_taps(model, X, tap, fia_loss, importance)


def nrdm_objective(model, X, *, tap, clean_features, **_):
    return _sum_over_taps(model, X, tap, lambda clean, adv: nrdm_loss(adv, clean), clean_features)


def fda_objective(model, X, *, tap, clean_features, **_):
    return _sum_over_taps(model, X, tap, lambda clean, adv: fda_loss(adv, clean), clean_features)


def feature_l1_objective(model, X, *, tap, clean_features, **_):
    return _sum_over_taps(model, X, tap, lambda clean, adv: feature_l1_loss(adv, clean), clean_features)


def weighted_divergence_objective(model, X, *, tap, weights, clean_features, **_):
    return _sum_over_taps(model, X, tap, lambda w, clean, adv: weighted_divergence_loss(w, adv, clean),
                          weights, clean_features)


def cross_entropy_objective(model, X, *, labels, **_):
    labels = torch.as_tensor(labels).long()
    return F.cross_entropy(model.logits_t(X), labels, reduction="none")


def pixel_sum_objective(model, X, **_):
    return X.flatten(1).sum(1)


def zero_objective(model, X, **_):
    return (X * 0).flatten(1).sum(1)


OBJECTIVES = {
    "fia": fia_objective,
    "nrdm": nrdm_objective,
    "fda": fda_objective,
    "feature_l1": feature_l1_objective,
    "weighted_divergence": weighted_divergence_objective,
    "cross_entropy": cross_entropy_objective,
    "pixel_sum": pixel_sum_objective,
    "zero": zero_objective,
}


def get_objective(name):
    if callable(name):
        return name
    try:
        return OBJECTIVES[name]
    except KeyError:
        raise ConfigError(f"unknown objective {name!r}; available: {sorted(OBJECTIVES)}") from None


def register_objective(name, fn):
    OBJECTIVES[name] = fn
    return fn

