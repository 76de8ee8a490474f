"""Feature-level attack losses.

Every loss returns one value per image (shape ``(batch,)``); an unbatched
``(C, H, W)`` pair gives a 0-d tensor. Losses are written as defined; the
attack driver decides whether it descends or ascends them.
"""

from __future__ import annotations

import torch

from ..core import as_tensor
from ..exceptions import ContractViolationError
from ..featimp import AggregateGradient

LOG_FLOOR = 1e-12


def _pair(a, b):
    if isinstance(a, AggregateGradient):
        a = a.values
    if not isinstance(a, torch.Tensor):
        a = as_tensor(a, torch.float64)
    if not isinstance(b, torch.Tensor):
        b = as_tensor(b, a.dtype)
    if tuple(a.shape) != tuple(b.shape):
        raise ContractViolationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def _per_sample_sum(t):
    return t.sum() if t.ndim <= 3 else t.flatten(1).sum(1)


def _safe_sqrt(sq):
    # zero gradient (instead of nan) where the sum of squares is exactly zero
    positive = sq > 0
    return torch.where(positive, torch.where(positive, sq, torch.ones_like(sq)).sqrt(), torch.zeros_like(sq))


def fia_loss(importance, features):
    """Sum of ``importance * features``; the attack minimizes it."""
    imp, feats = _pair(importance, features)
    return _per_sample_sum(imp.to(feats.dtype) * feats)


def nrdm_loss(features_adv, features_clean):
    """l2 distance between adversarial and clean feature maps (maximized)."""
    adv, clean = _pair(features_adv, features_clean)
    diff = adv - clean.to(adv.dtype)
    return _safe_sqrt(_per_sample_sum(diff * diff))


def fda_loss(features_adv, features_clean):
    """``log ||adv on {clean < mean}|| - log ||adv on {clean > mean}||``.

    The mean is taken over channels at each spatial position. Positions equal
    to the mean belong to neither set; ``1e-12`` floors the norms so empty
    sets give a finite value. The driver maximizes this (activations below
    the mean are promoted, those above it suppressed).
    """
    adv, clean = _pair(features_adv, features_clean)
    clean = clean.to(adv.dtype)
    channel_axis = 0 if clean.ndim == 3 else 1
    mean = clean.mean(dim=channel_axis, keepdim=True)
    below = (clean < mean).to(adv.dtype)
    above = (clean > mean).to(adv.dtype)
    low_norm = _safe_sqrt(_per_sample_sum((adv * below) ** 2))
    high_norm = _safe_sqrt(_per_sample_sum((adv * above) ** 2))
    return torch.log(low_norm.clamp_min(LOG_FLOOR)) - torch.log(high_norm.clamp_min(LOG_FLOOR))


def feature_l1_loss(features_adv, features_clean):
    """Unweighted divergence ``sum |f(x) - f(x_adv)|`` (maximized)."""
    adv, clean = _pair(features_adv, features_clean)
    return _per_sample_sum((clean.to(adv.dtype) - adv).abs())


def weighted_divergence_loss(weights, features_adv, features_clean):
    """``sum weights * (f(x) - f(x_adv))`` (maximized).

    With the aggregate gradient as ``weights`` this equals ``-fia_loss`` plus
    a term that depends only on the clean image.
    """
    w, adv = _pair(weights, features_adv)
    _, clean = _pair(adv, features_clean)
    return _per_sample_sum(w.to(adv.dtype) * (clean.to(adv.dtype) - adv))
