"""Feature importance from gradients aggregated over randomly pixel-dropped copies.

The importance of a feature map ``f_k(x)`` is the gradient of the true-class
logit with respect to it, summed over ``N`` copies ``x * M_n`` with Bernoulli
masks ``M_n ~ Bernoulli(1 - p_d)`` and scaled to unit l2 norm per image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import as_float_tensor, as_tensor, check_labels
from .exceptions import ContractViolationError, DegenerateGradientError, ParameterError


@dataclass(frozen=True)
class AggregationConfig:
    drop_prob: float = 0.3
    ensemble_number: int = 30
    tap: str | None = None
    # False: one draw per spatial location shared by all channels
    per_element: bool = False

    def __post_init__(self):
        _check_drop_prob(self.drop_prob)
        if int(self.ensemble_number) != self.ensemble_number or self.ensemble_number < 1:
            raise ParameterError(f"ensemble_number must be a positive integer, got {self.ensemble_number}")


@dataclass(frozen=True)
class AggregateGradient:
    values: torch.Tensor  # (batch, *feature_shape), unit l2 norm per image
    source_config: AggregationConfig


def _check_drop_prob(p):
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"drop probability must lie in [0, 1), got {p}")


def sample_mask(shape, drop_prob, rng):
    """Draw a binary keep-mask with ``P(1) = 1 - drop_prob``.

    ``rng`` is a :class:`numpy.random.Generator`; identical generator states
    give identical masks.
    """
    _check_drop_prob(drop_prob)
    if drop_prob == 0.0:
        # consume nothing: p_d = 0 is deterministic
        return np.ones(shape, dtype=np.float32)
    return (rng.random(shape) >= drop_prob).astype(np.float32)


def _mask_shape(images, per_element):
    b, c, h, w = images.shape
    return (b, c, h, w) if per_element else (b, 1, h, w)


def draw_masks(images, cfg, rng):
    """All ``N`` masks of one aggregation, drawn in order from ``rng``."""
    shape = _mask_shape(images, cfg.per_element)
    return [torch.from_numpy(sample_mask(shape, cfg.drop_prob, rng)) for _ in range(cfg.ensemble_number)]


def _grad_logit(model, images, labels, tap):
    with torch.enable_grad():
        feats, logits = model.tap_logits_t(images, tap)
        (grad,) = torch.autograd.grad(logits.gather(1, labels[:, None]).sum(), feats)
    return grad


def raw_gradient(model, images, labels, tap, chunk_size=256):
    """Gradient of the true-class logit w.r.t. the tap on the unmasked images."""
    images = as_float_tensor(images)
    labels = check_labels(labels, images.shape[0], model.n_classes_)
    parts = [_grad_logit(model, images[i:i + chunk_size], labels[i:i + chunk_size], tap)
             for i in range(0, images.shape[0], chunk_size)]
    return torch.cat(parts)


def l2_normalize(total, eps=0.0, allow_zero=False):
    """Scale each image's map to unit l2 norm.

    All-zero maps raise :class:`DegenerateGradientError`, or stay zero when
    ``allow_zero`` is set.
    """
    norms = total.flatten(1).norm(dim=1)
    if allow_zero:
        norms = torch.where(norms <= eps, torch.ones_like(norms), norms)
    elif (norms <= eps).any():
        bad = torch.nonzero(norms <= eps).flatten().tolist()
        raise DegenerateGradientError(f"aggregate gradient is all zero for images {bad}")
    return total / norms.view(-1, *([1] * (total.ndim - 1)))


def aggregate_total(model, images, labels, cfg, rng, chunk_size=256):
    """Unnormalized sum of true-class logit gradients over the ``N`` masked copies."""
    images = as_float_tensor(images)
    labels = check_labels(labels, images.shape[0], model.n_classes_)
    tap = cfg.tap
    masks = draw_masks(images, cfg, rng)
    total = None
    for mask in masks:
        masked = images * mask
        parts = [_grad_logit(model, masked[i:i + chunk_size], labels[i:i + chunk_size], tap)
                 for i in range(0, images.shape[0], chunk_size)]
        grad = torch.cat(parts)
        total = grad if total is None else total + grad
    return total


def aggregate_gradient(model, images, labels, cfg, rng, chunk_size=256):
    """Aggregate gradient for a batch of images.

    The ``N`` masks are pre-drawn sequentially from ``rng`` (one
    ``(batch, 1|C, H, W)`` array per mask), then gradients of the true-class
    logit are summed over masked copies and each image's sum is divided by its
    l2 norm. Raises :class:`DegenerateGradientError` if any sum is all zero.
    """
    total = aggregate_total(model, images, labels, cfg, rng, chunk_size)
    return AggregateGradient(l2_normalize(total), cfg)


def importance_heatmap(importance, features):
    """Channel sum of ``importance * features`` min-max scaled to ``[0, 1]``.

    Works on a single ``(C, H, W)`` map or a batch ``(B, C, H, W)``; a
    constant map yields all zeros.
    """
    if isinstance(importance, AggregateGradient):
        importance = importance.values
    imp = as_tensor(importance, torch.float64)
    feats = as_tensor(features, torch.float64)
    if imp.shape != feats.shape:
        raise ContractViolationError(f"shape mismatch: {tuple(imp.shape)} vs {tuple(feats.shape)}")
    if imp.ndim == 3:
        return importance_heatmap(imp[None], feats[None])[0]
    heat = (imp * feats).sum(dim=1)
    lo = heat.flatten(1).amin(1).view(-1, 1, 1)
    hi = heat.flatten(1).amax(1).view(-1, 1, 1)
    span = hi - lo
    out = torch.where(span > 0, (heat - lo) / torch.where(span > 0, span, torch.ones_like(span)),
                      torch.zeros_like(heat))
    return out.numpy()
