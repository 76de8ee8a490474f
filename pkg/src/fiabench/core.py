"""Pixel-space types, l-inf budget arithmetic and the seeding contract.

Images live in a real-valued pixel space (default ``[0, 255]``) with layout
``(batch, channel, height, width)``. Quantization to integers only happens when
images are exported.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch

from .exceptions import ContractViolationError, ParameterError

DEFAULT_VALUE_RANGE = (0.0, 255.0)
_MAX_SEED = 2**64 - 1


def as_tensor(x, dtype=torch.float32):
    """Return ``x`` as a torch tensor without copying when possible."""
    if isinstance(x, torch.Tensor):
        return x if x.dtype == dtype else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def as_float_tensor(x):
    """Tensor view of ``x`` keeping float64 input as float64, everything else float32."""
    is64 = getattr(x, "dtype", None) in (torch.float64, np.float64)
    return as_tensor(x, torch.float64 if is64 else torch.float32)


def check_images(X, value_range=DEFAULT_VALUE_RANGE, dtype=torch.float32, name="X"):
    """Validate a batch of images and return it as a float tensor.

    Accepts rank-3 ``(batch, height, width)`` input for single-channel data and
    inserts the channel axis. Raises :class:`ContractViolationError` for wrong
    rank, empty axes, non-finite values or pixels outside ``value_range``.
    ``dtype=None`` keeps float64 input and converts anything else to float32.
    """
    X = as_float_tensor(X) if dtype is None else as_tensor(X, dtype=dtype)
    if X.ndim == 3:
        X = X.unsqueeze(1)
    if X.ndim != 4:
        raise ContractViolationError(
            f"{name} must have shape (batch, channel, height, width); got {tuple(X.shape)}"
        )
    if min(X.shape) < 1:
        raise ContractViolationError(f"{name} has an empty axis: {tuple(X.shape)}")
    if not torch.isfinite(X).all():
        raise ContractViolationError(f"{name} contains non-finite values")
    lo, hi = value_range
    if X.min() < lo or X.max() > hi:
        raise ContractViolationError(
            f"{name} has values in [{float(X.min())}, {float(X.max())}], outside {value_range}"
        )
    return X


def check_labels(y, n_samples, num_classes=None):
    y = torch.as_tensor(np.asarray(y) if not isinstance(y, torch.Tensor) else y).long()
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ContractViolationError(
            f"labels must have shape ({n_samples},); got {tuple(y.shape)}"
        )
    if num_classes is not None and len(y) and (y.min() < 0 or y.max() >= num_classes):
        raise ContractViolationError(f"labels must lie in [0, {num_classes})")
    return y


@dataclass(frozen=True)
class ImageBatch:
    """A validated batch of images together with its valid pixel interval."""

    data: torch.Tensor
    value_range: Tuple[float, float] = DEFAULT_VALUE_RANGE

    def __post_init__(self):
        lo, hi = self.value_range
        if not lo < hi:
            raise ContractViolationError(f"empty value range {self.value_range}")
        object.__setattr__(self, "data", check_images(self.data, self.value_range, dtype=None))
        object.__setattr__(self, "value_range", (float(lo), float(hi)))

    @property
    def shape(self):
        return tuple(self.data.shape)

    def __len__(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class LabelledExample:
    image: ImageBatch
    label: int

    def __post_init__(self):
        if len(self.image) != 1:
            raise ContractViolationError("a labelled example holds exactly one image")
        if self.label < 0:
            raise ContractViolationError(f"invalid class index {self.label}")


@dataclass(frozen=True)
class PerturbationBudget:
    """l-inf budget in pixel units. Only the l-inf norm is supported."""

    epsilon: float = 16.0
    norm: str = "linf"

    def __post_init__(self):
        if self.norm != "linf":
            raise ParameterError(f"only the l-inf norm is supported, got {self.norm!r}")
        # epsilon = 0 is allowed as a degenerate "no perturbation" budget
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ParameterError(f"epsilon must be a finite non-negative number, got {self.epsilon}")


def _same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ContractViolationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def clip_to_budget(adv, clean, epsilon, value_range=DEFAULT_VALUE_RANGE):
    """Project ``adv`` onto the l-inf ball of radius ``epsilon`` around ``clean``.

    The budget projection is applied first and the value-range clamp second.
    The result satisfies ``|out - clean| <= epsilon`` exactly in floating point:
    elements whose recomputed distance rounds above ``epsilon`` are nudged one
    ulp towards ``clean``. Feasible elements are returned unchanged.
    """
    if isinstance(epsilon, PerturbationBudget):
        epsilon = epsilon.epsilon
    is_numpy = not isinstance(adv, torch.Tensor)
    adv_t, clean_t = as_float_tensor(adv), as_float_tensor(clean)
    if clean_t.dtype != adv_t.dtype:
        clean_t = clean_t.to(adv_t.dtype)
    _same_shape(adv_t, clean_t)
    lo, hi = value_range
    out = torch.minimum(torch.maximum(adv_t, clean_t - epsilon), clean_t + epsilon)
    out = out.clamp(lo, hi)
    for _ in range(4):
        over = (out - clean_t).abs() > epsilon
        if not over.any():
            break
        out = torch.where(over, torch.nextafter(out, clean_t), out)
    return out.numpy() if is_numpy else out


def linf_distance(a, b):
    """Largest absolute elementwise difference between two equally shaped arrays."""
    a_t, b_t = as_tensor(a, torch.float64), as_tensor(b, torch.float64)
    _same_shape(a_t, b_t)
    if a_t.numel() == 0:
        return 0.0
    return float((a_t - b_t).abs().max())


def linf_per_sample(a, b):
    a_t, b_t = as_tensor(a, torch.float64), as_tensor(b, torch.float64)
    _same_shape(a_t, b_t)
    return (a_t - b_t).abs().flatten(1).amax(dim=1)


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= _MAX_SEED:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def make_rng(seed):
    """The single random stream of an attack run."""
    return np.random.default_rng(check_seed(seed))


def derive_seed(seed, *coords):
    """Deterministically derive a 64-bit child seed from a seed and coordinates."""
    key = "|".join([str(check_seed(seed))] + [str(c) for c in coords]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def quantize(adv, clean, epsilon, value_range=DEFAULT_VALUE_RANGE):
    """Round to integer pixels while staying inside the budget and the value range.

    Rounded values are clamped to ``[ceil(clean - eps), floor(clean + eps)]``,
    which is non-empty whenever ``clean`` is integer valued.
    """
    adv_t, clean_t = as_tensor(adv, torch.float64), as_tensor(clean, torch.float64)
    _same_shape(adv_t, clean_t)
    lo, hi = value_range
    low = torch.ceil(torch.clamp(clean_t - epsilon, min=lo))
    high = torch.floor(torch.clamp(clean_t + epsilon, max=hi))
    return torch.minimum(torch.maximum(torch.round(adv_t), low), high)
