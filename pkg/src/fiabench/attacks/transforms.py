"""Input and gradient transforms used by the DIM, TIM and PIM baselines."""

from __future__ import annotations

import numpy as np
import torch
from torch.nn import functional as F

from ..exceptions import ParameterError


def input_diversity(images, prob, rng, resize_low=0.875):
    """Random resize-and-pad applied independently to each image.

    With probability ``prob`` an image is resized (nearest neighbour) to a side
    of ``floor(side * u)``, ``u ~ U[resize_low, 1)``, and zero-padded back to
    its original size at a random offset. The draws are made for every image
    on every call, so the stream consumed from ``rng`` does not depend on the
    outcomes. Differentiable w.r.t. ``images``.
    """
    if not 0.0 <= prob <= 1.0:
        raise ParameterError(f"prob must lie in [0, 1], got {prob}")
    if prob == 0.0:
        return images
    b, _, h, w = images.shape
    apply = rng.random(b) < prob
    factors = rng.uniform(resize_low, 1.0, size=b)
    offsets = rng.random((b, 2))
    out = []
    for i in range(b):
        img = images[i:i + 1]
        if not apply[i]:
            out.append(img)
            continue
        nh, nw = max(1, int(h * factors[i])), max(1, int(w * factors[i]))
        small = F.interpolate(img, size=(nh, nw), mode="nearest")
        top = int(offsets[i, 0] * (h - nh + 1))
        left = int(offsets[i, 1] * (w - nw + 1))
        out.append(F.pad(small, (left, w - nw - left, top, h - nh - top)))
    return torch.cat(out)


def _check_odd(kernel_size, name="kernel_size"):
    if int(kernel_size) != kernel_size or kernel_size < 1 or kernel_size % 2 == 0:
        raise ParameterError(f"{name} must be an odd integer >= 1, got {kernel_size}")
    return int(kernel_size)


def gaussian_kernel(kernel_size, sigma=None):
    """Normalized 2-D Gaussian of the given odd size; ``sigma`` defaults to size / 3."""
    k = _check_odd(kernel_size)
    sigma = k / 3.0 if sigma is None else float(sigma)
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    d = np.arange(k, dtype=np.float64) - k // 2
    g = np.exp(-(d ** 2) / (2 * sigma ** 2))
    kern = np.outer(g, g)
    return torch.from_numpy(kern / kern.sum())


def project_kernel(kernel_size):
    """Uniform ``k x k`` kernel with a zero centre, weights ``1 / (k^2 - 1)``."""
    k = _check_odd(kernel_size)
    if k == 1:
        return torch.zeros(1, 1, dtype=torch.float64)
    kern = torch.full((k, k), 1.0 / (k * k - 1), dtype=torch.float64)
    kern[k // 2, k // 2] = 0.0
    return kern


def depthwise_conv(x, kernel):
    """Same-padded (zero) convolution of every channel with one 2-D kernel."""
    c = x.shape[1]
    weight = kernel.to(x.dtype).expand(c, 1, *kernel.shape).contiguous()
    return F.conv2d(x, weight, padding=kernel.shape[-1] // 2, groups=c)


def translation_invariant_smooth(grad, kernel_size, sigma=None):
    """Smooth an input gradient with a Gaussian kernel, channel by channel."""
    kernel = gaussian_kernel(kernel_size, sigma)
    if kernel.shape[-1] == 1:
        return grad
    return depthwise_conv(grad, kernel)
