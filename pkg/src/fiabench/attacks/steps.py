"""Update rules of the iterative attacks.

All rules descend: the driver hands in the gradient of the quantity it wants
to minimize, and the image moves along ``-sign(g)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import torch

from ..core import clip_to_budget
from ..exceptions import ContractViolationError, ZeroGradientError
from .transforms import depthwise_conv, project_kernel


@dataclass(frozen=True)
class OptimizerState:
    g: torch.Tensor  # accumulated momentum, input-shaped
    t: int
    x_adv: torch.Tensor
    # accumulated amplified noise of the patch-wise update
    amplification: Optional[torch.Tensor] = None

    @classmethod
    def start(cls, x_adv):
        return cls(torch.zeros_like(x_adv), 0, x_adv, torch.zeros_like(x_adv))


def _bshape(t):
    return (-1,) + (1,) * (t.ndim - 1)


def l1_normalize(grad, allow_zero=False):
    """Divide each image's gradient by its l1 norm.

    All-zero gradients raise :class:`ZeroGradientError` unless ``allow_zero``,
    in which case they stay zero.
    """
    if not torch.isfinite(grad).all():
        raise ContractViolationError("gradient contains non-finite values")
    norms = grad.flatten(1).abs().sum(1)
    zero = norms == 0
    if zero.any() and not allow_zero:
        raise ZeroGradientError(f"all-zero gradient for images {torch.nonzero(zero).flatten().tolist()}")
    return grad / torch.where(zero, torch.ones_like(norms), norms).view(_bshape(grad))


def _unpack(cfg, budget=None):
    epsilon = cfg.epsilon if budget is None else getattr(budget, "epsilon", budget)
    return epsilon, cfg.resolved_step_size, cfg.momentum, cfg.value_range


def momentum_step(state, grad, cfg, clean, allow_zero=False):
    """``g <- momentum * g + grad / ||grad||_1``; ``x <- Clip(x - step_size * sign(g))``."""
    clean = getattr(clean, "data", clean)
    epsilon, step_size, decay, value_range = _unpack(cfg)
    g = decay * state.g + l1_normalize(grad, allow_zero)
    x = clip_to_budget(state.x_adv - step_size * torch.sign(g), clean, epsilon, value_range)
    return replace(state, g=g, t=state.t + 1, x_adv=x)


def patchwise_step(state, grad, params, clean, budget, cfg, allow_zero=False):
    """Amplified sign step whose out-of-budget part is spread to neighbours.

    The step ``step_size * pim_amplification`` accumulates in
    ``state.amplification``. The part of it beyond ``epsilon`` is convolved
    with the zero-centre project kernel, and ``pim_project * sign`` of the result is added on top of the step before the
    final clip. With ``params.pim_use_momentum`` off the direction is the
    normalized current gradient alone.
    """
    clean = getattr(clean, "data", clean)
    epsilon, step_size, decay, value_range = _unpack(cfg, budget)
    params = params.resolved(cfg.diverse_inputs) if params.pim_amplification is None else params
    normed = l1_normalize(grad, allow_zero)
    g = decay * state.g + normed if params.pim_use_momentum else normed
    step = -step_size * params.pim_amplification * torch.sign(g)
    amp = (state.amplification if state.amplification is not None else torch.zeros_like(g)) + step
    cut = torch.clamp(amp.abs() - epsilon, min=0.0) * torch.sign(amp)
    projection = params.pim_project * torch.sign(depthwise_conv(cut, project_kernel(params.pim_kernel)))
    amp = amp + projection
    x = clip_to_budget(state.x_adv + step + projection, clean, epsilon, value_range)
    return OptimizerState(g=g, t=state.t + 1, x_adv=x, amplification=amp)
