"""Attack driver: one optimizer loop shared by every method and combination."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from ..core import ImageBatch, LabelledExample, as_float_tensor, check_labels, clip_to_budget, make_rng
from ..exceptions import ConfigError, ContractViolationError
from ..featimp import aggregate_total, l2_normalize, raw_gradient
from .config import AttackConfig
from .objectives import get_objective
from .steps import OptimizerState, momentum_step, patchwise_step
from .transforms import input_diversity, translation_invariant_smooth

logger = logging.getLogger(__name__)

# method -> (objective, +1 to minimize it / -1 to maximize it)
METHOD_OBJECTIVES = {
    "FIA": ("fia", 1.0),
    "MIM": ("cross_entropy", -1.0),
    "NRDM": ("nrdm", -1.0),
    "FDA": ("fda", -1.0),
    "L1": ("feature_l1", -1.0),
    "L2": ("weighted_divergence", -1.0),
    "L3": ("weighted_divergence", -1.0),
}


@dataclass
class AttackResult:
    """Output of one attack run over a batch.

    ``loss_trace`` has shape ``(T + 1, batch)``: the minimized objective
    (sign already applied) at ``x_0 ... x_T`` on the untransformed image.
    ``failed`` marks images whose attack could not run (degenerate aggregate
    gradient); those are returned unperturbed.
    """

    adversarial: torch.Tensor
    clean: torch.Tensor
    labels: np.ndarray
    success_on_source: np.ndarray
    failed: np.ndarray
    loss_trace: np.ndarray
    config_echo: dict
    taps: tuple = field(default_factory=tuple)

    def as_image_batch(self):
        return ImageBatch(self.adversarial, tuple(self.config_echo["value_range"]))

    @property
    def success_rate(self):
        return float(self.success_on_source.mean()) if len(self.labels) else float("nan")


def ensemble_handle(models, weights=None):
    """Uniform (or weighted) logit ensemble of fitted zoo models."""
    from ..modelzoo.ensemble import EnsembleClassifier

    return EnsembleClassifier(list(models), weights).fit()


def _is_ensemble(model):
    return hasattr(model, "estimators") and hasattr(model.module_, "split_tap")


def resolve_taps(model, tap):
    """Tap names the feature-level objectives use on ``model``.

    ``None`` picks each model's default tap. On an ensemble a bare tap name
    such as ``"block2"`` expands to that tap of every member.
    """
    if _is_ensemble(model):
        members = model.estimators
        if tap is None:
            taps = tuple(f"m{i}/{m.default_tap_}" for i, m in enumerate(members))
        elif isinstance(tap, str) and "/" not in tap:
            taps = tuple(f"m{i}/{tap}" for i in range(len(members)))
        else:
            taps = (tap,) if isinstance(tap, str) else tuple(tap)
    elif tap is None:
        taps = (model.default_tap_,)
    else:
        taps = (tap,) if isinstance(tap, str) else tuple(tap)
    for t in taps:
        model._check_tap(t)
    return taps


def _coerce_inputs(source, images, labels, validate):
    if isinstance(images, LabelledExample):
        if labels is None:
            labels = [images.label]
        images = images.image
    if isinstance(images, ImageBatch):
        images = images.data
    x = source._validate(images) if validate else as_float_tensor(images)
    if labels is None:
        with torch.no_grad():
            labels = source.logits_t(x).argmax(1)
    return x, check_labels(labels, x.shape[0], source.n_classes_)


def _importance(source, x, labels, taps, cfg, rng, per_image_failed):
    """Aggregate gradient per tap, computed once on the clean images."""
    maps = []
    for tap in taps:
        total = aggregate_total(source, x, labels, replace(cfg.aggregation, tap=tap), rng)
        per_image_failed |= (total.flatten(1).norm(dim=1) == 0).numpy()
        maps.append(l2_normalize(total, allow_zero=True))
    return maps


def _context(source, x, labels, taps, cfg, rng, failed):
    method = cfg.method
    if method == "MIM":
        return {"labels": labels}
    with torch.no_grad():
        clean_features = [source.features_t(x, t) for t in taps]
    if method == "FIA":
        return {"tap": taps, "importance": _importance(source, x, labels, taps, cfg, rng, failed)}
    if method in ("NRDM", "FDA", "L1"):
        return {"tap": taps, "clean_features": clean_features}
    if method == "L2":
        weights = []
        for t in taps:
            raw = raw_gradient(source, x, labels, t)
            failed |= (raw.flatten(1).norm(dim=1) == 0).numpy()
            weights.append(l2_normalize(raw, allow_zero=True))
        return {"tap": taps, "weights": weights, "clean_features": clean_features}
    if method == "L3":
        return {"tap": taps, "weights": _importance(source, x, labels, taps, cfg, rng, failed),
                "clean_features": clean_features}
    raise ConfigError(f"no driver for method {method!r}")


def run_attack(source, images, labels=None, cfg=None, validate=True):
    """Run the attack described by ``cfg`` against ``source``.

    ``source`` is a fitted zoo model or a list of them (attacked as a uniform
    logit ensemble). ``labels=None`` uses the source's own predictions. All
    randomness (masks, random start, input diversity) is drawn from one
    generator seeded with ``cfg.seed``, in that order.
    """
    cfg = AttackConfig() if cfg is None else cfg
    if isinstance(cfg, dict):
        cfg = AttackConfig.from_dict(cfg)
    if isinstance(source, (list, tuple)):
        source = ensemble_handle(source)
    x, y = _coerce_inputs(source, images, labels, validate)
    if tuple(cfg.value_range) != tuple(source.value_range):
        raise ContractViolationError(f"config value range {cfg.value_range} != model {source.value_range}")
    rng = make_rng(cfg.seed)
    objective_name, sign = METHOD_OBJECTIVES[cfg.method]
    objective = get_objective(objective_name)
    taps = () if cfg.method == "MIM" else resolve_taps(source, cfg.tap)
    failed = np.zeros(x.shape[0], dtype=bool)
    context = _context(source, x, y, taps, cfg, rng, failed)

    clean = x.detach()
    start = clean
    if cfg.random_start > 0 and cfg.epsilon > 0:
        radius = cfg.random_start * cfg.epsilon
        noise = torch.from_numpy(rng.uniform(-radius, radius, size=tuple(x.shape))).to(x.dtype)
        noise[torch.from_numpy(failed)] = 0
        start = clip_to_budget(clean + noise, clean, cfg.epsilon, cfg.value_range)
    state = OptimizerState.start(start)
    base = cfg.baseline
    trace = []

    def loss_at(batch):
        with torch.no_grad():
            return (sign * objective(source, batch, **context)).detach()

    for _ in range(cfg.iterations):
        x_adv = state.x_adv.detach().requires_grad_(True)
        with torch.enable_grad():
            x_in = input_diversity(x_adv, base.dim_transform_prob, rng, base.dim_resize_low) if cfg.diverse_inputs else x_adv
            values = sign * objective(source, x_in, **context)
            (grad,) = torch.autograd.grad(values.sum(), x_adv)
        trace.append(loss_at(state.x_adv) if cfg.diverse_inputs else values.detach())
        grad = grad.detach()
        if cfg.translation_invariant:
            grad = translation_invariant_smooth(grad, base.tim_kernel_size, base.tim_sigma)
        if cfg.patchwise:
            state = patchwise_step(state, grad, base, clean, cfg.epsilon, cfg, allow_zero=True)
        else:
            state = momentum_step(state, grad, cfg, clean, allow_zero=True)
    trace.append(loss_at(state.x_adv))

    adversarial = state.x_adv.detach()
    with torch.no_grad():
        predicted = source.logits_t(adversarial).argmax(1)
    return AttackResult(
        adversarial=adversarial,
        clean=clean,
        labels=y.numpy(),
        success_on_source=(predicted != y).numpy(),
        failed=failed,
        loss_trace=torch.stack(trace).numpy(),
        config_echo=cfg.to_dict(),
        taps=taps,
    )


def run_fia(model, example, labels=None, cfg=None, validate=True):
    cfg = AttackConfig(method="FIA") if cfg is None else cfg
    if cfg.method != "FIA":
        raise ConfigError(f"run_fia needs method FIA, got {cfg.method}")
    return run_attack(model, example, labels, cfg, validate)


def run_mim(model, example, labels=None, cfg=None, validate=True):
    cfg = AttackConfig(method="MIM") if cfg is None else cfg
    if cfg.method != "MIM":
        raise ConfigError(f"run_mim needs method MIM, got {cfg.method}")
    return run_attack(model, example, labels, cfg, validate)
