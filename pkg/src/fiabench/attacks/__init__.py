"""Feature-importance attack and the iterative baselines it is compared with."""

from .config import AttackConfig, BaselineParams
from .estimator import AttackTransformer
from .export import export_result, quantized_adversarial
from .losses import fda_loss, feature_l1_loss, fia_loss, nrdm_loss, weighted_divergence_loss
from .objectives import OBJECTIVES, get_objective, register_objective
from .runner import AttackResult, ensemble_handle, resolve_taps, run_attack, run_fia, run_mim
from .steps import OptimizerState, l1_normalize, momentum_step, patchwise_step
from .transforms import gaussian_kernel, input_diversity, project_kernel, translation_invariant_smooth

__all__ = [
    "AttackConfig", "AttackResult", "AttackTransformer", "BaselineParams", "OBJECTIVES", "OptimizerState",
    "ensemble_handle", "export_result", "fda_loss", "feature_l1_loss", "fia_loss", "gaussian_kernel",
    "get_objective", "input_diversity", "l1_normalize", "momentum_step", "nrdm_loss", "patchwise_step",
    "project_kernel", "quantized_adversarial", "register_objective", "resolve_taps", "run_attack",
    "run_fia", "run_mim", "translation_invariant_smooth", "weighted_divergence_loss",
]
