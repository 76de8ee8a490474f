"""Attack configuration objects and their serialization."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Tuple, Union

from ..core import DEFAULT_VALUE_RANGE, PerturbationBudget, check_seed
from ..exceptions import ConfigError, ParameterError
from ..featimp import AggregationConfig

BASE_METHODS = ("FIA", "MIM", "NRDM", "FDA", "L1", "L2", "L3")
# shorthand names of the gradient-transform baselines
ALIASES = {
    "DIM": ("MIM", True, False, False),
    "TIM": ("MIM", False, True, False),
    "PIM": ("MIM", False, False, True),
    "TIDIM": ("MIM", True, True, False),
    "PIDIM": ("MIM", True, False, True),
    "PITIDIM": ("MIM", True, True, True),
}
# (diverse_inputs, translation_invariant, patchwise) combinations each base supports
VALID_FLAGS = {
    "MIM": {(False, False, False), (True, False, False), (False, True, False), (False, False, True),
            (True, True, False), (True, False, True), (True, True, True)},
    "FIA": {(False, False, False), (True, False, True), (True, True, True)},
}
# methods whose objective has zero gradient at the clean image
NEEDS_RANDOM_START = ("NRDM", "L1")
# (amplification, project) defaults for PIM alone and for its input-diversity combinations
PIM_FACTORS = (10.0, 16.0)
PIM_COMBINED_FACTORS = (2.5, 2.0)


@dataclass(frozen=True)
class BaselineParams:
    dim_transform_prob: float = 0.7
    dim_resize_low: float = 0.875
    tim_kernel_size: int = 15
    tim_sigma: Optional[float] = None  # None: kernel_size / 3
    # None: 10 / 16 for PIM alone, 2.5 / 2 once combined with input diversity
    pim_amplification: Optional[float] = None
    pim_project: Optional[float] = None
    pim_kernel: int = 3
    pim_use_momentum: bool = True

    def resolved(self, diverse_inputs):
        """Copy with the patch-wise factors filled in for the given combination."""
        amp, proj = PIM_COMBINED_FACTORS if diverse_inputs else PIM_FACTORS
        return replace(self, pim_amplification=amp if self.pim_amplification is None else self.pim_amplification,
                       pim_project=proj if self.pim_project is None else self.pim_project)

    def __post_init__(self):
        for name in ("tim_kernel_size", "pim_kernel"):
            k = getattr(self, name)
            if int(k) != k or k < 1 or k % 2 == 0:
                raise ParameterError(f"{name} must be an odd integer >= 1, got {k}")
        if not 0.0 <= self.dim_transform_prob <= 1.0:
            raise ParameterError(f"dim_transform_prob must lie in [0, 1], got {self.dim_transform_prob}")
        if not 0.0 < self.dim_resize_low <= 1.0:
            raise ParameterError(f"dim_resize_low must lie in (0, 1], got {self.dim_resize_low}")
        amp, proj = self.pim_amplification, self.pim_project
        if (amp is not None and amp <= 0) or (proj is not None and proj < 0):
            raise ParameterError("pim_amplification must be positive and pim_project non-negative")


@dataclass(frozen=True)
class AttackConfig:
    """Everything needed to reproduce one attack run.

    ``method`` accepts a base method (``FIA, MIM, NRDM, FDA`` or the ablation
    objectives ``L1, L2, L3``) or a baseline alias such as ``"PIDIM"`` or
    ``"FIA+PITIDIM"``; aliases are expanded into the three combination flags.
    ``step_size=None`` means ``epsilon / iterations``.
    """

    method: str = "FIA"
    epsilon: float = 16.0
    iterations: int = 10
    step_size: Optional[float] = None
    momentum: float = 1.0
    tap: Union[None, str, Tuple[str, ...]] = None
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    baseline: BaselineParams = field(default_factory=BaselineParams)
    diverse_inputs: bool = False
    translation_invariant: bool = False
    patchwise: bool = False
    random_start: Optional[float] = None  # fraction of epsilon; None: method default
    seed: int = 0
    value_range: Tuple[float, float] = DEFAULT_VALUE_RANGE

    def __post_init__(self):
        method = self.method.upper()
        flags = (self.diverse_inputs, self.translation_invariant, self.patchwise)
        base, _, combo = method.partition("+")
        if base in ALIASES and not combo:
            base, *alias_flags = ALIASES[base]
            flags = tuple(a or b for a, b in zip(flags, alias_flags))
        elif combo:
            if combo not in ALIASES:
                raise ConfigError(f"unknown combination {combo!r} in method {self.method!r}")
            flags = tuple(a or b for a, b in zip(flags, ALIASES[combo][1:]))
        if base not in BASE_METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if any(flags) and flags not in VALID_FLAGS.get(base, set()):
            raise ConfigError(f"combination {flags} is not defined for {base}")
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("method", base)
        set_("diverse_inputs", bool(flags[0]))
        set_("translation_invariant", bool(flags[1]))
        set_("patchwise", bool(flags[2]))
        if isinstance(self.aggregation, dict):
            set_("aggregation", AggregationConfig(**self.aggregation))
        if isinstance(self.baseline, dict):
            set_("baseline", BaselineParams(**self.baseline))
        set_("baseline", self.baseline.resolved(self.diverse_inputs))
        if isinstance(self.tap, list):
            set_("tap", tuple(self.tap))
        set_("value_range", tuple(float(v) for v in self.value_range))
        PerturbationBudget(self.epsilon)
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ParameterError(f"iterations must be a positive integer, got {self.iterations}")
        if self.step_size is not None and self.step_size < 0:
            raise ParameterError("step_size must be non-negative")
        if self.momentum < 0:
            raise ParameterError("momentum must be non-negative")
        if self.random_start is None:
            set_("random_start", 0.1 if base in NEEDS_RANDOM_START else 0.0)
        if not 0.0 <= self.random_start <= 1.0:
            raise ParameterError("random_start is a fraction of epsilon in [0, 1]")
        set_("seed", check_seed(self.seed))

    @property
    def resolved_step_size(self):
        return self.epsilon / self.iterations if self.step_size is None else self.step_size

    @property
    def budget(self):
        return PerturbationBudget(self.epsilon)

    @property
    def name(self):
        """Display name, e.g. ``MIM``, ``PIDIM``, ``FIA+PITIDIM``."""
        flags = (self.diverse_inputs, self.translation_invariant, self.patchwise)
        combo = next((k for k, v in ALIASES.items() if tuple(v[1:]) == flags), "")
        if self.method == "MIM":
            return combo or "MIM"
        return f"{self.method}+{combo}" if combo else self.method

    def to_dict(self):
        d = asdict(self)
        d["value_range"] = list(self.value_range)
        if isinstance(self.tap, tuple):
            d["tap"] = list(self.tap)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def replace(self, **changes):
        return replace(self, **changes)
