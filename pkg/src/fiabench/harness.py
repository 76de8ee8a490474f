"""Experiment orchestration: transfer matrices, parameter sweeps and the loss ablation.

Success rates use the images a target classifies correctly when clean as
the denominator (headline metric); the all-images rate is reported
alongside. Adversarials are rounded to integer pixels (within budget) before
evaluation, so in-memory results agree with exported image files.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List

import numpy as np
import torch

from .attacks.config import AttackConfig
from .attacks.export import quantized_adversarial
from .attacks.runner import ensemble_handle, run_attack
from .core import as_float_tensor, derive_seed
from .exceptions import ConfigError, UndefinedRateError
from .modelzoo.training import atomic_write_text

logger = logging.getLogger(__name__)

CSV_FIELDS = ["source", "attack", "target", "n", "successes", "rate", "white_box",
              "n_all", "successes_all", "rate_all", "failures"]
SWEEP_AXES = ("drop_prob", "ensemble_number", "layer")


def format_rate(rate):
    """Percentage with one decimal, e.g. ``0.835 -> "83.5%"``."""
    return f"{100.0 * rate:.1f}%"


def _predict(model, X, batch_size=500):
    X = as_float_tensor(X)
    with torch.no_grad():
        return torch.cat([model.logits_t(X[i:i + batch_size]).argmax(1)
                          for i in range(0, X.shape[0], batch_size)]).numpy()


def success_counts(target, adversarials, clean, labels):
    """``(n_clean_correct, successes_among_them, n_all, successes_all)``."""
    labels = np.asarray(labels)
    adv_pred = _predict(target, adversarials)
    clean_ok = _predict(target, clean) == labels
    fooled = adv_pred != labels
    return int(clean_ok.sum()), int((fooled & clean_ok).sum()), len(labels), int(fooled.sum())


def evaluate_success(target, adversarials, clean, labels):
    """Fraction of clean-correct images the target misclassifies after the attack."""
    if len(np.asarray(labels)) != len(adversarials) or len(adversarials) != len(clean):
        raise ConfigError("adversarials, clean images and labels must be aligned")
    n, k, _, _ = success_counts(target, adversarials, clean, labels)
    if n == 0:
        raise UndefinedRateError("the target misclassifies every clean image; success rate undefined")
    return k / n


@dataclass
class Cell:
    source: str
    attack: str
    target: str
    n: int
    successes: int
    rate: float
    white_box: bool
    n_all: int
    successes_all: int
    rate_all: float
    failures: int = 0


@dataclass
class TransferMatrix:
    cells: List[Cell] = field(default_factory=list)
    n_images: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def entries(self):
        return {(c.source, c.attack, c.target): c.rate for c in self.cells}

    @property
    def white_box_flags(self):
        return {(c.source, c.attack, c.target): c.white_box for c in self.cells}

    def cell(self, source, attack, target):
        for c in self.cells:
            if (c.source, c.attack, c.target) == (source, attack, target):
                return c
        raise KeyError((source, attack, target))

    def rate(self, source, attack, target):
        return self.cell(source, attack, target).rate

    @property
    def attacks(self):
        return list(dict.fromkeys(c.attack for c in self.cells))

    @property
    def sources(self):
        return list(dict.fromkeys(c.source for c in self.cells))

    @property
    def targets(self):
        return list(dict.fromkeys(c.target for c in self.cells))

    def transfer_cells(self, attack):
        return [c for c in self.cells if c.attack == attack and not c.white_box and not np.isnan(c.rate)]

    def mean_transfer(self, attack):
        """Average rate over the attack's non-white-box cells."""
        cells = self.transfer_cells(attack)
        return float(np.mean([c.rate for c in cells])) if cells else float("nan")

    def mean_white_box(self, attack):
        cells = [c for c in self.cells if c.attack == attack and c.white_box and not np.isnan(c.rate)]
        return float(np.mean([c.rate for c in cells])) if cells else float("nan")

    def to_csv_text(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for c in self.cells:
            writer.writerow({**asdict(c), "rate": f"{c.rate:.6f}", "rate_all": f"{c.rate_all:.6f}"})
        return buf.getvalue()

    def to_dict(self):
        return {"n_images": self.n_images, "cells": [asdict(c) for c in self.cells], "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls([Cell(**c) for c in d["cells"]], d["n_images"], d.get("meta", {}))

    def save(self, directory, stem="matrix"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        atomic_write_text(directory / f"{stem}.csv", self.to_csv_text())
        atomic_write_text(directory / f"{stem}.json", json.dumps(self.to_dict(), indent=2, default=_jsonable))
        return directory / f"{stem}.csv", directory / f"{stem}.json"

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def format_table(self, attack):
        """Sources down, targets across; white-box cells marked with ``*``."""
        targets = self.targets
        rows = [["source"] + targets]
        for s in self.sources:
            row = [s]
            for t in targets:
                try:
                    c = self.cell(s, attack, t)
                except KeyError:
                    row.append("-")
                    continue
                row.append(("n/a" if np.isnan(c.rate) else format_rate(c.rate)) + ("*" if c.white_box else ""))
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [f"[{attack}]"] + ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
        return "\n".join(lines)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _as_config(a):
    if isinstance(a, AttackConfig):
        return a
    if isinstance(a, str):
        return AttackConfig(method=a)
    return AttackConfig.from_dict(a)


def _resolve_source(name, src, models):
    """A source is a model or a list of member names/models (attacked as an ensemble)."""
    if isinstance(src, (list, tuple)):
        members = [models[m] if isinstance(m, str) else m for m in src]
        names = {m if isinstance(m, str) else getattr(m, "name_", "") for m in src}
        return ensemble_handle(members), names
    return src, {name}


def run_transfer_matrix(sources, attacks, targets, dataset_slice, seed=0, models=None, on_result=None):
    """Attack every source with every attack and evaluate on every target.

    ``sources``/``targets`` map names to fitted models (a source may be a list
    of member names or models, attacked as a uniform ensemble). ``attacks``
    maps display names to :class:`AttackConfig` (or a list of configs, named by
    ``cfg.name``). ``dataset_slice`` is ``(images, labels)``. Each source gets
    the seed ``derive_seed(seed, source)``, shared by all attacks on it so
    that attack variants are compared on identical random streams.
    ``on_result(source, attack, result, quantized)`` is called after each run.
    """
    if isinstance(attacks, (list, tuple)):
        attacks = {_as_config(a).name: _as_config(a) for a in attacks}
    attacks = {k: _as_config(v) for k, v in attacks.items()}
    X, y = dataset_slice
    X, y = as_float_tensor(X), np.asarray(y)
    models = {**(models or {}), **targets}
    clean_ok = {t: _predict(m, X) == y for t, m in targets.items()}
    cells, seeds, echo = [], {}, {}
    for s_name, src in sources.items():
        source, members = _resolve_source(s_name, src, models)
        cell_seed = derive_seed(seed, s_name)
        seeds[s_name] = cell_seed
        for a_name, cfg in attacks.items():
            cfg = replace(cfg, seed=cell_seed)
            echo[a_name] = {**cfg.to_dict(), "seed": None}
            result = run_attack(source, X, y, cfg)
            adv = quantized_adversarial(result).to(X.dtype)
            if on_result is not None:
                on_result(s_name, a_name, result, adv)
            failures = int(result.failed.sum())
            for t_name, target in targets.items():
                fooled = _predict(target, adv) != y
                ok = clean_ok[t_name]
                n, k = int(ok.sum()), int((fooled & ok).sum())
                cells.append(Cell(s_name, a_name, t_name, n, k, k / n if n else float("nan"),
                                  t_name in members, len(y), int(fooled.sum()),
                                  float(fooled.mean()) if len(y) else float("nan"), failures))
            logger.info("%s/%s done", s_name, a_name)
    meta = {
        "seed": seed,
        "source_seeds": seeds,
        "attacks": echo,
        "checkpoints": {n: getattr(m, "params_id_", None) for n, m in models.items()},
        "sources": {n: (list(s) if isinstance(s, (list, tuple)) else n) for n, s in sources.items()},
    }
    return TransferMatrix(cells, len(y), meta)


@dataclass
class SweepResult:
    axis: str
    points: List[tuple]  # (value, {"source->target": rate}, mean transfer rate)
    meta: dict = field(default_factory=dict)

    @property
    def values(self):
        return [p[0] for p in self.points]

    @property
    def means(self):
        return [p[2] for p in self.points]

    def mean_at(self, value):
        for v, _, m in self.points:
            if v == value:
                return m
        raise KeyError(value)

    def to_dict(self):
        return {"axis": self.axis, "points": [list(p) for p in self.points], "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls(d["axis"], [tuple(p) for p in d["points"]], d.get("meta", {}))

    def save(self, directory, stem=None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or f"sweep_{self.axis}"
        atomic_write_text(directory / f"{stem}.json", json.dumps(self.to_dict(), indent=2, default=_jsonable))
        return directory / f"{stem}.json"


def _check_increasing(axis, values, layer_order=None):
    keys = [layer_order.index(v) if layer_order else v for v in values]
    if any(b <= a for a, b in zip(keys, keys[1:])):
        raise ConfigError(f"{axis} sweep values must be strictly increasing: {values}")


def run_sweep(axis, values, fixed_cfg, sources, targets, dataset_slice, seed=0):
    """Mean transfer rate of one attack as one parameter varies, all else (seeds included) fixed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    fixed_cfg = _as_config(fixed_cfg)
    values = list(values)
    if not values:
        raise ConfigError("a sweep needs at least one value")
    layer_order = list(next(iter(sources.values())).taps_) if axis == "layer" else None
    _check_increasing(axis, values, layer_order)
    points = []
    for v in values:
        if axis == "drop_prob":
            cfg = replace(fixed_cfg, aggregation=replace(fixed_cfg.aggregation, drop_prob=float(v)))
        elif axis == "ensemble_number":
            cfg = replace(fixed_cfg, aggregation=replace(fixed_cfg.aggregation, ensemble_number=int(v)))
        else:
            cfg = replace(fixed_cfg, tap=v)
        m = run_transfer_matrix(sources, {"attack": cfg}, targets, dataset_slice, seed)
        rates = {f"{c.source}->{c.target}": c.rate for c in m.transfer_cells("attack")}
        points.append((v, rates, m.mean_transfer("attack")))
        logger.info("sweep %s=%s mean %.4f", axis, v, points[-1][2])
    meta = {"fixed_config": fixed_cfg.to_dict(), "seed": seed, "sources": list(sources), "targets": list(targets)}
    return SweepResult(axis, points, meta)


def sweep_figure(result):
    """Line plot of mean transfer rate against the swept values (x ticks = values)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    xs = list(range(len(result.values))) if result.axis == "layer" else result.values
    ax.plot(xs, [100 * m for m in result.means], marker="o")
    ax.set_xticks(xs)
    ax.set_xticklabels([str(v) for v in result.values])
    ax.set_xlabel(result.axis)
    ax.set_ylabel("mean transfer success (%)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def plot_sweep(result, path):
    import matplotlib.pyplot as plt

    fig = sweep_figure(result)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


ABLATION_VARIANTS = ("L1", "L2", "L3")


@dataclass(frozen=True)
class AblationSpec:
    variant: str

    def __post_init__(self):
        if self.variant not in ABLATION_VARIANTS:
            raise ConfigError(f"ablation variant must be one of {ABLATION_VARIANTS}")


def run_ablation(specs, sources, targets, dataset_slice, base_cfg=None, seed=0):
    """Transfer matrix of the ablation objectives with identical budget, T, tap and seeds."""
    if isinstance(specs, (AblationSpec, str)):
        specs = [specs]
    specs = [s if isinstance(s, AblationSpec) else AblationSpec(s) for s in specs]
    base = _as_config(base_cfg) if base_cfg is not None else AttackConfig(method="L3")
    attacks = {s.variant: replace(base, method=s.variant, random_start=None) for s in specs}
    return run_transfer_matrix(sources, attacks, targets, dataset_slice, seed)
