"""Command-line entry point.

Every subcommand reads one YAML experiment file (``--config``), applies flag
overrides (``--set section.key=value`` plus a few shortcuts), echoes the
effective configuration to ``<output_dir>/config.yaml`` and writes into::

    <output_dir>/checkpoints/   trained zoo + sidecars + manifest.json
    <output_dir>/adversarials/  <source>__<attack>/ PNGs + manifest.json
    <output_dir>/results/       transfer / sweep / ablation CSV and JSON
    <output_dir>/plots/         sweep curves, ablation bars, heatmaps

Failures exit non-zero and print a JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import FiaBenchError

logger = logging.getLogger("fiabench")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(FiaBenchError):
    pass


def _default_attacks():
    return [{"method": "FIA"}, {"method": "MIM"}, {"method": "NRDM"}]


@dataclass
class ExperimentConfig:
    """Everything a run needs; ``from_dict(to_dict())`` is the identity."""

    dataset: str = "mnist5k"
    output_dir: str = "runs/default"
    seed: int = 0
    n_images: int = 500
    epsilon: float = 16.0
    zoo: list = field(default_factory=list)  # empty: the built-in zoo
    sources: list = field(default_factory=lambda: ["vgg", "resnet", "wide"])
    targets: list = field(default_factory=lambda: ["vgg", "resnet", "wide", "allconv", "lenet"])
    ensembles: dict = field(default_factory=dict)  # name -> member names, usable as sources
    attacks: list = field(default_factory=_default_attacks)
    sweep: dict = field(default_factory=lambda: {"axis": "drop_prob", "values": [0.1, 0.2, 0.3, 0.4, 0.5],
                                                 "attack": {"method": "FIA"}})
    ablation: dict = field(default_factory=lambda: {"variants": ["L1", "L2", "L3"], "attack": {"method": "L3"}})
    visualize: dict = field(default_factory=lambda: {"model": "vgg", "index": 0, "tap": None,
                                                     "drop_prob": 0.3, "ensemble_number": 30})

    def to_dict(self):
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        return cls.from_dict(yaml.safe_load(path.read_text()) or {})

    # -- resolved pieces -----------------------------------------------------
    def attack_configs(self, attacks=None):
        from .attacks.config import AttackConfig

        out = {}
        for spec in self.attacks if attacks is None else attacks:
            spec = {"method": spec} if isinstance(spec, str) else dict(spec)
            spec.setdefault("epsilon", self.epsilon)
            name = spec.pop("name", None)
            cfg = AttackConfig.from_dict(spec)
            out[name or cfg.name] = cfg
        return out

    def zoo_members(self):
        from .modelzoo.training import DEFAULT_ZOO, member_from_dict

        return [member_from_dict(m) for m in self.zoo] if self.zoo else list(DEFAULT_ZOO)

    @property
    def dirs(self):
        root = Path(self.output_dir)
        return {k: root / k for k in ("checkpoints", "adversarials", "results", "plots")}


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def effective_config(args):
    data = ExperimentConfig.load(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    for key in ("dataset", "output_dir", "seed", "epsilon", "n_images"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(data, key, yaml.safe_load(raw))
    return ExperimentConfig.from_dict(data)


def _echo(cfg):
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    from .modelzoo.training import atomic_write_text

    atomic_write_text(root / "config.yaml", cfg.dump())


def _dataset(cfg):
    from .modelzoo.data import eval_slice, load_dataset

    try:
        ds = load_dataset(cfg.dataset)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    idx = eval_slice(ds, cfg.n_images, cfg.seed)
    return ds, idx


def _load_models(cfg, names):
    from .modelzoo.training import load_checkpoint

    ckpt = cfg.dirs["checkpoints"]
    missing = [n for n in names if not (ckpt / f"{n}.json").exists()]
    if missing:
        raise UsageError(f"missing checkpoints {missing} in {ckpt}; run `fiabench train-zoo` first")
    return {n: load_checkpoint(ckpt / f"{n}.json") for n in names}


def _sources(cfg, names=None):
    names = list(cfg.sources if names is None else names)
    plain = [n for n in names if n not in cfg.ensembles]
    members = sorted({m for n in names if n in cfg.ensembles for m in cfg.ensembles[n]})
    models = _load_models(cfg, sorted(set(plain) | set(members)))
    out = {n: (list(cfg.ensembles[n]) if n in cfg.ensembles else models[n]) for n in names}
    return out, models


# -- subcommands ---------------------------------------------------------------
def cmd_train_zoo(cfg, args):
    from .modelzoo.training import atomic_write_text, train_zoo

    ds, _ = _dataset(cfg)
    out = train_zoo(ds, cfg.dirs["checkpoints"], cfg.zoo_members(), force=args.force)
    report = {}
    for name, (model, status) in out.items():
        acc = getattr(model, "clean_accuracy_", None)
        report[name] = {"status": status, "clean_accuracy": acc}
        print(f"{name:12s} {status:8.8s} accuracy={acc if acc is None else round(acc, 4)}")
    atomic_write_text(cfg.dirs["checkpoints"] / "manifest.json", json.dumps(report, indent=2))
    failed = [n for n, r in report.items() if r["status"].startswith("failed")]
    if failed:
        raise FiaBenchError(f"models below their accuracy floor: {failed}")
    return report


def _attack_dir(cfg, source, attack):
    return cfg.dirs["adversarials"] / f"{source}__{attack}"


def cmd_attack(cfg, args):
    from .attacks.export import export_result
    from .harness import run_transfer_matrix

    ds, idx = _dataset(cfg)
    sources, models = _sources(cfg, args.source)
    attacks = cfg.attack_configs()
    if args.method:
        attacks = {k: v for k, v in attacks.items() if k in args.method}
    X, y = ds.x_test[idx], ds.y_test[idx]
    written = []

    def on_result(source, attack, result, quantized):
        from .harness import _predict

        success = _predict(models[source], quantized) != result.labels if source in models else None
        path = export_result(result, _attack_dir(cfg, source, attack), source, ids=idx, success=success)
        written.append(str(path))
        print(f"{source:12s} {attack:14s} source success {np.mean(success if success is not None else result.success_on_source):.3f} -> {path}")

    run_transfer_matrix(sources, attacks, {}, (X, y), cfg.seed, models=models, on_result=on_result)
    return written


def _read_manifest_images(path):
    from PIL import Image

    manifest = json.loads(Path(path).read_text())
    load = lambda f: np.asarray(Image.open(Path(path).parent / f), dtype=np.float32)
    adv = np.stack([load(r["adversarial"]) for r in manifest["images"]])
    clean = np.stack([load(r["clean"]) for r in manifest["images"]])
    if adv.ndim == 3:
        adv, clean = adv[:, None], clean[:, None]
    else:
        adv, clean = adv.transpose(0, 3, 1, 2), clean.transpose(0, 3, 1, 2)
    labels = np.array([r["label"] for r in manifest["images"]])
    return manifest, adv, clean, labels


def cmd_evaluate(cfg, args):
    from .harness import CSV_FIELDS, Cell, TransferMatrix, success_counts

    attacks = list(cfg.attack_configs())
    results_dir = cfg.dirs["results"]
    if not attacks:
        matrix = TransferMatrix([], cfg.n_images, {"config": cfg.to_dict()})
        matrix.save(results_dir, "transfer")
        print(",".join(CSV_FIELDS))
        return matrix
    manifests = {(s, a): _attack_dir(cfg, s, a) / "manifest.json" for s in cfg.sources for a in attacks}
    missing = [str(p) for p in manifests.values() if not p.exists()]
    if missing:
        raise UsageError(f"missing adversarial manifests {missing}; run `fiabench attack` first")
    targets = _load_models(cfg, cfg.targets)
    cells = []
    for (s, a), path in manifests.items():
        manifest, adv, clean, labels = _read_manifest_images(path)
        members = set(cfg.ensembles.get(s, [s]))
        failures = sum(r["failed"] for r in manifest["images"])
        for t, model in targets.items():
            n, k, n_all, k_all = success_counts(model, adv, clean, labels)
            cells.append(Cell(s, a, t, n, k, k / n if n else float("nan"), t in members,
                              n_all, k_all, k_all / n_all, failures))
    matrix = TransferMatrix(cells, len(labels), {"config": cfg.to_dict(),
                                                "checkpoints": {t: m.params_id_ for t, m in targets.items()}})
    matrix.save(results_dir, "transfer")
    for a in attacks:
        print(matrix.format_table(a))
        print(f"  mean transfer {matrix.mean_transfer(a):.4f}")
    return matrix


def cmd_sweep(cfg, args):
    from .harness import plot_sweep, run_sweep

    ds, idx = _dataset(cfg)
    sources, models = _sources(cfg)
    targets = _load_models(cfg, cfg.targets)
    spec = dict(cfg.sweep)
    (fixed,) = cfg.attack_configs([spec.get("attack", {"method": "FIA"})]).values()
    result = run_sweep(spec["axis"], spec["values"], fixed, sources, targets,
                       (ds.x_test[idx], ds.y_test[idx]), cfg.seed)
    result.save(cfg.dirs["results"])
    plot_sweep(result, cfg.dirs["plots"] / f"sweep_{result.axis}.png")
    for v, _, m in result.points:
        print(f"{result.axis}={v}: mean transfer {m:.4f}")
    return result


def cmd_ablate(cfg, args):
    from .harness import run_ablation
    from .plotting import save_bar

    ds, idx = _dataset(cfg)
    sources, models = _sources(cfg)
    targets = _load_models(cfg, cfg.targets)
    spec = dict(cfg.ablation)
    (base,) = cfg.attack_configs([spec.get("attack", {"method": "L3"})]).values()
    matrix = run_ablation(spec.get("variants", ["L1", "L2", "L3"]), sources, targets,
                          (ds.x_test[idx], ds.y_test[idx]), base, cfg.seed)
    matrix.save(cfg.dirs["results"], "ablation")
    variants = matrix.attacks
    save_bar(variants, [matrix.mean_transfer(v) for v in variants], cfg.dirs["plots"] / "ablation.png")
    for v in variants:
        print(f"{v}: mean transfer {matrix.mean_transfer(v):.4f}")
    return matrix


def cmd_visualize(cfg, args):
    import torch

    from .core import make_rng
    from .featimp import AggregationConfig, aggregate_gradient, importance_heatmap, l2_normalize, raw_gradient
    from .plotting import save_heatmap, save_montage

    spec = dict(cfg.visualize)
    ds, idx = _dataset(cfg)
    model = _load_models(cfg, [spec["model"]])[spec["model"]]
    tap = spec.get("tap") or model.default_tap_
    i = int(idx[int(spec.get("index", 0))])
    x = torch.as_tensor(ds.x_test[i:i + 1])
    label = torch.as_tensor(ds.y_test[i:i + 1])
    agg_cfg = AggregationConfig(spec.get("drop_prob", 0.3), spec.get("ensemble_number", 30), tap)
    feats = torch.as_tensor(model.features_at(x, tap))
    raw = l2_normalize(raw_gradient(model, x, label, tap))
    agg = aggregate_gradient(model, x, label, agg_cfg, make_rng(cfg.seed)).values
    heat_raw = importance_heatmap(raw, feats)[0]
    heat_agg = importance_heatmap(agg, feats)[0]
    plots = cfg.dirs["plots"]
    paths = [
        save_heatmap(heat_raw, plots / "heatmap_raw.png", "raw gradient"),
        save_heatmap(heat_agg, plots / "heatmap_aggregate.png", "aggregate gradient"),
        save_montage(feats[0].numpy(), plots / "features_montage.png"),
    ]
    np.savez(plots / "heatmaps.npz", raw=heat_raw, aggregate=heat_agg)
    for p in paths:
        print(p)
    return paths


def cmd_verify_budget(cfg, args):
    from .verify import verify_budget

    paths = [Path(p) for p in args.paths] or [cfg.dirs["adversarials"]]
    manifests = []
    for p in paths:
        if p.is_file():
            manifests.append(p)
        elif (p / "manifest.json").exists():
            manifests.append(p / "manifest.json")
        elif p.is_dir():
            manifests.extend(sorted(p.glob("*/manifest.json")))
    if not manifests:
        raise UsageError(f"no adversarial manifests under {[str(p) for p in paths]}; run `fiabench attack` first")
    reports = [verify_budget(m) for m in manifests]
    for r in reports:
        print(f"{'OK  ' if r['ok'] else 'FAIL'} {r['manifest']}: {r['n_images']} images, "
              f"max linf {r['max_linf']:g} <= {r['epsilon']:g}, violations {len(r['violations'])}")
    if not all(r["ok"] for r in reports):
        raise FiaBenchError("budget violations found")
    return reports


COMMANDS = {
    "train-zoo": cmd_train_zoo,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "visualize": cmd_visualize,
    "verify-budget": cmd_verify_budget,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fiabench", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment file")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--dataset", help="built-in id, .npz file or image directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--n-images", dest="n_images", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train-zoo":
            p.add_argument("--force", action="store_true", help="retrain even if checkpoints exist")
        if name == "attack":
            p.add_argument("--source", action="append", help="restrict to these sources")
            p.add_argument("--method", action="append", help="restrict to these attack names")
        if name == "verify-budget":
            p.add_argument("paths", nargs="*", help="manifest files or directories")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = effective_config(args)
        if args.command != "verify-budget":  # the checker only reads
            _echo(cfg)
        COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        _error_record(args.command, exc)
        return EXIT_USAGE
    except (FiaBenchError, ValueError, KeyError, FileNotFoundError) as exc:
        _error_record(args.command, exc)
        return EXIT_FAILURE
    return 0


def _error_record(command, exc):
    record = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
