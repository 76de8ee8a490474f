"""Standalone budget check of exported adversarial images.

Reads a manifest and its image files back from disk and checks every
adversarial against its clean counterpart. Deliberately independent of the
attack code: it only needs the manifest layout, numpy and Pillow.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _read(path):
    from PIL import Image

    return np.asarray(Image.open(path), dtype=np.float64)


def verify_budget(manifest_path, epsilon=None):
    """Return a report dict; ``report["ok"]`` is True iff no image violates the budget or range."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    cfg = manifest["config_echo"]
    eps = float(cfg["epsilon"] if epsilon is None else epsilon)
    lo, hi = cfg["value_range"]
    violations, worst = [], 0.0
    for rec in manifest["images"]:
        adv = _read(manifest_path.parent / rec["adversarial"])
        clean = _read(manifest_path.parent / rec["clean"])
        dist = float(np.abs(adv - clean).max()) if adv.size else 0.0
        worst = max(worst, dist)
        if adv.shape != clean.shape or dist > eps or adv.min() < lo or adv.max() > hi:
            violations.append({"id": rec["id"], "linf": dist, "min": float(adv.min()), "max": float(adv.max())})
    return {"manifest": str(manifest_path), "n_images": len(manifest["images"]), "epsilon": eps,
            "max_linf": worst, "violations": violations, "ok": not violations}
