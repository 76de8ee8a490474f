"""8-bit image export of attack results with a JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import quantize
from ..modelzoo.training import _atomic_write_bytes, atomic_write_text

MANIFEST = "manifest.json"


def _to_uint8_image(arr):
    from PIL import Image

    arr = np.asarray(arr)
    if arr.shape[0] == 1:
        return Image.fromarray(arr[0].astype(np.uint8), mode="L")
    return Image.fromarray(arr.transpose(1, 2, 0).astype(np.uint8), mode="RGB")


def _png_bytes(arr):
    import io

    buf = io.BytesIO()
    _to_uint8_image(arr).save(buf, format="PNG")
    return buf.getvalue()


def quantized_adversarial(result):
    """Adversarial batch rounded to integer pixels inside budget and range."""
    eps = result.config_echo["epsilon"]
    return quantize(result.adversarial, result.clean, eps, tuple(result.config_echo["value_range"]))


def export_result(result, directory, source_model, ids=None, success=None):
    """Write ``adv_<id>.png`` and ``clean_<id>.png`` files plus ``manifest.json``.

    Only the 8-bit range ``[0, 255]`` can be exported. ``success`` overrides
    the per-image success flags (e.g. re-evaluated on the quantized images).
    Returns the manifest path.
    """
    lo, hi = result.config_echo["value_range"]
    if lo < 0 or hi > 255:
        raise ValueError(f"value range {(lo, hi)} cannot be stored as 8-bit images")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    adv = quantized_adversarial(result).numpy()
    clean = np.round(result.clean.double().numpy())
    ids = list(range(len(adv))) if ids is None else [int(i) for i in ids]
    success = result.success_on_source if success is None else np.asarray(success)
    records = []
    for k, image_id in enumerate(ids):
        adv_name, clean_name = f"adv_{image_id:05d}.png", f"clean_{image_id:05d}.png"
        _atomic_write_bytes(directory / adv_name, _png_bytes(adv[k]))
        _atomic_write_bytes(directory / clean_name, _png_bytes(clean[k]))
        records.append({"id": image_id, "label": int(result.labels[k]), "adversarial": adv_name,
                        "clean": clean_name, "success": bool(success[k]), "failed": bool(result.failed[k])})
    manifest = {
        "config_echo": result.config_echo,
        "seed": result.config_echo["seed"],
        "source_model": source_model,
        "taps": list(result.taps),
        "images": records,
    }
    path = directory / MANIFEST
    atomic_write_text(path, json.dumps(manifest, indent=2))
    return path
