"""File formats: ring catalogs and models as versioned JSON, PGM/PPM images, CSV.

See ``docs/FORMATS.md`` for the field-by-field grammar.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from ringcnn.catalog import get_ring
from ringcnn.fast import FastAlgorithm
from ringcnn.fixed import QFormatPlan
from ringcnn.model import LayerConfig, ModelGraph
from ringcnn.ring import RingSpec
from ringcnn.tensor import DirectionalReLU

CATALOG_FORMAT = "ringcnn-catalog"
MODEL_FORMAT = "ringcnn-model"
VERSION = 1


class FormatError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _header(d, kind):
    if d.get("format") != kind:
        raise FormatError(f"expected format {kind!r}, got {d.get('format')!r}")
    if d.get("version") != VERSION:
        raise FormatError(f"unsupported {kind} version {d.get('version')!r}")


# ---------------------------------------------------------------- rings

def ring_to_dict(spec: RingSpec) -> dict:
    d = {"name": spec.name, "n": spec.n, "m_tensor": spec.m_tensor.tolist(), "fast": None}
    if spec.fast is not None:
        d["fast"] = {k: getattr(spec.fast, k).tolist() for k in ("t_g", "t_x", "t_z")}
    return d


def ring_from_dict(d) -> RingSpec:
    fast = None if d.get("fast") is None else FastAlgorithm(**{k: np.array(v) for k, v in d["fast"].items()})
    spec = RingSpec(d["name"], np.array(d["m_tensor"]), fast)
    if spec.n != d["n"]:
        raise FormatError(f"ring {d['name']}: n={d['n']} but tensor is {spec.n}-dimensional")
    return spec


def dump_catalog(rings) -> str:
    return _dumps({"format": CATALOG_FORMAT, "version": VERSION, "rings": [ring_to_dict(r) for r in rings]})


def load_catalog(text: str) -> list[RingSpec]:
    d = json.loads(text)
    _header(d, CATALOG_FORMAT)
    return [ring_from_dict(r) for r in d["rings"]]


# ---------------------------------------------------------------- models

def model_to_dict(model: ModelGraph, plan: QFormatPlan | None = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "ring": model.ring.name if _is_catalog_ring(model.ring) else ring_to_dict(model.ring),
        "directional": None if model.directional is None else {
            "U": model.directional.U.tolist(), "V": model.directional.V.tolist()},
        "image_channels": model.image_channels,
        "skips": [list(s) for s in model.skips],
        "layers": [
            {
                "kind": l.kind,
                "c_in": l.c_in,
                "c_out": l.c_out,
                "nonlinearity": l.nonlinearity,
                "weights": l.weights.tolist(),
                "bias": l.bias.tolist(),
            }
            for l in model.layers
        ],
        "plan": None if plan is None else plan.to_dict(),
    }


def _is_catalog_ring(spec: RingSpec) -> bool:
    try:
        return get_ring(spec.name) is spec
    except KeyError:
        return False


def model_from_dict(d) -> tuple[ModelGraph, QFormatPlan | None]:
    _header(d, MODEL_FORMAT)
    ring = get_ring(d["ring"]) if isinstance(d["ring"], str) else ring_from_dict(d["ring"])
    direc = d.get("directional")
    if direc is not None:
        direc = DirectionalReLU(ring.n, np.array(direc["U"]), np.array(direc["V"]))
    layers = [
        LayerConfig(l["kind"], l["c_in"], l["c_out"], l["nonlinearity"], np.array(l["weights"]), np.array(l["bias"]))
        for l in d["layers"]
    ]
    model = ModelGraph(ring, layers, [tuple(s) for s in d["skips"]], direc, d.get("image_channels"))
    plan = None if d.get("plan") is None else QFormatPlan.from_dict(d["plan"])
    return model, plan


def dump_model(model: ModelGraph, plan: QFormatPlan | None = None) -> str:
    return _dumps(model_to_dict(model, plan))


def load_model(text: str):
    return model_from_dict(json.loads(text))


def save_model(path, model, plan=None):
    Path(path).write_text(dump_model(model, plan), encoding="utf-8")


def read_model(path):
    return load_model(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- images

def read_image(path) -> np.ndarray:
    """8-bit image as ``(H, W, C)`` uint8 with C in {1, 3}."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            raise FormatError(f"{path}: unsupported image mode {im.mode}")
        a = np.array(im)
    return a[:, :, None] if a.ndim == 2 else a


def write_image(path, pixels):
    a = np.asarray(pixels)
    if a.dtype != np.uint8 or a.ndim != 3 or a.shape[2] not in (1, 3):
        raise FormatError(f"image must be (H, W, 1|3) uint8, got {a.dtype} {a.shape}")
    im = Image.fromarray(a[:, :, 0] if a.shape[2] == 1 else a, "L" if a.shape[2] == 1 else "RGB")
    im.save(path, format="PPM")


def image_to_features(pixels, c_in: int, n: int) -> np.ndarray:
    """Scale to [0, 1] and zero-pad the image channels into ``c_in * n`` real channels."""
    h, w, c = pixels.shape
    if c > c_in * n:
        raise FormatError(f"image has {c} channels, model input holds {c_in * n}")
    real = np.zeros((h, w, c_in * n))
    real[:, :, :c] = pixels.astype(np.float64) / 255.0
    return real.reshape(h, w, c_in, n)


def features_to_image(x, channels: int) -> np.ndarray:
    real = np.asarray(x).reshape(x.shape[0], x.shape[1], -1)[:, :, :channels]
    return np.clip(np.floor(real * 255.0 + 0.5), 0, 255).astype(np.uint8)


def psnr_8bit(a, b) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(255.0 ** 2 / mse)


def format_psnr(v: float) -> str:
    return "inf" if v == float("inf") else f"{v:.4f}"


# ---------------------------------------------------------------- csv

def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
