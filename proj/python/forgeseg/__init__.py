"""Python front end for the forgeseg core.

Images are H x W x C float32 arrays in [0, 1]; masks are H x W uint8 of 0/1.
Configs and reports are plain dicts.
"""

import json
import os

import numpy as np

from . import _core
from ._core import (
    CapabilityError,
    DependencyError,
    DimensionError,
    Error,
    IntegrityError,
    IoError,
    NumericalError,
    ValidationError,
    accuracy,
    binarize,
    composite,
    enlarge_box,
    iou,
    read_mask_png,
    read_png,
    seg_loss,
    synth_component_mask,
    total_loss,
)

__all__ = [
    "CapabilityError", "DependencyError", "DimensionError", "Error", "IntegrityError", "IoError",
    "NumericalError", "ValidationError", "accuracy", "binarize", "cam", "compare_runs", "composite",
    "det_loss", "enlarge_box", "evaluate", "iou", "load_config", "read_mask_png", "read_png",
    "resolve_config", "run_pipeline", "seg_loss", "synth_component_mask", "synthesize_corpus",
    "total_loss", "train",
]


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config)


def det_loss(p, y):
    return _core.det_loss(np.asarray(p, dtype=np.float64), np.asarray(y, dtype=np.int32))


def resolve_config(config=None):
    """Fill in defaults and validate; returns the full config dict."""
    return json.loads(_core.resolve_config(_dump(config or {})))


def load_config(path, use_env=True):
    return json.loads(_core.load_config(os.fspath(path), use_env))


def synthesize_corpus(data, seed, out_dir):
    """Writes a desk corpus under out_dir; returns the sample count."""
    return _core.synthesize_corpus(_dump(data), seed, os.fspath(out_dir))


def run_pipeline(config, stages="all", run_dir="run", checkpoint=None):
    ck = os.fspath(checkpoint) if checkpoint is not None else None
    return json.loads(_core.run_pipeline(_dump(config), stages, os.fspath(run_dir), ck))


def train(config, manifest, out_dir):
    return json.loads(_core.train(_dump(config), os.fspath(manifest), os.fspath(out_dir)))


def evaluate(checkpoint, manifest, split="auto", threshold_det=0.5, threshold_seg=0.5):
    return json.loads(
        _core.evaluate(os.fspath(checkpoint), os.fspath(manifest), split, threshold_det, threshold_seg))


def compare_runs(reports, labels):
    """Returns (text table, dict) for reports given as dicts or JSON strings."""
    text, table = _core.compare_runs([_dump(r) for r in reports], list(labels))
    return text, json.loads(table)


def cam(checkpoint, image):
    """Returns (H x W map in [0, 1], degenerate flag)."""
    return _core.cam(os.fspath(checkpoint), np.asarray(image, dtype=np.float32))
