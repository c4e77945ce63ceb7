"""Atomic file writing and the structured-array export formats."""

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

CACHE_ENV = "PAIRPOINT_CACHE"


def cache_dir():
    """Directory for generated data, overridable through ``PAIRPOINT_CACHE``."""
    root = os.environ.get(CACHE_ENV)
    if root:
        return Path(root)
    return Path.home() / ".cache" / "pairpoint"


@contextmanager
def atomic_path(path, suffix=""):
    """Yield a temporary path next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=suffix or path.suffix, dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text):
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2, sort_keys=True))


def write_npz(path, **arrays):
    with atomic_path(path, suffix=".npz") as tmp:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)


def save_keypoints(path, positions, scores, descriptors):
    descriptors = np.asarray(descriptors, dtype=np.float32)
    if descriptors.ndim != 2:
        raise ValueError("descriptors must be a (K, d) array")
    write_npz(
        path,
        positions=np.asarray(positions, dtype=np.float32).reshape(-1, 2),
        scores=np.asarray(scores, dtype=np.float32).reshape(-1),
        descriptors=descriptors,
    )


def load_keypoints(path):
    with np.load(path) as data:
        return data["positions"], data["scores"], data["descriptors"]


def save_matches(path, pts_a, pts_b, inlier_mask, fundamental=None):
    f = np.full((3, 3), np.nan) if fundamental is None else np.asarray(fundamental, dtype=np.float64)
    write_npz(
        path,
        pts_a=np.asarray(pts_a, dtype=np.float32).reshape(-1, 2),
        pts_b=np.asarray(pts_b, dtype=np.float32).reshape(-1, 2),
        inlier_mask=np.asarray(inlier_mask, dtype=bool).reshape(-1),
        F=f,
    )


def load_matches(path):
    with np.load(path) as data:
        f = data["F"]
        return data["pts_a"], data["pts_b"], data["inlier_mask"], (None if np.isnan(f).all() else f)
