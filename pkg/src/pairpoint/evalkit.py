"""Evaluation: AUC of error curves, homography corner error, relative pose
error, and benchmark harnesses over synthetic pairs with known geometry."""

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .data import batch_tensor, synth_epipolar_pair, synth_homography_pair
from .detector import top_k_inference
from .errors import DegenerateConfiguration, EmptyEvaluation, InsufficientCorrespondences, InvalidPose, NoConsensus
from .geometry import (RansacConfig, mutual_nearest_neighbors, project, ransac_fundamental,
                       ransac_homography)

BENCHMARKS = ("synthetic-homography", "synthetic-epipolar")
DEFAULT_THRESHOLDS = {"synthetic-homography": (1.0, 3.0, 5.0), "synthetic-epipolar": (5.0, 10.0, 20.0)}


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def auc(errors, thresholds):
    """Normalised area under the recall-vs-error step curve on [0, t] per threshold.

    Infinite errors never count as recalled.
    """
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if errors.size == 0:
        raise EmptyEvaluation("no errors to evaluate")
    if np.any(errors < 0) or np.isnan(errors).any():
        raise ValueError("errors must be non-negative")
    thresholds = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    n = len(errors)
    out = []
    for t in thresholds:
        # vertices of the cumulative-recall step curve on [0, t]
        level = np.count_nonzero(errors <= 0.0) / n
        xs, ys = [0.0], [level]
        for u in np.unique(errors[(errors > 0.0) & (errors < t)]):
            xs += [u, u]
            ys += [level, np.count_nonzero(errors <= u) / n]
            level = ys[-1]
        xs.append(t)
        ys.append(level)
        out.append(float(np.trapezoid(ys, xs) / t))
    return out


def homography_corner_error(h_est, h_true, size):
    """Mean distance between the four image corners mapped by both homographies."""
    w, h = (size, size) if np.isscalar(size) else size
    corners = np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float64)
    h_est = np.asarray(h_est, dtype=np.float64)
    if h_est.shape != (3, 3) or not np.isfinite(h_est).all():
        return math.inf
    if abs(np.linalg.det(h_est)) < 1e-12 * max(np.abs(h_est).max(), 1e-300) ** 3:
        return math.inf
    pe, pt = project(h_est, corners), project(h_true, corners)
    err = np.linalg.norm(pe - pt, axis=1).mean()
    return float(err) if np.isfinite(err) else math.inf


def angle_between(a, b, unsigned=False):
    """Angle in degrees between vectors; ``unsigned`` folds opposite directions together."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    ang = math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(a @ b)))
    return min(ang, 180.0 - ang) if unsigned else ang


def relative_pose_error(r_est, t_est, r_true, t_true):
    """max(rotation angle of R_est^T R_true, sign-free translation direction angle), degrees."""
    if np.linalg.norm(t_est) == 0 or np.linalg.norm(t_true) == 0:
        raise InvalidPose("translation must be nonzero")
    rel = np.asarray(r_est, dtype=np.float64).T @ np.asarray(r_true, dtype=np.float64)
    r_err = math.degrees(Rotation.from_matrix(rel).magnitude())
    t_err = angle_between(t_est, t_true, unsigned=True)
    return max(r_err, t_err)


def _triangulate(r, t, xa, xb):
    """Linear triangulation of normalised points for P_a = [I|0], P_b = [R|t]."""
    pa = np.hstack([np.eye(3), np.zeros((3, 1))])
    pb = np.hstack([r, t.reshape(3, 1)])
    a = np.stack([xa[:, 0:1] * pa[2] - pa[0], xa[:, 1:2] * pa[2] - pa[1],
                  xb[:, 0:1] * pb[2] - pb[0], xb[:, 1:2] * pb[2] - pb[1]], axis=1)
    _, _, vt = np.linalg.svd(a)
    x = vt[:, -1]
    return x[:, :3] / x[:, 3:4]


def recover_pose(e, xa, xb):
    """Choose the (R, t) decomposition of E with the most points in front of both cameras.

    ``xa``, ``xb`` are normalised (K^-1 applied) inhomogeneous coordinates.
    """
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    best, best_count = None, -1
    for r in (u @ w @ vt, u @ w.T @ vt):
        for t in (u[:, 2], -u[:, 2]):
            pts = _triangulate(r, t, xa, xb)
            front = (pts[:, 2] > 0) & ((pts @ r.T + t)[:, 2] > 0)
            if front.sum() > best_count:
                best, best_count = (r, t), int(front.sum())
    return best


# --------------------------------------------------------------------------
# Extractors
# --------------------------------------------------------------------------

@dataclass
class Features:
    positions: np.ndarray  # (K, 2)
    scores: np.ndarray  # (K,)
    descriptors: np.ndarray  # (K, d)

    def __len__(self):
        return len(self.positions)


class ModelExtractor:
    """Top-k strict 3x3 maxima of the heatmap, described by the hyper-column head."""

    name = "model"

    def __init__(self, model, checkpoint_hash=""):
        self.model = model.eval()
        self.checkpoint_hash = checkpoint_hash

    @torch.no_grad()
    def extract(self, image, k):
        dtype = next(self.model.parameters()).dtype
        hm, pyr = self.model(batch_tensor([image], dtype))
        det = top_k_inference(hm[0], k)
        desc = self.model.describe([f[0] for f in pyr], det.positions)
        return Features(det.positions.double().numpy(), det.scores.double().numpy(), desc.double().numpy())

    def extract_pair(self, sample, k):
        return self.extract(sample.image_a, k), self.extract(sample.image_b, k)


class RandomExtractor:
    """Uniform random keypoints with Gaussian random descriptors."""

    name = "random"
    checkpoint_hash = ""

    def __init__(self, seed=0, dim=128):
        self.seed, self.dim = seed, dim

    def extract_pair(self, sample, k):
        rng = np.random.default_rng([self.seed, sample.meta.get("index", 0)])
        out = []
        for img in (sample.image_a, sample.image_b):
            h, w = img.shape[:2]
            pos = rng.uniform([0, 0], [w, h], (k, 2))
            out.append(Features(pos, np.zeros(k), rng.normal(size=(k, self.dim))))
        return tuple(out)


class OracleExtractor:
    """Reads the ground truth and plants exact correspondences with shared descriptors."""

    name = "oracle"
    checkpoint_hash = ""

    def __init__(self, seed=0, dim=32):
        self.seed, self.dim = seed, dim

    def extract_pair(self, sample, k):
        rng = np.random.default_rng([self.seed, sample.meta.get("index", 0)])
        h, w = sample.image_a.shape[:2]
        if sample.kind == "homography":
            g = np.linspace(0.1, 0.9, 12)
            pa = np.stack(np.meshgrid(g * w, g * h), -1).reshape(-1, 2)
            pb = project(sample.truth, pa)
            keep = (pb >= 0).all(1) & (pb[:, 0] < w) & (pb[:, 1] < h)
            pa, pb = pa[keep], pb[keep]
        else:
            pa, pb = sample.meta["points_a"], sample.meta["points_b"]
        pa, pb = pa[:k], pb[:k]
        desc = rng.normal(size=(len(pa), self.dim))
        return Features(pa, np.ones(len(pa)), desc), Features(pb, np.ones(len(pb)), desc.copy())


# --------------------------------------------------------------------------
# Benchmarks
# --------------------------------------------------------------------------

def benchmark_pairs(benchmark, n_pairs=50, seed=1000, size=128):
    """Deterministic synthetic evaluation pairs."""
    out = []
    for i in range(n_pairs):
        s = seed + i
        if benchmark == "synthetic-homography":
            p = synth_homography_pair(s, size, warp=0.15, jitter=0.1)
        elif benchmark == "synthetic-epipolar":
            p = synth_epipolar_pair(s, size)
        else:
            raise ValueError(f"unknown benchmark {benchmark!r}")
        p.meta["index"] = i
        out.append(p)
    return out


def _score_pair(benchmark, sample, fa, fb, ransac_seed):
    match = mutual_nearest_neighbors(fa.descriptors, fb.descriptors)
    pa = fa.positions[match.pairs[:, 0]] if len(match) else np.zeros((0, 2))
    pb = fb.positions[match.pairs[:, 1]] if len(match) else np.zeros((0, 2))
    size = sample.image_a.shape[0]
    info = {"n_matches": len(match), "n_inliers": 0}
    inliers = np.zeros(len(match), dtype=bool)
    try:
        if benchmark == "synthetic-homography":
            hmat, inliers = ransac_homography(pa, pb, RansacConfig(threshold=3.0, seed=ransac_seed))
            err = homography_corner_error(hmat, sample.truth, (sample.image_a.shape[1], size))
        else:
            f, inliers = ransac_fundamental(pa, pb, RansacConfig(seed=ransac_seed).scaled(size))
            k = sample.meta["K"]
            e = k.T @ f @ k
            kinv = np.linalg.inv(k)
            xa = (np.c_[pa[inliers], np.ones(inliers.sum())] @ kinv.T)[:, :2]
            xb = (np.c_[pb[inliers], np.ones(inliers.sum())] @ kinv.T)[:, :2]
            r, t = recover_pose(e, xa, xb)
            err = relative_pose_error(r, t, sample.meta["R"], sample.meta["t"])
    except (InsufficientCorrespondences, NoConsensus, DegenerateConfiguration):
        err = math.inf
    info["n_inliers"] = int(np.sum(inliers))
    return float(err), info, (pa, pb, inliers)


def draw_matches(image_a, image_b, pts_a, pts_b, mask, path):
    """Side-by-side image with inliers in green and outliers in red."""
    from .io import atomic_path

    canvas = np.hstack([image_a, image_b])[..., ::-1].copy()
    off = image_a.shape[1]
    for (xa, ya), (xb, yb), ok in zip(pts_a, pts_b, mask):
        color = (0, 200, 0) if ok else (0, 0, 220)
        cv2.line(canvas, (int(xa), int(ya)), (int(xb) + off, int(yb)), color, 1, cv2.LINE_AA)
    with atomic_path(path, suffix=".png") as tmp:
        cv2.imwrite(str(tmp), canvas)


def run_benchmark(extractor, benchmark, k=1024, n_pairs=50, thresholds=None, seed=1000, size=128,
                  pairs=None, viz_dir=None):
    """Detect, match, robustly estimate and score every pair; returns a report dict."""
    if benchmark not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {benchmark!r}")
    thresholds = tuple(thresholds or DEFAULT_THRESHOLDS[benchmark])
    pairs = pairs if pairs is not None else benchmark_pairs(benchmark, n_pairs, seed, size)
    rows = []
    for i, sample in enumerate(pairs):
        sample.meta.setdefault("index", i)
        fa, fb = extractor.extract_pair(sample, k)
        err, info, (pa, pb, inl) = _score_pair(benchmark, sample, fa, fb, seed + i)
        rows.append({"index": i, "error": err, "n_kp_a": len(fa), "n_kp_b": len(fb), **info})
        if viz_dir is not None:
            draw_matches(sample.image_a, sample.image_b, pa, pb, inl, Path(viz_dir) / f"pair_{i:04d}.png")
    errors = [r["error"] for r in rows]
    aucs = auc(errors, thresholds)
    return {
        "benchmark": benchmark,
        "extractor": getattr(extractor, "name", type(extractor).__name__),
        "checkpoint_hash": getattr(extractor, "checkpoint_hash", ""),
        "config": {"k": k, "n_pairs": len(pairs), "seed": seed, "size": size, "thresholds": list(thresholds)},
        "thresholds": list(thresholds),
        "auc": aucs,
        "pairs": rows,
    }


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# Training-mode matching statistics
# --------------------------------------------------------------------------

@torch.no_grad()
def pair_statistics(model, pairs, cfg, seed=7):
    """Per pair: sampled-keypoint matching counts exactly as seen by the reward.

    Returns an array of (n_inlier, n_mutual, n_retained_total) rows.
    """
    from .trainer import batch_objectives, derive_seed

    dtype = next(model.parameters()).dtype
    rows = []
    for j, p in enumerate(pairs):
        (out,) = batch_objectives(model, batch_tensor([p.image_a, p.image_b], dtype), [p.label], cfg,
                                  [(derive_seed(seed, j, 0), derive_seed(seed, j, 1))], [derive_seed(seed, j, 2)])
        rows.append((out.n_inlier, out.n_mutual, sum(out.n_retained)))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)
