"""Two-view geometry: mutual nearest neighbours, normalised eight-point,
Sampson residuals and RANSAC for fundamental matrices and homographies.

Pixel coordinates use a top-left origin with x to the right and y down.
All functions are pure given their inputs and an explicit seed.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateConfiguration, InsufficientCorrespondences, NoConsensus

REFERENCE_SIZE = 560
_RANK_TOL = 1e-9


@dataclass
class MatchResult:
    pairs: np.ndarray  # (K, 2) int64 index pairs into the two keypoint sets
    inlier_mask: np.ndarray  # (K,) bool
    fundamental: np.ndarray | None = None

    def __len__(self):
        return len(self.pairs)

    @property
    def inlier_pairs(self):
        return self.pairs[self.inlier_mask]

    @property
    def num_inliers(self):
        return int(self.inlier_mask.sum())


@dataclass
class Correspondences:
    pts_a: np.ndarray
    pts_b: np.ndarray

    def __post_init__(self):
        self.pts_a = np.asarray(self.pts_a, dtype=np.float64).reshape(-1, 2)
        self.pts_b = np.asarray(self.pts_b, dtype=np.float64).reshape(-1, 2)
        if len(self.pts_a) != len(self.pts_b):
            raise ValueError("correspondence arrays differ in length")
        if not (np.isfinite(self.pts_a).all() and np.isfinite(self.pts_b).all()):
            raise ValueError("non-finite correspondence coordinates")

    def __len__(self):
        return len(self.pts_a)


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 2.0  # px, compared against sqrt(Sampson)
    max_iters: int = 1000
    confidence: float = 0.99
    seed: int = 0
    batch: int = field(default=64, repr=False)

    def scaled(self, image_size, reference_size=REFERENCE_SIZE):
        """Copy with the threshold rescaled from ``reference_size`` px to ``image_size`` px."""
        return RansacConfig(self.threshold * image_size / reference_size, self.max_iters,
                            self.confidence, self.seed, self.batch)

    def with_seed(self, seed):
        return RansacConfig(self.threshold, self.max_iters, self.confidence, seed, self.batch)


def _as_points(pts_a, pts_b=None):
    if isinstance(pts_a, Correspondences):
        return pts_a.pts_a, pts_a.pts_b
    c = Correspondences(pts_a, pts_b)
    return c.pts_a, c.pts_b


# --------------------------------------------------------------------------
# Matching
# --------------------------------------------------------------------------

def mutual_nearest_neighbors(desc_a, desc_b):
    """Mutual nearest neighbours under L2 distance, ties broken by lowest index."""
    a = np.asarray(desc_a, dtype=np.float64)
    b = np.asarray(desc_b, dtype=np.float64)
    empty = MatchResult(np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=bool))
    if a.size == 0 or b.size == 0 or len(a) == 0 or len(b) == 0:
        return empty
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    dist = cdist(a, b)
    nn_ab = dist.argmin(axis=1)
    nn_ba = dist.argmin(axis=0)
    idx_a = np.arange(len(a))
    keep = nn_ba[nn_ab] == idx_a
    pairs = np.stack([idx_a[keep], nn_ab[keep]], axis=1).astype(np.int64)
    return MatchResult(pairs, np.ones(len(pairs), dtype=bool))


# --------------------------------------------------------------------------
# Fundamental matrix
# --------------------------------------------------------------------------

def canonical_fundamental(f):
    """Scale to unit Frobenius norm with the largest-magnitude entry positive."""
    f = np.asarray(f, dtype=np.float64)
    f = f / np.linalg.norm(f)
    if f.flat[np.argmax(np.abs(f))] < 0:
        f = -f
    return f


def _hartley(pts):
    # pts: (B, n, 2) -> normalised pts and (B, 3, 3) transforms
    centroid = pts.mean(axis=1, keepdims=True)
    centred = pts - centroid
    mean_dist = np.sqrt((centred ** 2).sum(axis=2)).mean(axis=1)
    scale = np.sqrt(2.0) / np.maximum(mean_dist, 1e-300)
    t = np.zeros((len(pts), 3, 3))
    t[:, 0, 0] = scale
    t[:, 1, 1] = scale
    t[:, 0, 2] = -scale * centroid[:, 0, 0]
    t[:, 1, 2] = -scale * centroid[:, 0, 1]
    t[:, 2, 2] = 1.0
    return centred * scale[:, None, None], t


def _eight_point_batch(pa, pb):
    """Normalised eight-point on a batch (B, n, 2). Returns (F, valid)."""
    na, ta = _hartley(pa)
    nb, tb = _hartley(pb)
    xa, ya = na[..., 0], na[..., 1]
    xb, yb = nb[..., 0], nb[..., 1]
    ones = np.ones_like(xa)
    design = np.stack([xb * xa, xb * ya, xb, yb * xa, yb * ya, yb, xa, ya, ones], axis=-1)
    _, s, vt = np.linalg.svd(design, full_matrices=True)
    # a well-posed problem has a one-dimensional null space: the 8th singular value must be nonzero
    valid = s[:, 7] > _RANK_TOL * s[:, 0]
    f = vt[:, -1].reshape(-1, 3, 3)
    u, sf, vft = np.linalg.svd(f)
    sf[:, 2] = 0.0
    f = u @ (sf[:, :, None] * vft)
    f = np.transpose(tb, (0, 2, 1)) @ f @ ta
    norms = np.linalg.norm(f.reshape(len(f), -1), axis=1)
    valid &= norms > 0
    f = f / np.where(norms > 0, norms, 1.0)[:, None, None]
    flat = f.reshape(len(f), -1)
    sign = np.sign(flat[np.arange(len(f)), np.abs(flat).argmax(axis=1)])
    f = f * np.where(sign == 0, 1.0, sign)[:, None, None]
    return f, valid


def eight_point(pts_a, pts_b=None):
    """Normalised eight-point estimate of F with x_b^T F x_a = 0."""
    pa, pb = _as_points(pts_a, pts_b)
    if len(pa) < 8:
        raise InsufficientCorrespondences(f"need at least 8 correspondences, got {len(pa)}")
    f, valid = _eight_point_batch(pa[None], pb[None])
    if not valid[0]:
        raise DegenerateConfiguration("design matrix is rank deficient")
    return f[0]


def _homogeneous(pts):
    return np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)


def sampson_distance(f, pts_a, pts_b=None):
    """Squared Sampson residual per correspondence (px^2); +inf where the gradient vanishes."""
    pa, pb = _as_points(pts_a, pts_b)
    return _sampson(np.asarray(f, dtype=np.float64)[None], pa, pb)[0]


def _sampson(fs, pa, pb):
    # fs: (B, 3, 3); pa, pb: (N, 2) -> (B, N)
    xa = _homogeneous(pa)
    xb = _homogeneous(pb)
    fx = np.einsum("bij,nj->bni", fs, xa)
    ftx = np.einsum("bji,nj->bni", fs, xb)
    err = np.einsum("ni,bni->bn", xb, fx)
    denom = fx[..., 0] ** 2 + fx[..., 1] ** 2 + ftx[..., 0] ** 2 + ftx[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = err ** 2 / denom
    out[denom == 0] = np.inf
    return out


def _required_iters(inlier_ratio, sample_size, confidence, max_iters):
    if inlier_ratio >= 1.0:
        return 1
    if inlier_ratio <= 0.0:
        return max_iters
    denom = np.log1p(-inlier_ratio ** sample_size)
    if denom == 0.0:
        return max_iters
    return int(min(max_iters, np.ceil(np.log(1.0 - confidence) / denom)))


def _random_samples(rng, n, size, count):
    return np.argsort(rng.random((count, n)), axis=1)[:, :size]


def _ransac(pa, pb, cfg, sample_size, fit_batch, residual, refit):
    n = len(pa)
    rng = np.random.default_rng(cfg.seed)
    thr = cfg.threshold ** 2
    best = None  # (count, mean_residual, model)
    iters, needed = 0, cfg.max_iters
    while iters < min(needed, cfg.max_iters):
        count = min(cfg.batch, cfg.max_iters - iters)
        idx = _random_samples(rng, n, sample_size, count)
        models, valid = fit_batch(pa[idx], pb[idx])
        iters += count
        if not valid.any():
            continue
        models = models[valid]
        res = residual(models, pa, pb)
        inl = res <= thr
        counts = inl.sum(axis=1)
        mean_res = np.where(counts > 0, np.where(inl, res, 0.0).sum(axis=1) / np.maximum(counts, 1), np.inf)
        # lexicographic: most inliers, then lowest mean residual, then earliest
        order = np.lexsort((np.arange(len(counts)), mean_res, -counts))
        k = order[0]
        cand = (int(counts[k]), float(mean_res[k]), models[k])
        if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
            best = cand
            needed = _required_iters(best[0] / n, sample_size, cfg.confidence, cfg.max_iters)
    if best is None or best[0] < sample_size:
        raise NoConsensus("no model reached the minimal inlier count")
    model = best[2]
    mask = residual(model[None], pa, pb)[0] <= thr
    try:
        refined = refit(pa[mask], pb[mask])
    except (DegenerateConfiguration, InsufficientCorrespondences):
        refined = None
    if refined is not None:
        rmask = residual(refined[None], pa, pb)[0] <= thr
        if rmask.sum() >= mask.sum():
            model, mask = refined, rmask
    return model, mask


def ransac_fundamental(pts_a, pts_b=None, cfg=None):
    """Robust F by eight-point RANSAC with Sampson residuals.

    Returns ``(F, inlier_mask)``; raises ``NoConsensus`` when no hypothesis
    collects eight inliers.
    """
    cfg = cfg or RansacConfig()
    pa, pb = _as_points(pts_a, pts_b)
    if len(pa) < 8:
        raise InsufficientCorrespondences(f"need at least 8 correspondences, got {len(pa)}")
    return _ransac(pa, pb, cfg, 8, _eight_point_batch, _sampson, eight_point)


def filter_matches(match, pts_a, pts_b, cfg=None):
    """Run RANSAC over matched keypoints and return a filled-in MatchResult.

    Fewer than eight matches or no consensus yield an all-false mask.
    """
    pairs = match.pairs
    if len(pairs) < 8:
        return MatchResult(pairs, np.zeros(len(pairs), dtype=bool), None)
    pa = np.asarray(pts_a, dtype=np.float64)[pairs[:, 0]]
    pb = np.asarray(pts_b, dtype=np.float64)[pairs[:, 1]]
    try:
        f, mask = ransac_fundamental(pa, pb, cfg=cfg)
    except (NoConsensus, DegenerateConfiguration):
        return MatchResult(pairs, np.zeros(len(pairs), dtype=bool), None)
    return MatchResult(pairs, mask, f)


def fundamental_from_pose(r, t, k_a, k_b=None):
    """F for cameras P_a = K_a[I|0], P_b = K_b[R|t]."""
    k_b = k_a if k_b is None else k_b
    t = np.asarray(t, dtype=np.float64).reshape(3)
    e = skew(t) @ np.asarray(r, dtype=np.float64)
    return np.linalg.inv(k_b).T @ e @ np.linalg.inv(k_a)


def skew(v):
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


# --------------------------------------------------------------------------
# Homography
# --------------------------------------------------------------------------

def _dlt_homography_batch(pa, pb):
    na, ta = _hartley(pa)
    nb, tb = _hartley(pb)
    x, y = na[..., 0], na[..., 1]
    u, v = nb[..., 0], nb[..., 1]
    z, o = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -o, z, z, z, u * x, u * y, u], axis=-1)
    r2 = np.stack([z, z, z, -x, -y, -o, v * x, v * y, v], axis=-1)
    design = np.concatenate([r1, r2], axis=1)
    _, s, vt = np.linalg.svd(design, full_matrices=True)
    valid = s[:, 7] > _RANK_TOL * s[:, 0]
    h = vt[:, -1].reshape(-1, 3, 3)
    h = np.linalg.inv(tb) @ h @ ta
    det = np.linalg.det(h)
    scale = h[:, 2, 2]
    valid &= np.abs(det) > 1e-12 * np.abs(h).max(axis=(1, 2)) ** 3
    h = h / np.where(np.abs(scale) > 1e-15, scale, 1.0)[:, None, None]
    return h, valid


def find_homography(pts_a, pts_b=None):
    """Normalised DLT homography mapping points of image a onto image b."""
    pa, pb = _as_points(pts_a, pts_b)
    if len(pa) < 4:
        raise InsufficientCorrespondences(f"need at least 4 correspondences, got {len(pa)}")
    h, valid = _dlt_homography_batch(pa[None], pb[None])
    if not valid[0]:
        raise DegenerateConfiguration("homography design matrix is rank deficient")
    return h[0]


def project(h, pts):
    """Apply a 3x3 homography to (N, 2) points."""
    p = _homogeneous(np.asarray(pts, dtype=np.float64)) @ np.asarray(h, dtype=np.float64).T
    with np.errstate(divide="ignore", invalid="ignore"):
        return p[:, :2] / p[:, 2:3]


def _transfer_residual(hs, pa, pb):
    xa = _homogeneous(pa)
    p = np.einsum("bij,nj->bni", hs, xa)
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = p[..., :2] / p[..., 2:3]
        res = ((proj - pb[None]) ** 2).sum(axis=-1)
    res[~np.isfinite(res)] = np.inf
    return res


def ransac_homography(pts_a, pts_b=None, cfg=None):
    """Four-point RANSAC with squared transfer error; returns ``(H, inlier_mask)``."""
    cfg = cfg or RansacConfig(threshold=3.0)
    pa, pb = _as_points(pts_a, pts_b)
    if len(pa) < 4:
        raise InsufficientCorrespondences(f"need at least 4 correspondences, got {len(pa)}")
    return _ransac(pa, pb, cfg, 4, _dlt_homography_batch, _transfer_residual, find_homography)
