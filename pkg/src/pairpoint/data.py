"""Labelled image pairs.

Synthetic pairs come with exact ground truth: a homography for planar warps
or a fundamental matrix (plus pose and intrinsics) for rendered multi-plane
scenes. Real pairs are read from a whitespace-separated manifest. A
:class:`MixedLoader` draws from several sources at fixed fractions and mines
negatives by pairing images from different scenes.

Coordinates follow the keypoint convention: pixel ``(i, j)`` covers
``[j, j + 1) x [i, i + 1)`` so its centre is ``(j + 0.5, i + 0.5)``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from .errors import DecodeError, EmptyDataset, ManifestError, MissingImage
from .geometry import fundamental_from_pose, project

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
_CENTRE = np.array([[1.0, 0, 0.5], [0, 1.0, 0.5], [0, 0, 1.0]])
_CENTRE_INV = np.linalg.inv(_CENTRE)


@dataclass
class PairSample:
    image_a: np.ndarray  # (h, w, 3) uint8 RGB
    image_b: np.ndarray
    label: int
    truth: np.ndarray | None = None
    kind: str = "folder"  # homography | epipolar | folder
    scene_a: str = ""
    scene_b: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {self.label}")
        if self.truth is not None and self.label != 1:
            raise ValueError("ground truth is only defined for positive pairs")


def to_tensor(image, dtype=torch.float32):
    """uint8 HxWx3 RGB -> normalised (3, h, w) tensor."""
    x = (np.asarray(image, dtype=np.float64) / 255.0 - IMAGENET_MEAN) / IMAGENET_STD
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1))).to(dtype)


def batch_tensor(images, dtype=torch.float32):
    return torch.stack([to_tensor(im, dtype) for im in images])


# --------------------------------------------------------------------------
# Procedural textures
# --------------------------------------------------------------------------

def procedural_texture(seed, size=256):
    """Corner-rich RGB texture of random polygons, boxes, discs and strokes."""
    rng = np.random.default_rng(seed)
    h = w = int(size)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    base = rng.uniform(40, 215, 3)
    grad = rng.uniform(-60, 60, (2, 3))
    img = base + xx[..., None] * grad[0] + yy[..., None] * grad[1]
    img = np.clip(img, 0, 255).astype(np.uint8)
    n_shapes = int(rng.integers(30, 50) * (size / 256) ** 2) + 10
    for _ in range(n_shapes):
        color = tuple(int(c) for c in rng.integers(0, 256, 3))
        kind = rng.integers(0, 4)
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        r = rng.uniform(0.02, 0.12) * size
        if kind == 0:
            pts = np.array([[cx + r * np.cos(a), cy + r * np.sin(a)]
                            for a in np.sort(rng.uniform(0, 2 * np.pi, rng.integers(3, 6)))])
            cv2.fillPoly(img, [np.round(pts * 16).astype(np.int32)], color, cv2.LINE_AA, 4)
        elif kind == 1:
            rect = ((cx, cy), (r * rng.uniform(0.8, 2.0), r * rng.uniform(0.8, 2.0)), rng.uniform(0, 90))
            box = cv2.boxPoints(rect)
            cv2.fillPoly(img, [np.round(box * 16).astype(np.int32)], color, cv2.LINE_AA, 4)
        elif kind == 2:
            cv2.circle(img, (int(cx * 16), int(cy * 16)), int(r * 0.7 * 16), color, -1, cv2.LINE_AA, 4)
        else:
            ex, ey = cx + rng.uniform(-3, 3) * r, cy + rng.uniform(-3, 3) * r
            cv2.line(img, (int(cx * 16), int(cy * 16)), (int(ex * 16), int(ey * 16)), color,
                     int(rng.integers(1, 4)), cv2.LINE_AA, 4)
    return cv2.GaussianBlur(img, (0, 0), 0.6)


def _jitter(img, rng, amount):
    if amount <= 0:
        return img
    contrast = 1.0 + rng.uniform(-amount, amount)
    brightness = rng.uniform(-amount, amount) * 255
    return np.clip(img.astype(np.float64) * contrast + brightness, 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# Homography pairs
# --------------------------------------------------------------------------

def _overlap(h, size):
    w = hh = float(size)
    frame = np.array([[0, 0], [w, 0], [w, hh], [0, hh]], dtype=np.float64)
    back = project(np.linalg.inv(h), frame)
    if not np.isfinite(back).all():
        return 0.0
    area, _ = cv2.intersectConvexConvex(frame.astype(np.float32), back.astype(np.float32))
    return area / (w * hh)


def random_homography(rng, size, magnitude=0.15):
    """Homography of image-a coordinates onto image-b from random corner shifts."""
    s = float(size)
    corners = np.array([[0, 0], [s, 0], [s, s], [0, s]], dtype=np.float64)
    for _ in range(100):
        moved = corners + rng.uniform(-magnitude, magnitude, (4, 2)) * s
        hmat = cv2.getPerspectiveTransform(corners.astype(np.float32), moved.astype(np.float32))
        hmat = hmat / hmat[2, 2]
        if abs(np.linalg.det(hmat)) > 1e-3 and _overlap(hmat, size) >= 0.6:
            return hmat
    return np.eye(3)


def render_homography_pair(texture, hmat, size, margin=None, jitter=0.0, rng=None):
    """Crop ``image_a`` from the centre of ``texture`` and warp the texture into ``image_b``."""
    th, tw = texture.shape[:2]
    margin = (tw - size) // 2 if margin is None else margin
    image_a = texture[margin:margin + size, margin:margin + size].copy()
    shift = np.array([[1.0, 0, -margin], [0, 1.0, -margin], [0, 0, 1.0]])
    h_idx = _CENTRE_INV @ hmat @ _CENTRE
    image_b = cv2.warpPerspective(texture, h_idx @ shift, (size, size), flags=cv2.INTER_LINEAR,
                                  borderMode=cv2.BORDER_REFLECT)
    if jitter > 0:
        image_b = _jitter(image_b, rng or np.random.default_rng(0), jitter)
    return image_a, image_b


def synth_homography_pair(seed, size=128, warp=0.15, jitter=0.1, hmat=None):
    """Positive pair related by a known homography (``truth`` maps a -> b)."""
    rng = np.random.default_rng([int(seed), 1])
    margin = size // 2
    texture = procedural_texture(seed, size + 2 * margin)
    if hmat is None:
        hmat = random_homography(rng, size, warp) if warp > 0 else np.eye(3)
    hmat = np.asarray(hmat, dtype=np.float64)
    image_a, image_b = render_homography_pair(texture, hmat, size, margin, jitter, rng)
    return PairSample(image_a, image_b, 1, hmat, "homography", f"h{seed}", f"h{seed}")


# --------------------------------------------------------------------------
# Epipolar (rendered multi-plane) pairs
# --------------------------------------------------------------------------

@dataclass
class _Plane:
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half: tuple  # half extents along u, v (inf for unbounded)
    texture: np.ndarray
    texels_per_unit: float

    @property
    def normal(self):
        return np.cross(self.u, self.v)


def _rotation(rng, max_deg):
    from scipy.spatial.transform import Rotation

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * np.deg2rad(rng.uniform(-max_deg, max_deg))).as_matrix()


def _look_at(centre, target, rng):
    z = target - centre
    z /= np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0]) + rng.normal(scale=0.05, size=3)
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])  # world -> camera rotation


def _scene_planes(seed, rng):
    planes = []
    tex_size = 256
    r = _rotation(rng, 15)
    depth = rng.uniform(9, 12)
    planes.append(_Plane(np.array([0, 0, depth]), r[:, 0], r[:, 1], (np.inf, np.inf),
                         procedural_texture([seed, 0], tex_size), tex_size / 10.0))
    for i in range(int(rng.integers(2, 4))):
        r = _rotation(rng, 35)
        z = rng.uniform(4, 7)
        centre = np.array([rng.uniform(-0.3, 0.3) * z, rng.uniform(-0.3, 0.3) * z, z])
        half = (rng.uniform(0.8, 1.6), rng.uniform(0.8, 1.6))
        planes.append(_Plane(centre, r[:, 0], r[:, 1], half,
                             procedural_texture([seed, i + 1], tex_size), tex_size / (2 * max(half))))
    return planes


def _raycast(planes, k, r, centre, size):
    """Per-pixel (depth along ray, plane id, u, v); r maps world -> camera."""
    jj, ii = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5)
    pix = np.stack([jj, ii, np.ones_like(jj)], axis=-1)
    rays = pix @ np.linalg.inv(k).T @ r  # world directions (camera rays rotated by r^T)
    best_t = np.full((size, size), np.inf)
    best_id = np.full((size, size), -1)
    coords = np.zeros((len(planes), size, size, 2))
    for idx, pl in enumerate(planes):
        n = pl.normal
        denom = rays @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((pl.origin - centre) @ n) / denom
        pts = centre + t[..., None] * rays
        rel = pts - pl.origin
        u, v = rel @ pl.u, rel @ pl.v
        ok = (t > 1e-6) & (np.abs(u) <= pl.half[0]) & (np.abs(v) <= pl.half[1]) & np.isfinite(t)
        closer = ok & (t < best_t)
        best_t[closer] = t[closer]
        best_id[closer] = idx
        coords[idx, ..., 0], coords[idx, ..., 1] = u, v
    return best_t, best_id, coords, rays


def _shade(planes, best_id, coords):
    size = best_id.shape[0]
    out = np.zeros((size, size, 3), dtype=np.uint8)
    for idx, pl in enumerate(planes):
        sel = best_id == idx
        if not sel.any():
            continue
        th, tw = pl.texture.shape[:2]
        mx = (coords[idx, ..., 0] * pl.texels_per_unit + tw / 2 - 0.5).astype(np.float32)
        my = (coords[idx, ..., 1] * pl.texels_per_unit + th / 2 - 0.5).astype(np.float32)
        sampled = cv2.remap(pl.texture, mx, my, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)
        out[sel] = sampled[sel]
    return out


def synth_epipolar_pair(seed, size=128, baseline=0.6, rotation=None, translation=None, intrinsics=None,
                        n_points=400, jitter=0.1):
    """Two calibrated views of a random multi-plane textured scene.

    ``truth`` is F with x_b^T F x_a = 0; ``meta`` holds K, R, t (X_b = R X_a + t)
    and visible ground-truth correspondences ``points_a``/``points_b``.
    """
    if baseline <= 0:
        raise ValueError("baseline must be positive")
    rng = np.random.default_rng([int(seed), 2])
    k = np.array([[1.1 * size, 0, size / 2], [0, 1.1 * size, size / 2], [0, 0, 1.0]])
    if intrinsics is not None:
        k = np.asarray(intrinsics, dtype=np.float64)
    planes = _scene_planes(seed, rng)
    if rotation is None or translation is None:
        direction = np.array([rng.choice([-1, 1]), rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3)])
        centre_b = baseline * direction / np.linalg.norm(direction)
        target = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 7.0])
        r = _look_at(centre_b, target, rng)
        t = -r @ centre_b
    else:
        r = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        centre_b = -r.T @ t
    f = fundamental_from_pose(r, t, k)

    depth_a, id_a, coords_a, rays_a = _raycast(planes, k, np.eye(3), np.zeros(3), size)
    depth_b, id_b, coords_b, _ = _raycast(planes, k, r, centre_b, size)
    image_a = _shade(planes, id_a, coords_a)
    image_b = _jitter(_shade(planes, id_b, coords_b), rng, jitter)

    # visible correspondences: back-project random pixels of a, keep unoccluded ones in b
    pa = rng.uniform(0, size, (n_points * 3, 2))
    ii = np.clip(pa[:, 1].astype(int), 0, size - 1)
    jj = np.clip(pa[:, 0].astype(int), 0, size - 1)
    valid = id_a[ii, jj] >= 0
    ray = np.linalg.inv(k) @ np.vstack([pa.T, np.ones(len(pa))])
    pid = id_a[ii, jj]
    depth = np.full(len(pa), np.nan)
    for idx, pl in enumerate(planes):
        sel = valid & (pid == idx)
        n = pl.normal
        depth[sel] = (pl.origin @ n) / (ray[:, sel].T @ n)
    world = (ray * depth).T
    cam_b = world @ r.T + t
    proj = cam_b @ k.T
    with np.errstate(divide="ignore", invalid="ignore"):
        pb = proj[:, :2] / proj[:, 2:3]
    inside = valid & (cam_b[:, 2] > 0) & (pb >= 0).all(1) & (pb < size).all(1)
    bi = np.clip(np.nan_to_num(pb[:, 1]).astype(int), 0, size - 1)
    bj = np.clip(np.nan_to_num(pb[:, 0]).astype(int), 0, size - 1)
    dist_b = np.linalg.norm(world - centre_b, axis=1)
    ray_len_b = depth_b[bi, bj] * np.linalg.norm(
        (np.linalg.inv(k) @ np.vstack([bj + 0.5, bi + 0.5, np.ones(len(pa))])).T, axis=1)
    unoccluded = np.abs(dist_b - ray_len_b) < 0.05 * dist_b
    keep = np.flatnonzero(inside & unoccluded)[:n_points]
    meta = dict(K=k, R=r, t=t, points_a=pa[keep], points_b=pb[keep], points_3d=world[keep])
    return PairSample(image_a, image_b, 1, f, "epipolar", f"e{seed}", f"e{seed}", meta)


# --------------------------------------------------------------------------
# Folder pairs
# --------------------------------------------------------------------------

def preprocess(image, size):
    """Resize the longer side to ``size`` keeping aspect ratio, pad bottom/right with zeros."""
    h, w = image.shape[:2]
    scale = size / max(h, w)
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    interp = cv2.INTER_AREA if scale < 1 else cv2.INTER_LINEAR
    resized = cv2.resize(image, (nw, nh), interpolation=interp)
    if resized.ndim == 2:
        resized = resized[..., None]
    out = np.zeros((size, size, resized.shape[2]), dtype=np.uint8)
    out[:nh, :nw] = resized
    return out, scale


def load_image(path):
    path = Path(path)
    if not path.exists():
        raise MissingImage(path)
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DecodeError(path)
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


@dataclass
class ManifestEntry:
    path_a: str
    path_b: str
    label: int
    scene_a: str
    scene_b: str
    line_no: int


_LABELS = {"+1": 1, "1": 1, "-1": -1}


def parse_manifest(path):
    entries = []
    text = Path(path).read_text(encoding="utf-8")
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (3, 5):
            raise ManifestError(no, f"expected 3 or 5 fields, got {len(parts)}")
        if parts[2] not in _LABELS:
            raise ManifestError(no, f"unknown label token {parts[2]!r}")
        scene_a, scene_b = (parts[3], parts[4]) if len(parts) == 5 else (parts[0], parts[1])
        entries.append(ManifestEntry(parts[0], parts[1], _LABELS[parts[2]], scene_a, scene_b, no))
    return entries


def folder_pairs(root, manifest, size=128, shuffle=False, seed=0):
    """Lazily yield PairSamples listed in a pairs manifest."""
    root = Path(root)
    entries = parse_manifest(manifest)
    order = np.arange(len(entries))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(entries))
    for i in order:
        e = entries[i]
        a, _ = preprocess(load_image(root / e.path_a), size)
        b, _ = preprocess(load_image(root / e.path_b), size)
        yield PairSample(a, b, e.label, None, "folder", e.scene_a, e.scene_b, {"line": e.line_no})


# --------------------------------------------------------------------------
# Sources and mixing
# --------------------------------------------------------------------------

class SyntheticSource:
    """Infinite stream of synthetic scenes; ``kind`` is homography, epipolar or both."""

    def __init__(self, kind="homography", size=128, warp=0.15, baseline=0.6, jitter=0.1, epipolar_fraction=0.5):
        if kind not in ("homography", "epipolar", "both"):
            raise ValueError(f"unknown synthetic kind {kind!r}")
        self.kind, self.size, self.warp, self.baseline, self.jitter = kind, size, warp, baseline, jitter
        self.epipolar_fraction = epipolar_fraction

    def _make(self, seed, rng):
        kind = self.kind
        if kind == "both":
            kind = "epipolar" if rng.random() < self.epipolar_fraction else "homography"
        if kind == "homography":
            return synth_homography_pair(seed, self.size, self.warp, self.jitter)
        return synth_epipolar_pair(seed, self.size, self.baseline, jitter=self.jitter, n_points=0)

    def positive(self, rng):
        return self._make(int(rng.integers(2 ** 31)), rng)

    def negative(self, rng):
        s1 = int(rng.integers(2 ** 31))
        s2 = int(rng.integers(2 ** 31 - 1))
        s2 += s2 >= s1
        a = self._make(s1, rng)
        b = self._make(s2, rng)
        return PairSample(a.image_a, b.image_b, -1, None, "negative", a.scene_a, b.scene_b)


class FolderSource:
    """Positives from a manifest; negatives pair images of different scene ids."""

    def __init__(self, root, manifest, size=128):
        self.root = Path(root)
        self.size = size
        self.entries = parse_manifest(manifest)
        if not self.entries:
            raise EmptyDataset(f"manifest {manifest} lists no pairs")
        self.positives = [e for e in self.entries if e.label == 1]
        self.images = sorted({(e.path_a, e.scene_a) for e in self.entries}
                             | {(e.path_b, e.scene_b) for e in self.entries})
        self.scenes = {s for _, s in self.images}

    def _load(self, rel):
        return preprocess(load_image(self.root / rel), self.size)[0]

    def positive(self, rng):
        if not self.positives:
            raise EmptyDataset("no positive pairs in manifest")
        e = self.positives[int(rng.integers(len(self.positives)))]
        return PairSample(self._load(e.path_a), self._load(e.path_b), 1, None, "folder", e.scene_a, e.scene_b)

    def negative(self, rng):
        if len(self.scenes) < 2:
            raise EmptyDataset("negatives need at least two scene ids")
        while True:
            i, j = rng.integers(len(self.images), size=2)
            (pa, sa), (pb, sb) = self.images[i], self.images[j]
            if sa != sb:
                return PairSample(self._load(pa), self._load(pb), -1, None, "negative", sa, sb)


@dataclass
class MixSpec:
    sources: list  # [(name, fraction)]

    def __post_init__(self):
        self.sources = [(str(n), float(f)) for n, f in self.sources]
        if not self.sources:
            raise EmptyDataset("mix specification has no sources")
        fr = np.array([f for _, f in self.sources])
        if (fr < 0).any() or (fr > 1).any() or abs(fr.sum() - 1.0) > 1e-9:
            raise ValueError("mix fractions must lie in [0, 1] and sum to 1")

    @property
    def names(self):
        return [n for n, _ in self.sources]

    @property
    def cumulative(self):
        return np.cumsum([f for _, f in self.sources])


class MixedLoader:
    """Deterministic, index-addressable stream of labelled pairs.

    Sample ``i`` depends only on ``(seed, i)``, so ordering is independent of
    the number of prefetch workers.
    """

    def __init__(self, mix, sources, batch_size=4, seed=0, negative_fraction=0.3, workers=1):
        self.mix = mix if isinstance(mix, MixSpec) else MixSpec(list(mix.items()) if isinstance(mix, dict) else mix)
        missing = [n for n in self.mix.names if n not in sources]
        if missing:
            raise EmptyDataset(f"no source registered for {missing}")
        self.sources = sources
        self.batch_size = batch_size
        self.seed = seed
        self.negative_fraction = negative_fraction
        self.workers = workers

    def choose(self, index):
        """(source name, is_negative, rng) for sample ``index``."""
        rng = np.random.default_rng([self.seed, int(index)])
        k = int(np.searchsorted(self.mix.cumulative, rng.random(), side="right"))
        name = self.mix.names[min(k, len(self.mix.names) - 1)]
        negative = rng.random() < self.negative_fraction
        return name, negative, rng

    def sample(self, index):
        name, negative, rng = self.choose(index)
        src = self.sources[name]
        pair = src.negative(rng) if negative else src.positive(rng)
        pair.meta["source"] = name
        pair.meta["index"] = int(index)
        return pair

    def batch(self, number):
        idx = range(number * self.batch_size, (number + 1) * self.batch_size)
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(self.sample, idx))
        return [self.sample(i) for i in idx]

    def __iter__(self):
        n = 0
        while True:
            yield self.batch(n)
            n += 1


def mixed_loader(specs, sources, batch_size=4, seed=0, negative_fraction=0.3, workers=1):
    return iter(MixedLoader(specs, sources, batch_size, seed, negative_fraction, workers))


# --------------------------------------------------------------------------
# Synthetic dataset cache
# --------------------------------------------------------------------------

def _fmt_matrix(m):
    return " ".join(f"{v:.17g}" for v in np.asarray(m, dtype=np.float64).reshape(-1))


def write_synthetic_dataset(out_dir, kind="homography", n=20, size=128, seed=0):
    """Write images, ``pairs.txt`` (pairs manifest) and ``truth.txt`` (row-major 3x3 per pair)."""
    from .io import atomic_path, write_npz, write_text

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    pairs, truths = [], []
    for i in range(n):
        s = seed + i
        p = synth_homography_pair(s, size) if kind == "homography" else synth_epipolar_pair(s, size)
        names = (f"images/{i:05d}_a.png", f"images/{i:05d}_b.png")
        for name, img in zip(names, (p.image_a, p.image_b)):
            with atomic_path(out / name, suffix=".png") as tmp:
                cv2.imwrite(str(tmp), img[..., ::-1])
        pairs.append(f"{names[0]} {names[1]} +1 {p.scene_a} {p.scene_b}")
        truths.append(f"{names[0]} {names[1]} {kind} {_fmt_matrix(p.truth)}")
        if kind == "epipolar":
            write_npz(out / f"images/{i:05d}_meta.npz", **{k: np.asarray(v) for k, v in p.meta.items()})
    write_text(out / "pairs.txt", "\n".join(pairs) + "\n")
    write_text(out / "truth.txt", "\n".join(truths) + "\n")
    return out


def read_synthetic_dataset(root):
    """Load a dataset written by :func:`write_synthetic_dataset` without resizing."""
    root = Path(root)
    truth_file = root / "truth.txt"
    if not truth_file.exists():
        raise MissingImage(truth_file)
    samples = []
    for i, line in enumerate(truth_file.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        parts = line.split()
        path_a, path_b, kind = parts[:3]
        truth = np.array([float(v) for v in parts[3:12]]).reshape(3, 3)
        meta = {"index": i}
        meta_file = root / path_a.replace("_a.png", "_meta.npz")
        if meta_file.exists():
            with np.load(meta_file) as data:
                meta.update({k: data[k] for k in data.files})
        samples.append(PairSample(load_image(root / path_a), load_image(root / path_b), 1, truth, kind,
                                  meta=meta))
    return samples
