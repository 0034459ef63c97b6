"""Datasets: IDX image/label files, stroke-noise corruption, aligned triplets,
multiview records and seeded splits."""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, DomainError, FormatError
from .rng import make_rng, SPLIT

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
KMVD_MAGIC = b"KMVD"


@dataclass(frozen=True)
class ImageSet:
    images: np.ndarray  # (N, H*W), values in [0, 1]
    height: int
    width: int
    labels: np.ndarray = None

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim != 2 or images.shape[1] != self.height * self.width:
            raise DimensionError(
                f"images of shape {images.shape} do not match {self.height}x{self.width}")
        if np.any((images < 0) | (images > 1)):
            raise DomainError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "images", images)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (images.shape[0],):
                raise DimensionError("one label per image is required")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.images.shape[0]

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return ImageSet(self.images[idx], self.height, self.width, labels)


@dataclass(frozen=True)
class TripletDataset:
    """Aligned records held column-wise: ``x`` inputs, ``y`` second view or
    clean target, ``z`` one-hot labels."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        arrays = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (self.x, self.y, self.z)]
        if len({a.shape[0] for a in arrays}) != 1:
            raise DomainError(f"misaligned record counts {[a.shape[0] for a in arrays]}")
        z = arrays[2]
        if z.size and (np.any((z != 0) & (z != 1)) or np.any(z.sum(axis=1) != 1)):
            raise DomainError("every label vector must be one-hot")
        for name, a in zip("xyz", arrays):
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.x.shape[0]

    @property
    def dims(self):
        return self.x.shape[1], self.y.shape[1], self.z.shape[1]

    @property
    def labels(self):
        return np.argmax(self.z, axis=1)

    @property
    def records(self):
        return list(zip(self.x, self.y, self.z))

    def subset(self, idx):
        return TripletDataset(self.x[idx], self.y[idx], self.z[idx])

    def as_dict(self):
        return {"x": self.x, "y": self.y, "z": self.z}


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# --- IDX -------------------------------------------------------------------------

def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw):
    """Decode IDX bytes into an :class:`ImageSet` (magic 0x803) or a label vector (0x801)."""
    if len(raw) < 4:
        raise FormatError("truncated IDX header", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise FormatError(f"bad IDX magic 0x{magic:08x}", 0)
    ndim = 3 if magic == IDX_IMAGES else 1
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX dimensions", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=object))
    if len(raw) < header + count:
        raise FormatError(f"IDX payload needs {count} bytes after the header", len(raw))
    if len(raw) > header + count:
        raise FormatError("trailing bytes after IDX payload", header + count)
    payload = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    if magic == IDX_LABELS:
        return payload.astype(np.int64)
    n, h, w = dims
    return ImageSet(payload.reshape(n, h * w) / 255.0, h, w)


def load_idx(path):
    return parse_idx(_read_bytes(path))


def encode_idx(data):
    """IDX bytes for an :class:`ImageSet` (pixels rounded to 8 bits) or a label vector."""
    if isinstance(data, ImageSet):
        pixels = np.rint(data.images * 255.0).astype(np.uint8)
        header = struct.pack(">I3I", IDX_IMAGES, len(data), data.height, data.width)
        return header + pixels.tobytes()
    labels = np.asarray(data)
    if labels.ndim != 1 or labels.size and (labels.min() < 0 or labels.max() > 255):
        raise DomainError("labels must be a vector of values in [0, 255]")
    return struct.pack(">II", IDX_LABELS, labels.shape[0]) + labels.astype(np.uint8).tobytes()


def write_idx(path, data):
    raw = encode_idx(data)
    path = Path(path)
    if path.suffix == ".gz":
        raw = gzip.compress(raw, mtime=0)
    path.write_bytes(raw)


def binarize(images, threshold=0.5):
    """Pixels at or above ``threshold`` become 1, the rest 0."""
    if not 0 < threshold < 1:
        raise DomainError("threshold must lie in (0, 1)")
    return ImageSet((images.images >= threshold).astype(np.float64),
                    images.height, images.width, images.labels)


# --- stroke noise ---------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    """Random thick polylines drawn over the central content box of an image.

    ``thickness_range`` is in pixels for a 28x28 image and scales with the
    smaller image side. ``coverage_range`` bounds the number of stroke pixels
    divided by the content-box area.
    """

    num_strokes: int = 2
    thickness_range: tuple = (3.0, 5.0)
    control_points: int = 3
    coverage_range: tuple = (0.3, 0.6)
    max_retries: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.coverage_range
        if not 0 < lo < hi <= 1:
            raise DomainError("coverage_range must satisfy 0 < lo < hi <= 1")
        tmin, tmax = self.thickness_range
        if not 0 < tmin <= tmax:
            raise DomainError("thickness_range must satisfy 0 < min <= max")
        if self.num_strokes < 0 or self.control_points < 2 or self.max_retries < 1:
            raise DomainError("invalid stroke counts")


# MNIST digits sit in a 20x20 box inside the 28x28 frame
CONTENT_FRACTION = 20.0 / 28.0


def content_box(height, width):
    bh = max(1, int(round(height * CONTENT_FRACTION)))
    bw = max(1, int(round(width * CONTENT_FRACTION)))
    top, left = (height - bh) // 2, (width - bw) // 2
    return top, left, bh, bw


def _segment_distance(rr, cc, p, q):
    d = q - p
    denom = float(d @ d)
    if denom == 0.0:
        return np.hypot(rr - p[0], cc - p[1])
    t = np.clip(((rr - p[0]) * d[0] + (cc - p[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(rr - (p[0] + t * d[0]), cc - (p[1] + t * d[1]))


def stroke_mask(height, width, cfg, rng):
    """Boolean (H, W) mask of ``cfg.num_strokes`` random thick polylines."""
    top, left, bh, bw = content_box(height, width)
    scale = min(height, width) / 28.0
    rr, cc = np.mgrid[0:height, 0:width].astype(np.float64)
    mask = np.zeros((height, width), dtype=bool)
    for _ in range(cfg.num_strokes):
        thickness = rng.uniform(*cfg.thickness_range) * scale
        pts = np.column_stack([
            rng.uniform(top, top + bh - 1, cfg.control_points),
            rng.uniform(left, left + bw - 1, cfg.control_points),
        ])
        for p, q in zip(pts[:-1], pts[1:]):
            mask |= _segment_distance(rr, cc, p, q) <= thickness / 2.0
    return mask


class StrokeNoise(NamedTuple):
    image: np.ndarray
    coverage: float
    ok: bool  # False when no attempt landed inside coverage_range


def add_stroke_noise(image, height, width, cfg, rng):
    """Set the pixels under random strokes to 1, retrying until the coverage fits.

    Coverage counts every stroke pixel, whether it flips a background pixel
    or lands on the foreground, relative to the content-box area.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (height * width,):
        raise DimensionError(f"image of shape {image.shape} is not {height}x{width}")
    if cfg.num_strokes == 0:
        return StrokeNoise(image.copy(), 0.0, True)
    _, _, bh, bw = content_box(height, width)
    lo, hi = cfg.coverage_range
    for _ in range(cfg.max_retries):
        mask = stroke_mask(height, width, cfg, rng).reshape(-1)
        coverage = mask.sum() / (bh * bw)
        if lo <= coverage <= hi:
            break
    noisy = image.copy()
    noisy[mask] = 1.0
    return StrokeNoise(noisy, float(coverage), bool(lo <= coverage <= hi))


def make_triplets(clean, cfg, copies_per_image, rng, num_classes=None):
    """``copies_per_image`` noisy variants of every clean image, as (noisy, clean, one-hot) records.

    ``num_classes`` defaults to one more than the largest label present.
    """
    if clean.labels is None:
        raise DomainError("make_triplets needs labelled images")
    if copies_per_image < 1:
        raise DomainError("copies_per_image must be positive")
    if num_classes is None:
        num_classes = int(clean.labels.max()) + 1 if len(clean) else 0
    xs, ys, labels = [], [], []
    for image, label in zip(clean.images, clean.labels):
        for _ in range(copies_per_image):
            xs.append(add_stroke_noise(image, clean.height, clean.width, cfg, rng).image)
            ys.append(image)
            labels.append(label)
    return TripletDataset(np.array(xs), np.array(ys), one_hot(labels, num_classes))


# --- multiview records ----------------------------------------------------------------

_KMVD_HEADER = struct.Struct("<4s4I")


def parse_multiview(raw):
    """Decode KMVD bytes: header then per record d_x doubles, d_view bytes, one class byte."""
    if len(raw) < _KMVD_HEADER.size:
        raise FormatError("truncated KMVD header", len(raw))
    magic, n, d_x, d_view, num_classes = _KMVD_HEADER.unpack_from(raw, 0)
    if magic != KMVD_MAGIC:
        raise FormatError(f"bad KMVD magic {magic!r}", 0)
    if num_classes < 1 or num_classes > 256:
        raise FormatError("class count must lie in [1, 256]", 16)
    rec = 8 * d_x + d_view + 1
    end = _KMVD_HEADER.size + n * rec
    if len(raw) < end:
        raise FormatError(f"KMVD body needs {n * rec} bytes", len(raw))
    if len(raw) > end:
        raise FormatError("trailing bytes after KMVD records", end)
    dtype = np.dtype([("x", "<f8", (d_x,)), ("view", "u1", (d_view,)), ("cls", "u1")])
    recs = np.frombuffer(raw, dtype=dtype, count=n, offset=_KMVD_HEADER.size)
    base = _KMVD_HEADER.size
    bad = np.flatnonzero(recs["cls"] >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"class byte {recs['cls'][i]} >= {num_classes}", base + i * rec + rec - 1)
    bad = np.argwhere(recs["view"] > 1)
    if bad.size:
        i, j = (int(t) for t in bad[0])
        raise FormatError("view byte outside {0, 1}", base + i * rec + 8 * d_x + j)
    x = recs["x"].reshape(n, d_x)
    bad = np.argwhere(~((x >= 0) & (x <= 1)))
    if bad.size:
        i, j = (int(t) for t in bad[0])
        raise FormatError("feature outside [0, 1]", base + i * rec + 8 * j)
    return TripletDataset(x.astype(np.float64), recs["view"].reshape(n, d_view).astype(np.float64),
                          one_hot(recs["cls"], num_classes))


def load_multiview(path):
    return parse_multiview(_read_bytes(path))


def encode_multiview(dataset):
    n = len(dataset)
    d_x, d_view, num_classes = dataset.dims
    dtype = np.dtype([("x", "<f8", (d_x,)), ("view", "u1", (d_view,)), ("cls", "u1")])
    recs = np.zeros(n, dtype=dtype)
    recs["x"] = dataset.x
    recs["view"] = dataset.y
    recs["cls"] = dataset.labels
    return _KMVD_HEADER.pack(KMVD_MAGIC, n, d_x, d_view, num_classes) + recs.tobytes()


def write_multiview(path, dataset):
    Path(path).write_bytes(encode_multiview(dataset))


@dataclass(frozen=True)
class MultiviewSynthConfig:
    """Planted multiview problem.

    Each record has a feature cluster and a camera. Cameras below
    ``round(ambiguity * d_view)`` rotate the class relative to the cluster,
    so with ``ambiguity=1`` neither input alone pins down the class while the
    pair always does. With ``ambiguity=0`` the cluster alone decides.
    """

    n: int = 1000
    d_x: int = 64
    d_view: int = 6
    num_classes: int = 3
    class_weights: tuple = (1295.0, 3354.0, 58.0)
    ambiguity: float = 1.0
    feature_noise: float = 0.1

    def __post_init__(self):
        if len(self.class_weights) != self.num_classes:
            raise DomainError("need one class weight per class")
        if not 0 <= self.ambiguity <= 1:
            raise DomainError("ambiguity must lie in [0, 1]")
        if not 0 <= self.feature_noise < 0.4:
            raise DomainError("feature_noise must lie in [0, 0.4)")
        if self.n < 1 or self.d_x < 1 or self.d_view < 1 or self.num_classes < 2:
            raise DomainError("sizes must be positive and num_classes >= 2")

    @property
    def class_prior(self):
        w = np.asarray(self.class_weights, dtype=np.float64)
        return w / w.sum()

    def shift(self, camera):
        """Class rotation applied by ``camera``."""
        if camera < int(round(self.ambiguity * self.d_view)):
            return camera % self.num_classes
        return 0


def synth_multiview(cfg, rng):
    k = cfg.num_classes
    # distinct random binary prototypes, one per cluster
    while True:
        protos = rng.integers(0, 2, size=(k, cfg.d_x))
        if len({p.tobytes() for p in protos}) == k:
            break
    labels = rng.choice(k, size=cfg.n, p=cfg.class_prior)
    cameras = rng.integers(0, cfg.d_view, size=cfg.n)
    shifts = np.array([cfg.shift(c) for c in cameras])
    clusters = (labels - shifts) % k
    noise = rng.uniform(-cfg.feature_noise, cfg.feature_noise, size=(cfg.n, cfg.d_x))
    x = np.clip(0.1 + 0.8 * protos[clusters] + noise, 0.0, 1.0)
    view = np.zeros((cfg.n, cfg.d_view))
    view[np.arange(cfg.n), cameras] = 1.0
    return TripletDataset(x, view, one_hot(labels, k))


def planted_bayes_errors(cfg):
    """Exact Bayes error of the planted rule from x alone, the view alone and both.

    Enumerates the generator's (class, camera) table. Features reveal the
    cluster exactly (prototypes differ and the bounded noise never crosses
    0.5), so "x alone" means "cluster alone".
    """
    k = cfg.num_classes
    prior = cfg.class_prior
    joint = {}  # (cluster, camera, class) -> probability
    for z in range(k):
        for cam in range(cfg.d_view):
            c = (z - cfg.shift(cam)) % k
            joint[(c, cam, z)] = joint.get((c, cam, z), 0.0) + prior[z] / cfg.d_view

    def bayes(key):
        best = {}
        for (c, cam, z), p in joint.items():
            obs = key(c, cam)
            best.setdefault(obs, np.zeros(k))[z] += p
        return 1.0 - sum(v.max() for v in best.values())

    return {
        "x": bayes(lambda c, cam: c),
        "view": bayes(lambda c, cam: cam),
        "both": bayes(lambda c, cam: (c, cam)),
        "majority": 1.0 - prior.max(),
    }


# --- splits -------------------------------------------------------------------------

def split(n, fractions=None, k_folds=None, seed=0):
    """Seeded shuffle of ``range(n)`` then a contiguous partition.

    With ``fractions`` every part but the last gets ``floor(f * n)`` indices
    and the last takes the remainder. With ``k_folds`` the first ``n % k``
    folds hold one extra index.
    """
    if not isinstance(n, (int, np.integer)):
        n = len(n)
    if (fractions is None) == (k_folds is None):
        raise DomainError("give exactly one of fractions or k_folds")
    order = make_rng(seed, SPLIT).permutation(n)
    if k_folds is not None:
        if k_folds < 2:
            raise DomainError("k_folds must be >= 2")
        if k_folds > n:
            raise DomainError(f"k_folds={k_folds} exceeds the {n} records")
        base, extra = divmod(n, k_folds)
        sizes = [base + (i < extra) for i in range(k_folds)]
    else:
        fractions = [float(f) for f in fractions]
        if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            raise DomainError("fractions must be non-negative and sum to 1")
        sizes = [int(np.floor(f * n + 1e-9)) for f in fractions[:-1]]
        sizes.append(n - sum(sizes))
    bounds = np.cumsum([0] + sizes)
    return [order[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
