"""Class-folder ingestion, image decoding, resizing, seeded splits and batching."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .augment import bilinear_sample
from .errors import DataError, DecodeError, SpecError

logger = logging.getLogger(__name__)

PNM_SUFFIXES = {".ppm", ".pgm", ".pnm"}
PILLOW_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}
IMAGE_SUFFIXES = PNM_SUFFIXES | PILLOW_SUFFIXES

# The five disease classes, as folder-safe names.
DISEASE_CLASSES = ("bud_root_dropping", "bud_rot", "gray_leaf_spot", "leaf_rot", "stem_bleeding")


@dataclass(frozen=True)
class LabeledSample:
    path: Path
    class_index: int
    class_name: str


def scan_dataset(root) -> tuple[list[LabeledSample], list[str]]:
    """Read ``<root>/<class_name>/<image>``; classes sorted, files sorted by path."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not classes:
        raise DataError(f"no class directories under {root}")
    samples = []
    for idx, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            logger.warning("class directory %s contains no images", root / name)
        samples.extend(LabeledSample(p, idx, name) for p in files)
    return samples, classes


def read_manifest(path) -> tuple[list[LabeledSample], list[str]]:
    """Read ``image_path<TAB>class_name`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'path<TAB>class'")
        img = Path(parts[0])
        rows.append((img if img.is_absolute() else path.parent / img, parts[1].strip()))
    classes = sorted({c for _, c in rows})
    if not classes:
        raise DataError(f"manifest {path} lists no samples")
    index = {c: i for i, c in enumerate(classes)}
    samples = sorted((LabeledSample(p, index[c], c) for p, c in rows), key=lambda s: (str(s.path), s.class_index))
    return samples, classes


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise SpecError("train_fraction must lie strictly between 0 and 1")

    def to_dict(self) -> dict:
        return asdict(self)


def train_size(n: int, fraction: float) -> int:
    """``ceil(fraction * n)`` computed on the decimal value of ``fraction``, kept in [1, n-1]."""
    k = math.ceil(Fraction(str(fraction)) * n)
    return min(max(k, 1), n - 1)


def split(samples: Sequence, cfg: SplitConfig) -> tuple[list, list]:
    n = len(samples)
    if n < 2:
        raise DataError(f"need at least 2 samples to split, got {n}")
    order = np.random.default_rng(cfg.seed).permutation(n) if cfg.shuffle else np.arange(n)
    k = train_size(n, cfg.train_fraction)
    return [samples[i] for i in order[:k]], [samples[i] for i in order[k:]]


# --- decoding ----------------------------------------------------------------

def _pnm_tokens(raw: bytes, count: int, path) -> tuple[list[int], int]:
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DecodeError(path, "malformed header")
        tokens.append(int(raw[start:pos]))
    # exactly one whitespace byte separates header and raster
    return tokens, pos + 1


def _decode_pnm(raw: bytes, path) -> np.ndarray:
    magic = raw[:2]
    if magic not in (b"P6", b"P5"):
        raise DecodeError(path, f"unsupported PNM variant {magic!r}")
    (width, height, maxval), offset = _pnm_tokens(raw, 3, path)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise DecodeError(path, "invalid header values")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = width * height * channels * dtype.itemsize
    body = raw[offset:offset + need]
    if len(body) < need:
        raise DecodeError(path, f"truncated raster: {len(body)} of {need} bytes")
    img = np.frombuffer(body, dtype=dtype).reshape(height, width, channels).astype(np.float32)
    if maxval != 255:
        img *= 255.0 / maxval
    return img


def decode_image(path) -> np.ndarray:
    """Decode to an (H, W, 3) float32 array in [0, 255].

    Binary PPM/PGM is built in; other formats go through Pillow.  Single
    channel sources are replicated to three channels.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DecodeError(path, exc.strerror or str(exc)) from None
    if raw[:1] == b"P" and raw[1:2] in (b"5", b"6"):
        img = _decode_pnm(raw, path)
    else:
        img = _decode_with_pillow(path)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def _decode_with_pillow(path: Path) -> np.ndarray:
    try:
        from PIL import Image, UnidentifiedImageError
    except ImportError:
        raise DecodeError(path, "format needs Pillow, which is not installed") from None
    try:
        with Image.open(path) as im:
            im = im.convert("L") if im.mode in ("L", "I", "F", "1") else im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(path, str(exc)) from None
    return arr[..., None] if arr.ndim == 2 else arr


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) array (rounded, clipped to 0..255) as binary P6."""
    img = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def resize(image: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize to ``target`` (H, W) with half-pixel centres; aspect ratio is not kept."""
    th, tw = target
    if th < 1 or tw < 1:
        raise SpecError(f"resize target must be >= 1x1, got {target}")
    h, w = image.shape[:2]
    if (h, w) == (th, tw):
        return np.array(image, dtype=np.float32)
    ys = np.clip((np.arange(th) + 0.5) * (h / th) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(tw) + 0.5) * (w / tw) - 0.5, 0, w - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(image.astype(np.float64), yy, xx).astype(np.float32)


# --- batching ----------------------------------------------------------------

@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 32
    drop_last: bool = False
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise SpecError("batch_size must be >= 1")


class ImageSet:
    """Samples plus a decode cache; images are resized to ``image_size`` on first load.

    ``reads`` counts file decodes, so a fully cached epoch leaves it unchanged.
    """

    def __init__(self, samples: Sequence[LabeledSample], image_size: tuple[int, int], cache: bool = True):
        self.samples = list(samples)
        self.image_size = tuple(image_size)
        self.cache_enabled = cache
        self._cache: dict[int, np.ndarray] = {}
        self.reads = 0

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.class_index for s in self.samples], dtype=np.int64)

    def image(self, i: int) -> np.ndarray:
        cached = self._cache.get(i)
        if cached is not None:
            return cached
        self.reads += 1
        img = resize(decode_image(self.samples[i].path), self.image_size)
        if self.cache_enabled:
            self._cache[i] = img
        return img


def batch_order(n: int, plan: BatchPlan, epoch: int) -> np.ndarray:
    if not plan.shuffle:
        return np.arange(n)
    return np.random.default_rng([plan.seed, epoch]).permutation(n)


def batches(dataset: ImageSet, plan: BatchPlan, epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images (N, H, W, 3) float32 in [0, 255], labels int64)`` for one epoch."""
    order = batch_order(len(dataset), plan, epoch)
    labels = dataset.labels
    for start in range(0, len(order), plan.batch_size):
        idx = order[start:start + plan.batch_size]
        if plan.drop_last and len(idx) < plan.batch_size:
            break
        yield np.stack([dataset.image(i) for i in idx]), labels[idx]


# --- synthetic corpus ----------------------------------------------------------

_PALETTE = np.array([
    [200, 60, 50],
    [60, 180, 70],
    [60, 80, 210],
    [210, 200, 60],
    [170, 70, 190],
], dtype=np.float64)


def synthetic_image(class_index: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """A textured image whose dominant colour identifies its class."""
    base = _PALETTE[class_index % len(_PALETTE)] + rng.uniform(-20, 20, size=3)
    yy, xx = np.mgrid[0:size, 0:size] / size
    fy, fx, phase = rng.uniform(1, 4), rng.uniform(1, 4), rng.uniform(0, 2 * np.pi)
    texture = 25 * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    img = base + texture[..., None] + rng.normal(0, 8, size=(size, size, 3))
    return np.clip(img, 0, 255)


def make_synthetic_dataset(root, num_images: int = 500, num_classes: int = 5, size: int = 64,
                           seed: int = 0, class_names: Optional[Sequence[str]] = None) -> list[str]:
    """Write a separable toy corpus as PPM files in class folders; returns the class names."""
    root = Path(root)
    names = list(class_names or (DISEASE_CLASSES if num_classes == 5 else
                                 [f"class_{k}" for k in range(num_classes)]))
    rng = np.random.default_rng(seed)
    for name in names:
        (root / name).mkdir(parents=True, exist_ok=True)
    for i in range(num_images):
        k = i % num_classes
        write_ppm(root / names[k] / f"img_{i:05d}.ppm", synthetic_image(k, size, rng))
    return sorted(names)
