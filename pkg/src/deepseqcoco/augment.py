"""Training-time image augmentation and pixel rescaling.

The chain is horizontal flip -> rotation -> zoom, each a separate bilinear
resampling with half-sample reflect fill.  For every image the generator is
consumed in the fixed order: flip draw, angle draw, zoom draw.  All three
draws happen even when a factor is zero so streams stay aligned across
configurations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError, SpecError


@dataclass(frozen=True)
class AugmentConfig:
    flip_probability: float = 0.5
    rotation_factor: float = 0.2  # fraction of a full turn: 0.2 -> up to +-72 degrees
    zoom_factor: float = 0.2  # scale drawn from [1 - f, 1 + f]
    interpolation: str = "bilinear"
    fill: str = "reflect"
    vertical_flip: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.flip_probability <= 1:
            raise SpecError("flip_probability must lie in [0, 1]")
        if self.rotation_factor < 0 or self.zoom_factor < 0:
            raise SpecError("rotation and zoom factors must be >= 0")
        if self.zoom_factor >= 1:
            raise SpecError("zoom_factor must be < 1")
        if self.interpolation != "bilinear":
            raise SpecError(f"unsupported interpolation {self.interpolation!r}")
        if self.fill != "reflect":
            raise SpecError(f"unsupported fill {self.fill!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown augment keys: {sorted(unknown)}")
        return cls(**d)


def _reflect(coord: np.ndarray, size: int) -> np.ndarray:
    # Half-sample symmetric: ... c b a | a b c ... | c b a ...
    period = 2 * size
    c = np.mod(coord + 0.5, period)
    c = np.where(c >= size, period - c, c) - 0.5
    return np.clip(c, 0, size - 1)


def bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample an (H, W, C) image at float coordinates (pixel-centre convention).

    Out-of-range coordinates are reflected back into the image.
    """
    h, w = image.shape[:2]
    ys = _reflect(ys, h)
    xs = _reflect(xs, w)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    top = image[y0, x0] * (1 - wx) + image[y0, x1] * wx
    bottom = image[y1, x0] * (1 - wx) + image[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def _grid(h: int, w: int):
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return yy - (h - 1) / 2.0, xx - (w - 1) / 2.0


def flip_horizontal(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def rotate(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate an (H, W, C) image by ``angle`` radians about its centre; ``-angle`` undoes it."""
    h, w = image.shape[:2]
    dy, dx = _grid(h, w)
    cos, sin = np.cos(angle), np.sin(angle)
    # inverse map: output pixel -> source pixel
    src_x = cos * dx - sin * dy + (w - 1) / 2.0
    src_y = sin * dx + cos * dy + (h - 1) / 2.0
    return bilinear_sample(image.astype(np.float64), src_y, src_x)


def zoom(image: np.ndarray, scale: float) -> np.ndarray:
    """Scale content about the centre by ``scale`` (> 1 enlarges), keeping the frame size."""
    h, w = image.shape[:2]
    dy, dx = _grid(h, w)
    return bilinear_sample(image.astype(np.float64), dy / scale + (h - 1) / 2.0, dx / scale + (w - 1) / 2.0)


def augment_image(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    flip_draw = rng.random()
    angle = rng.uniform(-cfg.rotation_factor, cfg.rotation_factor) * 2 * np.pi
    scale = rng.uniform(1 - cfg.zoom_factor, 1 + cfg.zoom_factor)
    out = image
    if flip_draw < cfg.flip_probability:
        out = out[::-1] if cfg.vertical_flip else out[:, ::-1]
    if cfg.rotation_factor:
        out = rotate(out, angle)
    if cfg.zoom_factor:
        out = zoom(out, scale)
    return out


def augment_batch(batch: np.ndarray, cfg: AugmentConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Augment an (N, H, W, C) batch with values in [0, 255]; returns a new array."""
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ShapeError(f"augment_batch expects NHWC, got shape {batch.shape}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    out = np.empty_like(batch)
    for i in range(batch.shape[0]):
        out[i] = augment_image(batch[i], cfg, rng)
    return np.clip(out, 0, 255, out=out)


def rescale(batch):
    """Map pixel values from [0, 255] to [0, 1]."""
    return batch / 255.0
