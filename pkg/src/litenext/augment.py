"""Paired strong/weak augmentation.

Images are float arrays shaped (3, H, W) in [0, 1]; masks are (H, W) binary.
Every geometric draw is captured in a :class:`Geometry` record so the exact
transform can be replayed on the mask (or on anything else).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

MAX_ANGLE = 15.0
CROP_SCALE = (0.7, 1.0)
CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)


@dataclass(frozen=True)
class Geometry:
    k90: int = 0
    hflip: bool = False
    vflip: bool = False
    angle: float = 0.0  # degrees, counter-clockwise about the centre
    crop: tuple[int, int, int, int] | None = None  # top, left, height, width

    @property
    def is_identity(self) -> bool:
        return self.k90 == 0 and not self.hflip and not self.vflip and self.angle == 0.0 and self.crop is None


def _sample_crop(h: int, w: int, rng: np.random.Generator) -> tuple[int, int, int, int]:
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(*CROP_SCALE)
        log_r = rng.uniform(math.log(CROP_RATIO[0]), math.log(CROP_RATIO[1]))
        ratio = math.exp(log_r)
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    return 0, 0, h, w  # ten degenerate draws in a row: keep the full frame


def sample_geometry(h: int, w: int, rng: np.random.Generator, crop: bool) -> Geometry:
    k90 = int(rng.integers(0, 4))
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    angle = float(rng.uniform(-MAX_ANGLE, MAX_ANGLE)) if rng.random() < 0.5 else 0.0
    box = None
    if crop and rng.random() < 0.5:
        box = _sample_crop(h, w, rng)
    return Geometry(k90, hflip, vflip, angle, box)


def _affine_coords(h: int, w: int, angle: float, crop) -> tuple[np.ndarray, np.ndarray]:
    """Source (row, col) for every output pixel of rotate-then-crop-and-resize."""
    top, left, ch, cw = crop if crop is not None else (0, 0, h, w)
    oy, ox = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    # output pixel -> position inside the (rotated) frame via the crop window
    y = top + (oy + 0.5) * ch / h - 0.5
    x = left + (ox + 0.5) * cw / w - 0.5
    if angle:
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        a = math.radians(angle)
        c, s = math.cos(a), math.sin(a)
        dy, dx = y - cy, x - cx
        # inverse rotation maps the rotated frame back to the source image
        x = cx + c * dx - s * dy
        y = cy + s * dx + c * dy
    return y, x


def _sample_bilinear(img: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    h, w = img.shape[-2:]
    y = np.clip(y, 0, h - 1)
    x = np.clip(x, 0, w - 1)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0).astype(img.dtype)
    fx = (x - x0).astype(img.dtype)
    top = img[..., y0, x0] * (1 - fx) + img[..., y0, x1] * fx
    bot = img[..., y1, x0] * (1 - fx) + img[..., y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _sample_nearest(img: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    h, w = img.shape[-2:]
    yi = np.clip(np.floor(y + 0.5).astype(np.intp), 0, h - 1)
    xi = np.clip(np.floor(x + 0.5).astype(np.intp), 0, w - 1)
    return img[..., yi, xi]


def apply_geometry(arr: np.ndarray, g: Geometry, nearest: bool = False) -> np.ndarray:
    """Apply ``g`` to a (..., H, W) array. Masks use nearest-neighbour sampling."""
    out = arr
    if g.k90:
        out = np.rot90(out, g.k90, axes=(-2, -1))
    if g.hflip:
        out = out[..., :, ::-1]
    if g.vflip:
        out = out[..., ::-1, :]
    if g.angle or g.crop is not None:
        h, w = out.shape[-2:]
        y, x = _affine_coords(h, w, g.angle, g.crop)
        out = _sample_nearest(out, y, x) if nearest else _sample_bilinear(out, y, x)
    return np.ascontiguousarray(out)


def apply_geometry_mask(mask: np.ndarray, g: Geometry) -> np.ndarray:
    return (apply_geometry(mask, g, nearest=True) > 0.5).astype(mask.dtype)


def _grayscale(img: np.ndarray) -> np.ndarray:
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def photometric(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Colour jitter, Gaussian blur and brightness/contrast shifts (image only)."""
    out = img.astype(np.float32, copy=True)
    if rng.random() < 0.8:  # colour jitter: brightness, contrast, saturation by factors in [0.8, 1.2]
        b, c, s = rng.uniform(0.8, 1.2, size=3)
        out = out * b
        out = (out - _grayscale(out).mean()) * c + _grayscale(out).mean()
        gray = _grayscale(out)[None]
        out = (out - gray) * s + gray
    if rng.random() < 0.5:
        sigma = rng.uniform(0.1, 1.5)
        out = gaussian_filter(out, sigma=(0, sigma, sigma), mode="reflect")
    if rng.random() < 0.5:  # brightness/contrast shift by up to +-0.2
        alpha = 1.0 + rng.uniform(-0.2, 0.2)
        beta = rng.uniform(-0.2, 0.2)
        out = out * alpha + beta
    return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass
class AugmentedPair:
    strong: np.ndarray
    weak: np.ndarray
    mask: np.ndarray  # aligned with ``strong``
    strong_geometry: Geometry
    weak_geometry: Geometry


def strong_augment(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, Geometry]:
    g = sample_geometry(image.shape[-2], image.shape[-1], rng, crop=True)
    img = apply_geometry(image, g)
    y = apply_geometry_mask(mask, g)
    return photometric(img, rng), y, g


def weak_augment(image: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, Geometry]:
    g = sample_geometry(image.shape[-2], image.shape[-1], rng, crop=False)
    return apply_geometry(image, g).astype(np.float32, copy=False), g


def make_pair(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> AugmentedPair:
    i_s, y_s, gs = strong_augment(image, mask, rng)
    i_w, gw = weak_augment(image, rng)
    return AugmentedPair(i_s, i_w, y_s, gs, gw)
