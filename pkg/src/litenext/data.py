"""Dataset layout, synthetic blob generator, resizing and weight-mask export.

A dataset directory holds ``images/<stem>.png`` (RGB or grey) and
``masks/<stem>.png`` (8-bit grey, > 127 is foreground).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .functional import _interp_matrix

MASK_THRESHOLD = 127


@dataclass
class SampleRecord:
    id: str
    image: np.ndarray  # H x W x 3 in [0, 1]
    mask: np.ndarray  # H x W, values in {0, 1}


class DatasetError(ValueError):
    pass


def stems_in(folder: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(Path(folder).glob("*.png"))}


def _open(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc


def read_gray(path) -> np.ndarray:
    return np.asarray(_open(Path(path)).convert("L"), dtype=np.uint8)


def read_rgb(path) -> np.ndarray:
    return np.asarray(_open(Path(path)).convert("RGB"), dtype=np.uint8)


def write_png(path, arr: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG")


def resize_image(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Half-pixel bilinear resize of an H x W (x C) float image."""
    if img.shape[:2] == (h, w):
        return img.astype(np.float64)
    ah = _interp_matrix(img.shape[0], h, "<f8")
    aw = _interp_matrix(img.shape[1], w, "<f8")
    if img.ndim == 2:
        return ah @ img @ aw.T
    return np.einsum("oh,hwc,pw->opc", ah, img.astype(np.float64), aw)


def resize_nearest(img: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = np.minimum(((np.arange(h) + 0.5) * img.shape[0] / h).astype(np.intp), img.shape[0] - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * img.shape[1] / w).astype(np.intp), img.shape[1] - 1)
    return img[ys][:, xs]


def load_dataset(root, target_size: int | None = None) -> list[SampleRecord]:
    """Load every matched image/mask pair, sorted by stem."""
    root = Path(root)
    images, masks = stems_in(root / "images"), stems_in(root / "masks")
    missing = sorted(set(images) ^ set(masks))
    if missing:
        paths = [str(images.get(s) or masks.get(s)) for s in missing]
        raise DatasetError(f"files without a counterpart: {', '.join(paths)}")
    if not images:
        raise DatasetError(f"no image/mask pairs found under {root}")
    out = []
    for stem in sorted(images):
        img = read_rgb(images[stem]).astype(np.float64) / 255.0
        m = read_gray(masks[stem])
        if target_size is not None:
            img = resize_image(img, target_size, target_size)
            m = resize_nearest(m, target_size, target_size)
        mask = (m > MASK_THRESHOLD).astype(np.uint8)
        out.append(SampleRecord(stem, img.astype(np.float32), mask))
    return out


def split_records(records: list[SampleRecord], val_fraction: float, seed: int) -> tuple[list, list]:
    """Seeded train/validation split; both parts keep stem order."""
    n = len(records)
    n_val = int(round(n * val_fraction))
    if n_val < 1 or n_val >= n:
        raise DatasetError(f"cannot split {n} samples with val_fraction={val_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(perm[:n_val].tolist())
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val


# synthetic data ------------------------------------------------------------------------
@dataclass(frozen=True)
class Blob:
    cy: float
    cx: float
    ry: float
    rx: float
    angle: float

    def radial(self, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        """Normalised elliptical radius; <= 1 inside the blob."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        dy, dx = yy - self.cy, xx - self.cx
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return np.sqrt((u / self.rx) ** 2 + (v / self.ry) ** 2)


def _draw_blobs(size: int, rng: np.random.Generator, touching: bool) -> list[Blob]:
    n = int(rng.integers(2, 7))
    rmin, rmax = 0.07 * size, 0.16 * size
    blobs: list[Blob] = []
    for _ in range(200):
        if len(blobs) == n:
            break
        ry, rx = rng.uniform(rmin, rmax, size=2)
        r = max(ry, rx)
        if touching and blobs and len(blobs) % 2 == 1:
            # place next to the previous blob so the two touch or overlap
            prev = blobs[-1]
            theta = rng.uniform(0, 2 * math.pi)
            dist = (max(prev.ry, prev.rx) + r) * rng.uniform(0.6, 0.95)
            cy, cx = prev.cy + dist * math.sin(theta), prev.cx + dist * math.cos(theta)
            if not (r <= cy <= size - r and r <= cx <= size - r):
                continue
        else:
            cy, cx = rng.uniform(r, size - r, size=2)
            if any(math.hypot(cy - b.cy, cx - b.cx) < r + max(b.ry, b.rx) + 2 for b in blobs):
                continue
        blobs.append(Blob(float(cy), float(cx), float(ry), float(rx), float(rng.uniform(0, math.pi))))
    return blobs


def synth_sample(size: int, rng: np.random.Generator, touching: bool) -> tuple[np.ndarray, np.ndarray]:
    """One RGB uint8 image of soft-edged elliptical blobs and its exact mask."""
    yy, xx = np.meshgrid(np.arange(size) + 0.0, np.arange(size) + 0.0, indexing="ij")
    # low-frequency textured background
    bg = np.full((size, size), 0.25)
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 3.0, size=2) * 2 * math.pi / size
        bg += 0.06 * np.sin(fy * yy + fx * xx + rng.uniform(0, 2 * math.pi))
    tint_bg = rng.uniform(0.8, 1.2, size=3)
    tint_fg = rng.uniform(0.8, 1.2, size=3)
    mask = np.zeros((size, size), dtype=bool)
    fg = np.zeros((size, size))
    for b in _draw_blobs(size, rng, touching):
        r = b.radial(yy, xx)
        mask |= r <= 1.0
        edge = 1.0 / (1.0 + np.exp((r - 1.0) * 12.0))  # soft edge, 0.5 exactly on the boundary
        fg = np.maximum(fg, edge * rng.uniform(0.55, 0.8))
    img = bg[..., None] * tint_bg + fg[..., None] * tint_fg
    img += rng.normal(0.0, 0.04, size=img.shape)
    img8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return img8, mask


def synth_generate(out_dir, n: int, size: int, overlap_fraction: float = 0.3, seed: int = 0) -> list[str]:
    """Write ``n`` synthetic image/mask pairs; returns the stems written."""
    if size <= 0 or size % 16:
        raise ValueError(f"size must be a positive multiple of 16, got {size}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= overlap_fraction <= 1.0:
        raise ValueError(f"overlap_fraction must lie in [0, 1], got {overlap_fraction}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    n_touch = int(round(n * overlap_fraction))
    touching = np.zeros(n, dtype=bool)
    touching[rng.permutation(n)[:n_touch]] = True
    stems = []
    width = max(4, len(str(n - 1)))
    for i in range(n):
        while True:
            img, mask = synth_sample(size, rng, bool(touching[i]))
            if mask.any():
                break
        stem = f"synth_{i:0{width}d}"
        write_png(out_dir / "images" / f"{stem}.png", img)
        write_png(out_dir / "masks" / f"{stem}.png", mask.astype(np.uint8) * 255)
        stems.append(stem)
    return stems


# weight masks ---------------------------------------------------------------------------
def weight_levels(weights) -> np.ndarray:
    return np.floor(255.0 * np.asarray(weights, dtype=np.float64)).astype(np.uint8)


def export_weight_mask_image(wm: np.ndarray, path) -> None:
    """Save a weight mask as 8-bit grey with levels floor(255 * w)."""
    write_png(path, weight_levels(wm))
