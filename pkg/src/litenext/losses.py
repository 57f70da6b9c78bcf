"""Segmentation losses: marginal weight loss, soft dice, cosine embedding loss,
and the cross-entropy baselines used for loss ablations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from . import kernels
from .tensor import ShapeError, Tensor, clip, log, maximum, sqrt

PROB_EPS = 1e-7
DICE_SMOOTH = 1.0
BASELINE_KINDS = ("bce", "wbce", "bbce", "focal")


@dataclass(frozen=True)
class MwlConfig:
    w_b: float = 0.1
    w_o: float = 0.3
    w_m: float = 0.6
    k: int = 9

    def validate(self, tol: float = 1e-9) -> "MwlConfig":
        if not self.w_m > self.w_o > self.w_b:
            raise ValueError(f"weights must satisfy w_m > w_o > w_b, got w_m={self.w_m}, w_o={self.w_o}, w_b={self.w_b}")
        total = self.w_m + self.w_o + self.w_b
        if abs(total - 1.0) > tol:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size k must be a positive odd integer, got {self.k}")
        return self


@dataclass(frozen=True)
class LossConfig:
    serp_eps: float = 1e-8
    wbce_beta: float = 2.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    mask_loss: str = "mwl"  # or one of BASELINE_KINDS

    def __post_init__(self):
        if self.mask_loss != "mwl" and self.mask_loss not in BASELINE_KINDS:
            raise ValueError(f"unknown mask loss {self.mask_loss!r}; expected 'mwl' or one of {BASELINE_KINDS}")


def erode_dilate(s: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Erosion and dilation of a binary map through constant-kernel convolutions.

    The erosion kernel is filled with 1/k^2 and floored after a +1e-2 nudge; the
    dilation kernel is filled with k^2 and clipped to [0, 1]. With zero padding
    this equals all-ones / any-one window morphology for k <= 9. For k >= 11 the
    nudge exceeds 1/k^2 and windows with a single zero also floor to 1.
    """
    s = np.asarray(s, dtype=np.float64)
    s_e = np.floor(kernels.box_filter(s, k, 1.0 / (k * k)) + 1e-2)
    s_d = np.clip(kernels.box_filter(s, k, float(k * k)), 0.0, 1.0)
    return s_e, s_d


def _check_binary(s: np.ndarray) -> None:
    bad = np.argwhere((s != 0) & (s != 1))
    if bad.size:
        coords = ", ".join(str(tuple(int(v) for v in c)) for c in bad[:10])
        more = f" (+{len(bad) - 10} more)" if len(bad) > 10 else ""
        raise ValueError(f"mask is not binary at {coords}{more}")


def build_weight_mask(s: np.ndarray, cfg: MwlConfig = MwlConfig()) -> np.ndarray:
    """Per-pixel loss weights: w_m on the margin band, w_o inside, w_b outside."""
    s = np.asarray(s)
    if s.ndim != 2:
        raise ShapeError(f"build_weight_mask: expected an H x W mask, got shape {s.shape}")
    _check_binary(s)
    s_e, s_d = erode_dilate(s, cfg.k)
    return cfg.w_m * (s_d - s_e) + cfg.w_o * s_e + cfg.w_b * (1.0 - s_d)


def _match(a: Tensor, b, op: str) -> None:
    if tuple(a.shape) != tuple(np.shape(b)):
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {np.shape(b)}")


def _per_sample_mean(t: Tensor) -> Tensor:
    """Mean over every axis but the first when the input is batched, else full mean."""
    if t.ndim <= 2:
        return t.mean()
    return t.mean(axis=tuple(range(1, t.ndim))).mean()


def _weighted_bce(probs: Tensor, y: np.ndarray, w_pos, w_neg) -> Tensor:
    p = clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=probs.dtype)
    ce = (log(p) * (w_pos * y) + log(1.0 - p) * (w_neg * (1.0 - y))) * -1.0
    return _per_sample_mean(ce)


def mwl_loss(probs: Tensor, y, wm) -> Tensor:
    """Weighted binary cross-entropy normalised by pixel count (and averaged over the batch)."""
    _match(probs, y, "mwl_loss")
    _match(probs, wm, "mwl_loss")
    wm = np.asarray(wm, dtype=probs.dtype)
    return _weighted_bce(probs, y, wm, wm)


def dice_loss(probs: Tensor, y) -> Tensor:
    _match(probs, y, "dice_loss")
    y = np.asarray(y, dtype=probs.dtype)
    axes = tuple(range(1, probs.ndim)) if probs.ndim > 2 else None
    inter = (probs * y).sum(axis=axes)
    denom = probs.sum(axis=axes) + y.sum(axis=axes)
    score = (inter * 2.0 + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return (1.0 - score).mean()


def serp_loss(e_m: Tensor, e_t, eps: float = 1e-8) -> Tensor:
    """1 - cosine similarity; ``e_t`` is treated as a constant target."""
    e_t = e_t.data if isinstance(e_t, Tensor) else np.asarray(e_t)
    if e_m.shape[-1] != e_t.shape[-1]:
        raise ShapeError(f"serp_loss: embedding lengths differ, {e_m.shape[-1]} vs {e_t.shape[-1]}")
    e_t = e_t.astype(e_m.dtype, copy=False)
    dot = (e_m * e_t).sum(axis=-1)
    norm_m = sqrt((e_m * e_m).sum(axis=-1))
    norm_t = np.sqrt((e_t * e_t).sum(axis=-1))
    cos = dot / maximum(norm_m * norm_t, eps)
    return (1.0 - cos).mean()


def total_loss(e_m, e_t, logits: Tensor, y, wm, cfg: LossConfig = LossConfig()) -> tuple[Tensor, dict[str, Tensor]]:
    """Unweighted sum of the SeRP, mask and dice terms.

    The mask term is MWL unless ``cfg.mask_loss`` names a baseline (then ``wm``
    is ignored); it is reported under the key ``"mwl"`` either way.
    ``e_m``/``e_t`` may be None to drop the SeRP term (single-branch training).
    """
    probs = F.sigmoid(logits)
    if cfg.mask_loss == "mwl":
        mask_term = mwl_loss(probs, y, wm)
    else:
        mask_term = baseline_loss(cfg.mask_loss, probs, y, cfg)
    parts = {"mwl": mask_term, "dice": dice_loss(probs, y)}
    if e_m is not None:
        parts["serp"] = serp_loss(e_m, e_t, cfg.serp_eps)
        total = parts["serp"] + parts["mwl"] + parts["dice"]
    else:
        total = parts["mwl"] + parts["dice"]
    return total, parts


def baseline_loss(kind: str, probs: Tensor, y, cfg: LossConfig = LossConfig()) -> Tensor:
    _match(probs, y, "baseline_loss")
    y = np.asarray(y, dtype=probs.dtype)
    if kind == "bce":
        return _weighted_bce(probs, y, 1.0, 1.0)
    if kind == "wbce":
        return _weighted_bce(probs, y, cfg.wbce_beta, 1.0)
    if kind == "bbce":
        beta = 1.0 - float(y.mean())
        return _weighted_bce(probs, y, beta, 1.0 - beta)
    if kind == "focal":
        p = clip(probs, PROB_EPS, 1.0 - PROB_EPS)
        p_t = p * y + (1.0 - p) * (1.0 - y)
        mod = (1.0 - p_t) ** cfg.focal_gamma if cfg.focal_gamma != 0 else 1.0
        return _per_sample_mean(log(p_t) * mod * (-cfg.focal_alpha))
    raise ValueError(f"unknown baseline loss {kind!r}; expected one of {BASELINE_KINDS}")
