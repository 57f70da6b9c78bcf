"""Dual-branch training: strong view through theta/xi/tau, weak view through
the EMA target phi, NAdam on the trained groups, then the EMA update."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augment import AugmentedPair, make_pair
from .data import SampleRecord
from .losses import LossConfig, MwlConfig, build_weight_mask, dice_loss, mwl_loss, total_loss
from .metrics import METRIC_EPS
from .model import ModelParams, model_forward_infer, model_forward_train
from .optim import NAdamState, PlateauScheduler, ema_update, nadam_step
from .tensor import Tape, Tensor, no_grad

HISTORY_HEADER = ("epoch", "lr", "loss_total", "loss_serp", "loss_mwl", "loss_dice", "val_dsc", "val_iou")


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 300
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum_decay: float = 0.004
    ema_alpha: float = 0.99
    patience: int = 30
    lr_factor: float = 0.75
    plateau_threshold: float = 1e-6
    val_fraction: float = 0.2
    seed: int = 0
    serp: bool = True
    augment: bool = True

    def __post_init__(self):
        checks = [
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr > 0, "lr must be positive"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (0.0 <= self.ema_alpha <= 1.0, "ema_alpha must lie in [0, 1]"),
            (self.patience >= 1, "patience must be >= 1"),
            (0.0 < self.lr_factor < 1.0, "lr_factor must lie in (0, 1)"),
            (0.0 < self.val_fraction < 1.0, "val_fraction must lie in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


@dataclass
class StepReport:
    total: float
    serp: float
    mwl: float
    dice: float
    grad_norms: dict[str, float]


def trained_groups(serp: bool) -> tuple[str, ...]:
    return ("theta", "tau", "xi") if serp else ("theta", "xi")


def make_optimizer(cfg: TrainerConfig) -> NAdamState:
    return NAdamState(
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
        momentum_decay=cfg.momentum_decay,
        weight_decay=cfg.weight_decay,
    )


def collate(batch: list[AugmentedPair], mwl: MwlConfig, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    i_s = np.stack([p.strong for p in batch]).astype(dtype, copy=False)
    i_w = np.stack([p.weak for p in batch]).astype(dtype, copy=False)
    y = np.stack([p.mask for p in batch]).astype(dtype)[:, None]
    wm = np.stack([build_weight_mask(p.mask, mwl) for p in batch]).astype(dtype)[:, None]
    return i_s, i_w, y, wm


def train_step(
    batch: list[AugmentedPair],
    params: ModelParams,
    opt: NAdamState,
    cfg: TrainerConfig,
    loss_cfg: LossConfig = LossConfig(),
    mwl: MwlConfig = MwlConfig(),
) -> StepReport:
    """Forward both branches, backpropagate the total loss, NAdam, then EMA."""
    dtype = next(iter(params.theta.values())).dtype
    i_s, i_w, y, wm = collate(batch, mwl, dtype)
    groups = trained_groups(cfg.serp)
    trained = params.named(groups)
    for t in trained.values():
        t.zero_grad()
    with Tape() as tape:
        logits, e_m, e_t = model_forward_train(Tensor(i_s), Tensor(i_w), params, serp=cfg.serp)
        loss, parts = total_loss(e_m, e_t, logits, y, wm, loss_cfg)
    tape.backward(loss)
    norms = {g: math.sqrt(sum(float(np.sum(t.grad.astype(np.float64) ** 2)) for t in params.group(g).values())) for g in groups}
    nadam_step(trained, opt)
    if cfg.serp:
        ema_update(params.phi, params.theta, cfg.ema_alpha)
    return StepReport(
        total=loss.item(),
        serp=parts["serp"].item() if "serp" in parts else 0.0,
        mwl=parts["mwl"].item(),
        dice=parts["dice"].item(),
        grad_norms=norms,
    )


@dataclass
class Validation:
    loss: float
    dsc: float
    iou: float


def validate(params: ModelParams, records: list[SampleRecord], batch_size: int, mwl: MwlConfig) -> Validation:
    """Inference graph on un-augmented images; loss is MWL + dice."""
    dtype = next(iter(params.theta.values())).dtype
    losses, dscs, ious = [], [], []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        x = np.stack([r.image.transpose(2, 0, 1) for r in chunk]).astype(dtype)
        y = np.stack([r.mask for r in chunk]).astype(dtype)[:, None]
        wm = np.stack([build_weight_mask(r.mask, mwl) for r in chunk]).astype(dtype)[:, None]
        probs = model_forward_infer(Tensor(x), params)
        with no_grad():
            batch_loss = mwl_loss(probs, y, wm).item() + dice_loss(probs, y).item()
        losses.append(batch_loss * len(chunk))
        pred = probs.data >= 0.5
        truth = y > 0.5
        tp = np.sum(pred & truth, axis=(1, 2, 3)).astype(np.float64)
        fp = np.sum(pred & ~truth, axis=(1, 2, 3))
        fn = np.sum(~pred & truth, axis=(1, 2, 3))
        dscs.extend(2 * tp / (2 * tp + fp + fn + METRIC_EPS))
        ious.extend(tp / (tp + fp + fn + METRIC_EPS))
    n = len(records)
    return Validation(sum(losses) / n, float(np.mean(dscs)), float(np.mean(ious)))


@dataclass
class TrainResult:
    params: ModelParams  # final
    best: ModelParams
    best_epoch: int
    best_dsc: float
    history: list[dict] = field(default_factory=list)

    def history_csv(self) -> str:
        return format_history(self.history)


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def format_history(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in HISTORY_HEADER])
    return buf.getvalue()


def train_loop(
    train: list[SampleRecord],
    val: list[SampleRecord],
    params: ModelParams,
    cfg: TrainerConfig,
    loss_cfg: LossConfig = LossConfig(),
    mwl: MwlConfig = MwlConfig(),
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run ``cfg.epochs`` epochs; the best epoch is chosen by validation DSC."""
    if not train:
        raise ValueError("training set is empty")
    if not val:
        raise ValueError("validation set is empty")
    mwl.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    opt = make_optimizer(cfg)
    sched = PlateauScheduler(cfg.lr, cfg.patience, cfg.lr_factor, cfg.plateau_threshold)
    images = [r.image.transpose(2, 0, 1).copy() for r in train]
    best, best_epoch, best_dsc = params.copy(), 0, -math.inf
    history = []
    for epoch in range(1, cfg.epochs + 1):
        lr = opt.lr
        order = rng.permutation(len(train))
        sums = np.zeros(4)
        steps = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if cfg.augment:
                batch = [make_pair(images[i], train[i].mask, rng) for i in idx]
            else:
                batch = [AugmentedPair(images[i], images[i], train[i].mask, None, None) for i in idx]
            rep = train_step(batch, params, opt, cfg, loss_cfg, mwl)
            vals = (rep.total, rep.serp, rep.mwl, rep.dice)
            if not all(math.isfinite(v) for v in vals):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {steps + 1}: {vals}")
            sums += vals
            steps += 1
        v = validate(params, val, cfg.batch_size, mwl)
        row = dict(zip(HISTORY_HEADER, (epoch, lr, *(sums / steps), v.dsc, v.iou)))
        history.append(row)
        if v.dsc > best_dsc:
            best, best_epoch, best_dsc = params.copy(), epoch, v.dsc
        opt.lr = sched.step(v.loss)
        if on_epoch is not None:
            on_epoch(row)
    return TrainResult(params, best, best_epoch, best_dsc, history)
