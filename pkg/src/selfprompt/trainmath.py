"""Dice metric, Dice + cross-entropy loss, deep-supervision weights, poly LR."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from selfprompt.core import BinaryMask, LabelVolume, ScalarVolume
from selfprompt.errors import RangeError, ValidationError

DICE_SMOOTH = 1e-5
LOG_CLAMP = 1e-12
POLY_EXPONENT = 0.9
PHASE2_EPOCH = 200


def dice_score(a: BinaryMask, b: BinaryMask) -> float:
    """``2|a & b| / (|a| + |b|)``; two empty masks score 1.0."""
    if a.dims != b.dims:
        raise ValidationError(f"mask dims differ: {a.dims} vs {b.dims}")
    na, nb = a.count(), b.count()
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.bits & b.bits))
    return 2.0 * inter / (na + nb)


def per_class_dice(pred: LabelVolume, truth: LabelVolume) -> list[float]:
    """Dice of every class id ``0..K-1`` between two label volumes."""
    if pred.dims != truth.dims:
        raise ValidationError(f"volume dims differ: {pred.dims} vs {truth.dims}")
    k = max(pred.num_classes, truth.num_classes)
    return [
        dice_score(BinaryMask(pred.labels == c, pred.spacing), BinaryMask(truth.labels == c, truth.spacing))
        for c in range(k)
    ]


def dice_ce_terms(probabilities: ScalarVolume, target: LabelVolume) -> tuple[float, float]:
    """Soft Dice loss and mean cross-entropy, returned separately."""
    p = probabilities.values
    k = probabilities.channels
    if probabilities.dims != target.dims:
        raise ValidationError(f"dims differ: {probabilities.dims} vs {target.dims}")
    if target.num_classes > k:
        raise ValidationError(f"target has {target.num_classes} classes, probabilities only {k}")
    onehot = target.labels[np.newaxis] == np.arange(k, dtype=np.uint8)[:, None, None, None]
    axes = (1, 2, 3)
    inter = np.sum(p * onehot, axis=axes)
    denom = np.sum(p, axis=axes) + np.sum(onehot, axis=axes)
    dice = (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    soft_dice_loss = 1.0 - float(np.mean(dice))

    picked = np.take_along_axis(p, target.labels[np.newaxis].astype(np.intp), axis=0)[0]
    ce = float(np.mean(-np.log(np.maximum(picked, LOG_CLAMP))))
    return soft_dice_loss, ce


def dice_ce_loss(probabilities: ScalarVolume, target: LabelVolume) -> float:
    dice, ce = dice_ce_terms(probabilities, target)
    return dice + ce


def ds_weights(n: int) -> list[float]:
    """Deep-supervision weights, highest resolution first, halving per level."""
    if n < 1:
        raise ValidationError(f"need at least one level, got {n}")
    raw = [2.0 ** -i for i in range(n)]
    total = 2.0 - 2.0 ** (1 - n)
    return [w / total for w in raw]


def downsample_labels(target: LabelVolume, factor: Sequence[int]) -> LabelVolume:
    """Keep the block-origin voxel of every ``factor``-sized block."""
    f = tuple(int(v) for v in factor)
    if len(f) != 3 or min(f) < 1:
        raise ValidationError(f"factor must be 3 positive integers, got {factor}")
    if any(n % s for n, s in zip(target.dims, f)):
        raise ValidationError(f"dims {target.dims} not divisible by factor {f}")
    labels = target.labels[:: f[0], :: f[1], :: f[2]]
    spacing = tuple(s * k for s, k in zip(target.spacing, f))
    return LabelVolume(labels, spacing, target.num_classes)


@dataclass(frozen=True)
class LrSchedule:
    init_lr: float = 0.01
    max_epoch: int = 1000

    def __post_init__(self) -> None:
        if not self.init_lr > 0:
            raise ValidationError(f"init_lr must be > 0, got {self.init_lr}")
        if self.max_epoch < 1:
            raise ValidationError(f"max_epoch must be positive, got {self.max_epoch}")


def poly_lr(s: LrSchedule, e: float) -> float:
    if not 0 <= e <= s.max_epoch:
        raise RangeError(f"epoch {e} outside [0, {s.max_epoch}]")
    return s.init_lr * (1.0 - e / s.max_epoch) ** POLY_EXPONENT


@dataclass
class LossLevel:
    level: int        # 1 = full resolution
    scale: float      # resolution relative to level 1
    weight: float
    loss: float


@dataclass
class LossReport:
    total: float
    phase: int
    epoch: int
    levels: list[LossLevel] = field(default_factory=list)
    final_loss: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def compose_loss(epoch: int, ds_losses: Sequence[float], final_loss: float) -> LossReport:
    """Weighted deep-supervision loss, plus the final-head loss from epoch 200 on.

    ``ds_losses[0]`` is the highest-resolution level.
    """
    if not ds_losses:
        raise ValidationError("ds_losses must not be empty")
    if epoch < 0:
        raise RangeError(f"epoch must be >= 0, got {epoch}")
    weights = ds_weights(len(ds_losses))
    levels = [LossLevel(i + 1, 2.0 ** -i, w, float(l)) for i, (w, l) in enumerate(zip(weights, ds_losses))]
    total = sum(lv.weight * lv.loss for lv in levels)
    if epoch < PHASE2_EPOCH:
        return LossReport(total, 1, epoch, levels)
    return LossReport(total + float(final_loss), 2, epoch, levels, float(final_loss))
