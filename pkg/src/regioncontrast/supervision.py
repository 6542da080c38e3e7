"""Supervised losses for labeled tasks and the three evaluation metrics.

The metric accumulator keeps exact state: integer class counts for IoU and
the raw per-pixel error values for depth/angle means, finalized with
math.fsum.  Merging accumulators is then genuinely commutative and
associative, bitwise, no matter how the pixel set was split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, accumulate
from .nets import SEG_IGNORE


def _as_grid(arr, name: str) -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"{name}: expected an (H,W) grid, got {a.shape}")
    return a


def _valid_mask(valid, shape) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    v = np.asarray(valid, dtype=bool)
    if v.shape != shape:
        raise ValueError(f"valid mask {v.shape} does not match {shape}")
    return v


# ---------------------------------------------------------------------------
# taped losses


def seg_ce_loss(tape: Tape, logits: Tensor, labels, ignore_id: int = SEG_IGNORE) -> Tensor:
    """Mean cross-entropy of logits (L,H,W) against a class grid (H,W).

    Fused log-softmax + NLL; ignore pixels drop out of both the mean and
    the gradient.  All-ignore input gives a constant 0.
    """
    lab = _as_grid(labels, "labels")
    n_classes = logits.values.shape[0]
    if logits.values.shape[1:] != lab.shape:
        raise ValueError(f"logits {logits.values.shape} vs labels {lab.shape}")
    valid = lab != ignore_id
    n = int(valid.sum())
    if n == 0:
        return Tensor(0.0)
    if int(lab[valid].max()) >= n_classes:
        raise ValueError(f"label {int(lab[valid].max())} >= {n_classes} classes")

    v = logits.values
    shifted = v - v.max(axis=0, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    rr, cc = np.nonzero(valid)
    classes = lab[rr, cc].astype(np.int64)
    out = Tensor(-log_probs[classes, rr, cc].sum() / n)

    def backward(g):
        d = np.exp(log_probs) * valid[None]
        d[classes, rr, cc] -= 1.0
        accumulate(logits, (float(g) / n) * d)

    tape.record("seg_ce", (logits,), out, backward)
    return out


def depth_l1_loss(tape: Tape, pred: Tensor, gt, valid=None) -> Tensor:
    """Mean absolute error over valid pixels; subgradient 0 at equality."""
    gt_grid = _as_grid(gt, "depth gt")
    pv = pred.values[0] if pred.values.ndim == 3 else pred.values
    if pv.shape != gt_grid.shape:
        raise ValueError(f"depth pred {pv.shape} vs gt {gt_grid.shape}")
    mask = _valid_mask(valid, gt_grid.shape)
    n = int(mask.sum())
    if n == 0:
        return Tensor(0.0)
    diff = np.where(mask, pv - gt_grid, 0.0)
    out = Tensor(np.abs(diff).sum() / n)

    def backward(g):
        d = np.sign(diff) * (float(g) / n)
        accumulate(pred, d[None] if pred.values.ndim == 3 else d)

    tape.record("depth_l1", (pred,), out, backward)
    return out


def normal_cosine_loss(tape: Tape, pred: Tensor, gt, valid=None) -> Tensor:
    """Mean of 1 - <pred, gt> over valid pixels; gt must be unit length."""
    gt_arr = np.asarray(gt, dtype=np.float64)
    if pred.values.shape != gt_arr.shape or gt_arr.shape[0] != 3:
        raise ValueError(f"normals pred {pred.values.shape} vs gt {gt_arr.shape}")
    mask = _valid_mask(valid, gt_arr.shape[1:])
    n = int(mask.sum())
    if n == 0:
        return Tensor(0.0)
    dot = (pred.values * gt_arr).sum(axis=0)
    out = Tensor((np.where(mask, 1.0 - dot, 0.0)).sum() / n)

    def backward(g):
        accumulate(pred, (-float(g) / n) * gt_arr * mask[None])

    tape.record("normal_cosine", (pred,), out, backward)
    return out


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricAccumulator:
    """Streaming metric state whose merge is exact.

    Seg IoU lives in integer count vectors; depth/angle errors keep their
    per-pixel values so the final mean is an fsum over the full multiset,
    independent of batching.
    """
    n_classes: int
    inter: np.ndarray = None
    union: np.ndarray = None
    abs_parts: list = field(default_factory=list)
    ang_parts: list = field(default_factory=list)

    def __post_init__(self):
        if self.inter is None:
            self.inter = np.zeros(self.n_classes, dtype=np.int64)
        if self.union is None:
            self.union = np.zeros(self.n_classes, dtype=np.int64)

    def add_seg(self, pred, gt, ignore_id: int = SEG_IGNORE) -> None:
        p = _as_grid(pred, "seg pred")
        g = _as_grid(gt, "seg gt")
        if p.shape != g.shape:
            raise ValueError(f"seg pred {p.shape} vs gt {g.shape}")
        valid = g != ignore_id
        for c in range(self.n_classes):
            pc = (p == c) & valid
            gc = (g == c) & valid
            self.inter[c] += int((pc & gc).sum())
            self.union[c] += int((pc | gc).sum())

    def add_depth(self, pred, gt, valid=None) -> None:
        p = _as_grid(pred, "depth pred")
        g = _as_grid(gt, "depth gt")
        mask = _valid_mask(valid, g.shape)
        self.abs_parts.append(np.abs(p - g)[mask].ravel())

    def add_normals(self, pred, gt, valid=None) -> None:
        p = np.asarray(pred, dtype=np.float64)
        g = np.asarray(gt, dtype=np.float64)
        if p.shape != g.shape or g.shape[0] != 3:
            raise ValueError(f"normals pred {p.shape} vs gt {g.shape}")
        mask = _valid_mask(valid, g.shape[1:])
        dot = np.clip((p * g).sum(axis=0), -1.0, 1.0)
        degrees = np.degrees(np.arccos(dot))
        self.ang_parts.append(degrees[mask].ravel())

    def merged(self, other: "MetricAccumulator") -> "MetricAccumulator":
        if self.n_classes != other.n_classes:
            raise ValueError("cannot merge accumulators with different class counts")
        return MetricAccumulator(self.n_classes,
                                 self.inter + other.inter,
                                 self.union + other.union,
                                 list(self.abs_parts) + list(other.abs_parts),
                                 list(self.ang_parts) + list(other.ang_parts))

    @staticmethod
    def _mean(parts: list) -> float:
        total = sum(int(p.size) for p in parts)
        if total == 0:
            return 0.0
        return math.fsum(float(x) for p in parts for x in p) / total

    def miou(self) -> float:
        present = self.union > 0
        if not present.any():
            return 0.0
        ratios = self.inter[present] / self.union[present]
        return float(ratios.mean())

    def aerr(self) -> float:
        return self._mean(self.abs_parts)

    def merr(self) -> float:
        return self._mean(self.ang_parts)


def miou(pred, gt, n_classes: int, ignore_id: int = SEG_IGNORE) -> float:
    acc = MetricAccumulator(n_classes)
    acc.add_seg(pred, gt, ignore_id)
    return acc.miou()


def aerr(pred, gt, valid=None) -> float:
    acc = MetricAccumulator(1)
    acc.add_depth(pred, gt, valid)
    return acc.aerr()


def merr(pred, gt, valid=None) -> float:
    acc = MetricAccumulator(1)
    acc.add_normals(pred, gt, valid)
    return acc.merr()
