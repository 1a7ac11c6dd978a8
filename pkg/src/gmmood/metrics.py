"""Threshold-free detection metrics, segmentation mIoU, and the
percentile decision rule.

Detection treats the problem as binary ranking: higher score means more
likely out-of-distribution.  AUROC uses the Mann-Whitney formulation
(ties count one half), AUPRC is the average precision with stable input
order breaking score ties, and FPR95 is the smallest false-positive rate
among thresholds whose true-positive rate reaches the target under the
rule ``flag score >= t``.
"""

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError, UndefinedMetricError


@dataclass
class ScoredPixels:
    """Uncertainty scores paired with binary OOD ground truth."""

    scores: np.ndarray
    is_ood: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_ood = np.asarray(self.is_ood, dtype=bool)
        if self.scores.shape != self.is_ood.shape or self.scores.ndim != 1:
            raise ShapeError("scores and is_ood must be parallel 1-d arrays")

    @property
    def n_ood(self) -> int:
        return int(self.is_ood.sum())

    @property
    def n_id(self) -> int:
        return int((~self.is_ood).sum())


def _require_both_classes(data: ScoredPixels, metric: str) -> None:
    if data.n_ood == 0 or data.n_id == 0:
        raise UndefinedMetricError(
            f"{metric} undefined: needs at least one OOD and one ID sample "
            f"(got {data.n_ood} OOD, {data.n_id} ID)"
        )


def auroc(data: ScoredPixels) -> float:
    """P(random OOD score > random ID score), ties counting 1/2."""
    _require_both_classes(data, "auroc")
    ranks = rankdata(data.scores)
    n_ood, n_id = data.n_ood, data.n_id
    rank_sum = ranks[data.is_ood].sum()
    return float((rank_sum - n_ood * (n_ood + 1) / 2.0) / (n_ood * n_id))


def auprc(data: ScoredPixels) -> float:
    """Average precision over OOD positives in descending score order.

    Ties are broken by stable input order.
    """
    _require_both_classes(data, "auprc")
    order = np.argsort(-data.scores, kind="stable")
    flags = data.is_ood[order]
    tp = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    precision_at_pos = tp[flags] / ranks[flags]
    return float(precision_at_pos.sum() / data.n_ood)


def fpr_at_tpr(data: ScoredPixels, target_tpr: float = 0.95) -> float:
    """Smallest FPR among thresholds t with TPR >= target (rule: score >= t)."""
    _require_both_classes(data, "fpr_at_tpr")
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError(f"target_tpr must be in (0, 1], got {target_tpr}")
    order = np.argsort(-data.scores, kind="stable")
    scores = data.scores[order]
    flags = data.is_ood[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    # thresholds can only sit at the end of a group of equal scores
    boundary = np.nonzero(np.diff(scores) != 0)[0]
    cut = np.append(boundary, scores.size - 1)
    tpr = tp[cut] / data.n_ood
    fpr = fp[cut] / data.n_id
    feasible = np.nonzero(tpr >= target_tpr)[0]
    # tpr reaches 1.0 at the last cut, so a feasible threshold always exists
    return float(fpr[feasible[0]])


def miou(pred, gt, num_classes: int, ignore=None) -> tuple[float, np.ndarray]:
    """Mean intersection-over-union and the per-class IoU vector.

    Pixels where ``ignore`` is true never enter any tally.  Classes absent
    from both prediction and ground truth get NaN and are excluded from
    the mean.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if ignore is None:
        keep = np.ones(pred.shape, dtype=bool)
    else:
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != pred.shape:
            raise ShapeError(f"ignore mask {ignore.shape} does not match {pred.shape}")
        keep = ~ignore
    p = pred[keep].astype(np.int64).ravel()
    g = gt[keep].astype(np.int64).ravel()
    if p.size and (p.min() < 0 or p.max() >= num_classes or g.min() < 0 or g.max() >= num_classes):
        raise ValueError("labels outside [0, num_classes) must be covered by the ignore mask")
    confusion = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    confusion = confusion.reshape(num_classes, num_classes)
    tp = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    per_class = np.full(num_classes, np.nan)
    present = union > 0
    per_class[present] = tp[present] / union[present]
    mean = float(np.nanmean(per_class)) if present.any() else 0.0
    return mean, per_class


def percentile_threshold(scores, top_fraction: float = 0.05) -> tuple[float, np.ndarray]:
    """Nearest-rank quantile threshold for flagging the top scores.

    The threshold is the (1 - top_fraction) empirical quantile under the
    nearest-rank definition; the mask flags scores strictly above it, so
    threshold ties are never flagged and the flagged count never exceeds
    the requested fraction (within the nearest-rank rounding).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("percentile_threshold needs at least one score")
    if not 0.0 < top_fraction < 1.0:
        raise ValueError(f"top_fraction must be in (0, 1), got {top_fraction}")
    n = scores.size
    rank = min(n, max(1, math.ceil((1.0 - top_fraction) * n)))
    threshold = float(np.partition(scores, rank - 1)[rank - 1])
    return threshold, scores > threshold


@dataclass
class EvalReport:
    """Aggregate detection and segmentation quality for one score channel."""

    auroc: float
    auprc: float
    fpr95: float
    miou: float
    per_class_iou: np.ndarray
    n_id: int
    n_ood: int

    def __post_init__(self):
        self.per_class_iou = np.asarray(self.per_class_iou, dtype=np.float64)

    def to_json_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "auprc": self.auprc,
            "fpr95": self.fpr95,
            "miou": self.miou,
            "per_class_iou": [
                None if math.isnan(v) else v for v in self.per_class_iou.tolist()
            ],
            "n_id": self.n_id,
            "n_ood": self.n_ood,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EvalReport":
        per_class = np.array(
            [math.nan if v is None else float(v) for v in doc["per_class_iou"]]
        )
        return cls(
            auroc=float(doc["auroc"]),
            auprc=float(doc["auprc"]),
            fpr95=float(doc["fpr95"]),
            miou=float(doc["miou"]),
            per_class_iou=per_class,
            n_id=int(doc["n_id"]),
            n_ood=int(doc["n_ood"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_json_dict(json.loads(text))

    def to_csv(self) -> str:
        """One-row CSV; fractional values carry six decimal digits."""
        header = ["auroc", "auprc", "fpr95", "miou"]
        row = [f"{getattr(self, k):.6f}" for k in header]
        for i, v in enumerate(self.per_class_iou):
            header.append(f"per_class_iou_{i}")
            row.append("" if math.isnan(v) else f"{v:.6f}")
        header += ["n_id", "n_ood"]
        row += [str(self.n_id), str(self.n_ood)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerow(row)
        return buf.getvalue()
