"""GRES evaluation: cIoU, gIoU, Pr@X, N-acc and T-acc.

Every metric is computed from per-sample integer pixel counts so results are
exactly reproducible and can be accumulated in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, UndefinedMetricError

PR_THRESHOLDS = (0.7, 0.8, 0.9)


@dataclass(frozen=True)
class EvalRecord:
    intersection: int
    union: int
    gt_empty: bool
    pred_empty: bool

    def iou(self) -> float:
        """Per-sample score as used by gIoU."""
        if self.gt_empty:
            return 1.0 if self.pred_empty else 0.0
        return self.intersection / self.union


def eval_record(pred: np.ndarray, gt: np.ndarray, gt_empty: bool | None = None) -> EvalRecord:
    if pred.shape != gt.shape:
        raise InputError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    p = pred.astype(bool)
    g = gt.astype(bool)
    has_gt = bool(g.any())
    if gt_empty is None:
        gt_empty = not has_gt
    elif gt_empty == has_gt:
        raise InputError("gt_empty flag contradicts the ground-truth mask")
    inter = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p | g))
    return EvalRecord(inter, union, bool(gt_empty), not bool(p.any()))


def ciou(records: Iterable[EvalRecord]) -> float:
    total_i = total_u = 0
    for r in records:
        total_i += r.intersection
        total_u += r.union
    if total_u == 0:
        raise UndefinedMetricError("cIoU is undefined: total union is zero")
    return total_i / total_u


def giou(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise UndefinedMetricError("gIoU is undefined for an empty record list")
    return sum(r.iou() for r in records) / len(records)


def pr_at_x(records: Sequence[EvalRecord], thresholds: Sequence[float] = PR_THRESHOLDS) -> dict[float, float]:
    targets = [r for r in records if not r.gt_empty]
    if not targets:
        raise UndefinedMetricError("Pr@X needs at least one sample with targets")
    ious = [r.intersection / r.union for r in targets]
    return {x: sum(1 for v in ious if v > x) / len(ious) for x in thresholds}


@dataclass(frozen=True)
class NoTargetCounts:
    tp: int  # no-target sample, empty prediction
    fn: int  # no-target sample, non-empty prediction
    tn: int  # target sample, non-empty prediction
    fp: int  # target sample, empty prediction


def no_target_accuracies(records: Iterable[EvalRecord]) -> tuple[float | None, float | None, NoTargetCounts]:
    """N-acc and T-acc; ``None`` where the denominator is zero."""
    tp = fn = tn = fp = 0
    for r in records:
        if r.gt_empty:
            if r.pred_empty:
                tp += 1
            else:
                fn += 1
        elif r.pred_empty:
            fp += 1
        else:
            tn += 1
    n_acc = tp / (tp + fn) if tp + fn else None
    t_acc = tn / (tn + fp) if tn + fp else None
    return n_acc, t_acc, NoTargetCounts(tp, fn, tn, fp)


@dataclass
class EvalReport:
    ciou: float | None
    giou: float
    pr: dict[float, float | None]
    n_acc: float | None
    t_acc: float | None
    counts: NoTargetCounts
    records: list[EvalRecord] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict[str, float | None]:
        out: dict[str, float | None] = {"ciou": self.ciou, "giou": self.giou}
        for x, v in self.pr.items():
            out[f"pr@{x:.1f}"] = v
        out["n_acc"] = self.n_acc
        out["t_acc"] = self.t_acc
        return out

    def to_keyvalue(self) -> str:
        lines = [f"{k}={_fmt(v)}" for k, v in self.as_dict().items()]
        c = self.counts
        lines += [f"tp={c.tp}", f"fn={c.fn}", f"tn={c.tn}", f"fp={c.fp}", f"samples={len(self.records)}"]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [("metric", "value")] + [(k, _fmt(v)) for k, v in self.as_dict().items()]
        width = max(len(k) for k, _ in rows)
        body = [f"{k:<{width}}  {v:>8}" for k, v in rows]
        body.insert(1, "-" * (width + 10))
        return "\n".join(body) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_keyvalue(), encoding="utf-8")


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def summarize(records: Sequence[EvalRecord], thresholds: Sequence[float] = PR_THRESHOLDS) -> EvalReport:
    """Aggregate all metrics; metrics without a defined denominator are reported as ``None``."""
    records = list(records)
    try:
        c = ciou(records)
    except UndefinedMetricError:
        c = None
    try:
        pr: dict[float, float | None] = dict(pr_at_x(records, thresholds))
    except UndefinedMetricError:
        pr = {x: None for x in thresholds}
    n_acc, t_acc, counts = no_target_accuracies(records)
    return EvalReport(c, giou(records), pr, n_acc, t_acc, counts, records)
