"""Threshold-sweep detection metrics plus the softmax and ODIN scorers.

Scores follow one convention throughout: higher means "predicted
in-distribution". The report carries FPR at 95% TPR, detection error at
that operating point, AUROC, and AUPR with either side as the positive
class.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import MultiHeadModel

__all__ = [
    "ScoreSet",
    "DetectionReport",
    "evaluate_detection",
    "max_softmax_score",
    "odin_score",
    "odin_grid_search",
    "DEFAULT_T_GRID",
    "DEFAULT_EPS_GRID",
    "write_scoreset",
    "read_scoreset",
    "write_report",
]

# grids follow the published ODIN search ranges; override via config
DEFAULT_T_GRID = (1.0, 10.0, 100.0, 1000.0)
DEFAULT_EPS_GRID = (0.0, 0.0005, 0.001, 0.002, 0.004)


@dataclass(frozen=True)
class ScoreSet:
    """In-distribution scores are the positive class."""

    in_scores: np.ndarray
    out_scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "in_scores", np.asarray(self.in_scores, dtype=np.float64))
        object.__setattr__(self, "out_scores", np.asarray(self.out_scores, dtype=np.float64))
        if self.in_scores.size == 0 or self.out_scores.size == 0:
            raise ValueError("both score lists must be nonempty")
        if not (np.all(np.isfinite(self.in_scores)) and np.all(np.isfinite(self.out_scores))):
            raise ValueError("scores must be finite")


@dataclass(frozen=True)
class DetectionReport:
    fpr_at_95_tpr: float
    detection_error: float
    auroc: float
    aupr_in: float
    aupr_out: float

    def as_dict(self) -> dict[str, float]:
        return {
            "fpr_at_95_tpr": self.fpr_at_95_tpr,
            "detection_error": self.detection_error,
            "auroc": self.auroc,
            "aupr_in": self.aupr_in,
            "aupr_out": self.aupr_out,
        }


def _counts_at_thresholds(scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Number of scores >= each threshold (ties accepted)."""
    ordered = np.sort(scores)
    return scores.size - np.searchsorted(ordered, thresholds, side="left")


def _trapezoid(ys: np.ndarray, xs: np.ndarray) -> float:
    area = 0.0
    for i in range(len(xs) - 1):
        area += 0.5 * (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i])
    return area


def _aupr(pos: np.ndarray, neg: np.ndarray) -> float:
    """Trapezoidal area under precision vs recall, distinct thresholds,
    descending; the strictest threshold's precision extends to recall 0."""
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tp = _counts_at_thresholds(pos, thresholds).astype(np.float64)
    fp = _counts_at_thresholds(neg, thresholds).astype(np.float64)
    recall = tp / pos.size
    precision = tp / (tp + fp)
    recalls = np.concatenate([[0.0], recall])
    precisions = np.concatenate([[precision[0]], precision])
    return _trapezoid(precisions, recalls)


def evaluate_detection(scores: ScoreSet) -> DetectionReport:
    """Sweep every distinct score value as a threshold and integrate.

    The operating point is the largest threshold achieving TPR >= 0.95;
    detection error assumes the nominal 95% TPR and equal class priors.
    """
    ins, outs = scores.in_scores, scores.out_scores
    thresholds = np.unique(np.concatenate([ins, outs]))[::-1]
    tpr = _counts_at_thresholds(ins, thresholds) / ins.size
    fpr = _counts_at_thresholds(outs, thresholds) / outs.size

    # thresholds descend, so tpr is nondecreasing; first hit = largest t
    op = int(np.argmax(tpr >= 0.95))
    fpr_at_95 = float(fpr[op])
    detection_error = 0.5 * (1.0 - 0.95) + 0.5 * fpr_at_95

    fprs = np.concatenate([[0.0], fpr, [1.0]])
    tprs = np.concatenate([[0.0], tpr, [1.0]])
    auroc = _trapezoid(tprs, fprs)

    return DetectionReport(
        fpr_at_95_tpr=fpr_at_95,
        detection_error=float(detection_error),
        auroc=float(auroc),
        aupr_in=float(_aupr(ins, outs)),
        aupr_out=float(_aupr(-outs, -ins)),
    )


def max_softmax_score(logits) -> float:
    """Largest softmax probability, computed without overflow."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return float(e.max() / e.sum())


def _log_max_softmax_closure(model: MultiHeadModel, temperature: float):
    def forward(x: ad.Tensor):
        logits = model.forward(x)[0]
        scaled = ad.scale(logits, 1.0 / temperature)
        probs = ad.softmax(scaled)
        onehot = np.zeros(probs.values.shape)
        onehot[int(np.argmax(probs.values))] = 1.0
        return ad.tlog(ad.dot(probs, ad.Tensor(onehot)))

    return forward


def odin_score(
    model: MultiHeadModel, x: np.ndarray, temperature: float = 1000.0, eps: float = 0.0
) -> float:
    """Temperature-scaled max softmax after a confidence-raising input nudge."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if eps < 0:
        raise ValueError(f"perturbation must be >= 0, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    if eps > 0:
        grad = ad.grad_wrt_input(_log_max_softmax_closure(model, temperature), ad.Tensor(x))
        x = x + eps * np.sign(grad)
    return max_softmax_score(model.logits(x) / temperature)


def odin_grid_search(
    model: MultiHeadModel,
    val_in: np.ndarray,
    val_out: np.ndarray,
    t_grid=DEFAULT_T_GRID,
    eps_grid=DEFAULT_EPS_GRID,
) -> tuple[float, float]:
    """Pick (T, eps) minimizing FPR@95TPR on validation; ties prefer the
    smaller eps, then the smaller T."""
    t_grid, eps_grid = list(t_grid), list(eps_grid)
    if not t_grid or not eps_grid:
        raise ValueError("grids must be nonempty")
    best = None
    for eps in sorted(eps_grid):
        for temperature in sorted(t_grid):
            ins = np.array([odin_score(model, x, temperature, eps) for x in val_in])
            outs = np.array([odin_score(model, x, temperature, eps) for x in val_out])
            fpr = evaluate_detection(ScoreSet(ins, outs)).fpr_at_95_tpr
            if best is None or fpr < best[0]:
                best = (fpr, temperature, eps)
    return best[1], best[2]


def write_scoreset(path: str, scores: ScoreSet, ids_in=None, ids_out=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "score", "is_in_distribution"])
        for i, s in enumerate(scores.in_scores):
            writer.writerow([ids_in[i] if ids_in else f"in_{i}", repr(float(s)), 1])
        for i, s in enumerate(scores.out_scores):
            writer.writerow([ids_out[i] if ids_out else f"out_{i}", repr(float(s)), 0])


def read_scoreset(path: str) -> ScoreSet:
    ins, outs = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            (ins if int(row["is_in_distribution"]) else outs).append(float(row["score"]))
    return ScoreSet(np.array(ins), np.array(outs))


def write_report(path: str, reports: dict[str, DetectionReport]):
    """One percentage-formatted row per named model/detector."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "fpr_at_95_tpr", "detection_error", "auroc", "aupr_in", "aupr_out"])
        for name, rep in reports.items():
            writer.writerow(
                [name] + [f"{100.0 * v:.2f}" for v in rep.as_dict().values()]
            )
