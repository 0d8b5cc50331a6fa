"""Label decoding and the norm-based out-of-distribution score.

Soft decoding picks the label minimizing the summed per-head cosine
distance; hard decoding runs a per-head nearest-label majority vote. The
OOD score is the summed squared L2 norm of the head outputs: small norms
flag an input as out-of-distribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .embeddings import LabelCodebook

__all__ = [
    "Prediction",
    "head_distances",
    "soft_decode",
    "hard_decode",
    "ood_score",
    "classify_with_rejection",
    "batch_head_distances",
    "batch_soft_decode",
    "batch_ood_scores",
    "write_predictions",
]


@dataclass(frozen=True)
class Prediction:
    label: int
    per_head_nearest: tuple[int, ...]
    per_head_rank_of_label: tuple[int, ...]
    distance_sum: float
    ood_score: float


def _check_outputs(outputs, codebook: LabelCodebook):
    if len(outputs) != codebook.n_spaces:
        raise ValueError(
            f"{len(outputs)} head outputs but codebook has {codebook.n_spaces} spaces"
        )


def head_distances(outputs: list[np.ndarray], codebook: LabelCodebook) -> np.ndarray:
    """Cosine distance of each head output to every label row; shape (K, N).

    Codebook rows are unit vectors, so only the output norm needs dividing.
    """
    _check_outputs(outputs, codebook)
    rows = []
    for k, out in enumerate(outputs):
        out = np.asarray(out, dtype=np.float64)
        norm = np.linalg.norm(out)
        if norm == 0.0:
            raise ValueError(f"head {k} output has zero norm; decoding undefined")
        rows.append(0.5 * (1.0 - codebook.targets[k] @ out / norm))
    return np.stack(rows)


def _rank_of(distances_row: np.ndarray, label: int) -> int:
    """1-based rank of ``label`` under (distance, index) ordering."""
    d = distances_row[label]
    closer = np.sum(distances_row < d) + np.sum((distances_row == d).nonzero()[0] < label)
    return int(closer) + 1


def soft_decode(outputs: list[np.ndarray], codebook: LabelCodebook) -> Prediction:
    """Label with the minimal summed distance over all heads (ties: lowest index)."""
    dists = head_distances(outputs, codebook)
    sums = dists.sum(axis=0)
    label = int(np.argmin(sums))
    nearest = tuple(int(np.argmin(row)) for row in dists)
    ranks = tuple(_rank_of(row, label) for row in dists)
    return Prediction(
        label=label,
        per_head_nearest=nearest,
        per_head_rank_of_label=ranks,
        distance_sum=float(sums[label]),
        ood_score=ood_score(outputs),
    )


def hard_decode(outputs: list[np.ndarray], codebook: LabelCodebook) -> int:
    """Plurality vote over per-head nearest labels.

    Vote ties break by smaller summed distance, then by lowest label index.
    """
    dists = head_distances(outputs, codebook)
    nearest = [int(np.argmin(row)) for row in dists]
    counts = np.bincount(nearest, minlength=codebook.n_labels)
    top = counts.max()
    contenders = np.flatnonzero(counts == top)
    if len(contenders) == 1:
        return int(contenders[0])
    sums = dists.sum(axis=0)
    best = min(contenders, key=lambda lbl: (sums[lbl], lbl))
    return int(best)


def ood_score(outputs: list[np.ndarray]) -> float:
    """Sum over heads of the squared L2 norm; larger means more in-distribution."""
    return float(sum(np.sum(np.asarray(o, dtype=np.float64) ** 2) for o in outputs))


def classify_with_rejection(
    outputs: list[np.ndarray], codebook: LabelCodebook, alpha: float
) -> int | None:
    """Soft-decoded label, or None when the OOD score falls below ``alpha``."""
    if alpha < 0:
        raise ValueError(f"rejection threshold must be >= 0, got {alpha}")
    if ood_score(outputs) < alpha:
        return None
    return soft_decode(outputs, codebook).label


def batch_head_distances(outputs: list[np.ndarray], codebook: LabelCodebook) -> np.ndarray:
    """Distances for a batch of outputs; shape (K, B, N)."""
    _check_outputs(outputs, codebook)
    stacks = []
    for k, out in enumerate(outputs):
        out = np.asarray(out, dtype=np.float64)
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError(f"head {k} produced a zero-norm output in the batch")
        stacks.append(0.5 * (1.0 - (out / norms) @ codebook.targets[k].T))
    return np.stack(stacks)


def batch_soft_decode(outputs: list[np.ndarray], codebook: LabelCodebook) -> np.ndarray:
    return np.argmin(batch_head_distances(outputs, codebook).sum(axis=0), axis=1)


def batch_ood_scores(outputs: list[np.ndarray]) -> np.ndarray:
    return sum(np.sum(np.asarray(o, dtype=np.float64) ** 2, axis=1) for o in outputs)


def write_predictions(path: str, rows: list[tuple[str, int, Prediction]]):
    """CSV dump: one (example_id, true_label, prediction) row per example."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "example_id",
                "true_label",
                "predicted_label",
                "distance_sum",
                "ood_score",
                "per_head_nearest",
                "per_head_rank",
            ]
        )
        for example_id, true_label, pred in rows:
            writer.writerow(
                [
                    example_id,
                    true_label,
                    pred.label,
                    repr(pred.distance_sum),
                    repr(pred.ood_score),
                    ";".join(str(i) for i in pred.per_head_nearest),
                    ";".join(str(i) for i in pred.per_head_rank_of_label),
                ]
            )
