"""Black-box sign-gradient attack and the agreement-based detectors.

Adversarial inputs are crafted on a separately trained surrogate softmax
model, then fed to the multi-head model. Detection uses head agreement:
an input is flagged unless enough heads pick the same nearest label. The
same machinery covers the softmax-ensemble comparator via unanimous
argmax.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .decoder import batch_head_distances, batch_soft_decode, head_distances
from .embeddings import LabelCodebook
from .model import MultiHeadModel

__all__ = [
    "AdversarialBatch",
    "fgsm",
    "fgsm_batch",
    "agreement_detector",
    "ranking_spread",
    "batch_ranking_spreads",
    "agreement_counts",
    "ensemble_agreement_counts",
    "detection_rates",
    "matched_frr_detection",
    "write_adversarial_batch",
    "write_spread_histogram",
]


@dataclass(frozen=True)
class AdversarialBatch:
    originals: np.ndarray
    perturbed: np.ndarray
    epsilon: float
    surrogate_id: str

    def __post_init__(self):
        if self.originals.shape != self.perturbed.shape:
            raise ValueError("original and perturbed batches must share a shape")
        if np.max(np.abs(self.perturbed - self.originals), initial=0.0) > self.epsilon + 1e-12:
            raise ValueError("perturbation exceeds the declared epsilon budget")


def fgsm(
    surrogate: MultiHeadModel,
    x: np.ndarray,
    y: int,
    eps: float,
    input_range: tuple[float, float],
) -> np.ndarray:
    """One signed gradient step up the surrogate's cross-entropy, clipped
    to the declared input range."""
    if eps < 0:
        raise ValueError(f"epsilon must be >= 0, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    if not (0 <= y < surrogate.config.n_classes):
        raise ValueError(f"label {y} outside the surrogate's class range")
    if eps == 0:
        return x.copy()

    def forward(xt: ad.Tensor):
        return ad.cross_entropy(surrogate.forward(xt)[0], y)

    grad = ad.grad_wrt_input(forward, ad.Tensor(x))
    lo, hi = input_range
    return np.clip(x + eps * np.sign(grad), lo, hi)


def fgsm_batch(
    surrogate: MultiHeadModel,
    X: np.ndarray,
    y: np.ndarray,
    eps: float,
    input_range: tuple[float, float],
    surrogate_id: str = "surrogate",
) -> AdversarialBatch:
    X = np.asarray(X, dtype=np.float64)
    perturbed = np.stack(
        [fgsm(surrogate, xi, int(yi), eps, input_range) for xi, yi in zip(X, y)]
    )
    return AdversarialBatch(
        originals=X, perturbed=perturbed, epsilon=eps, surrogate_id=surrogate_id
    )


def agreement_detector(outputs: list[np.ndarray], codebook: LabelCodebook) -> str:
    """"clean" iff every head's nearest label is the same; needs K >= 2."""
    if len(outputs) < 2:
        raise ValueError("agreement rule is undefined for a single head")
    dists = head_distances(outputs, codebook)
    nearest = [int(np.argmin(row)) for row in dists]
    return "clean" if len(set(nearest)) == 1 else "adversarial"


def ranking_spread(outputs: list[np.ndarray], codebook: LabelCodebook) -> int:
    """Max minus min rank of the soft-decoded label across the heads."""
    dists = head_distances(outputs, codebook)
    label = int(np.argmin(dists.sum(axis=0)))
    ranks = []
    for row in dists:
        d = row[label]
        closer = np.sum(row < d) + np.sum((row == d).nonzero()[0] < label)
        ranks.append(int(closer) + 1)
    return max(ranks) - min(ranks)


def batch_ranking_spreads(outputs: list[np.ndarray], codebook: LabelCodebook) -> np.ndarray:
    dists = batch_head_distances(outputs, codebook)  # (K, B, N)
    labels = np.argmin(dists.sum(axis=0), axis=1)
    batch = dists.shape[1]
    spreads = np.empty(batch, dtype=np.intp)
    for i in range(batch):
        label = labels[i]
        ranks = []
        for row in dists[:, i, :]:
            d = row[label]
            closer = np.sum(row < d) + np.sum((row == d).nonzero()[0] < label)
            ranks.append(int(closer) + 1)
        spreads[i] = max(ranks) - min(ranks)
    return spreads


def agreement_counts(outputs: list[np.ndarray], codebook: LabelCodebook) -> np.ndarray:
    """Per example, the size of the largest head-vote block; shape (B,)."""
    dists = batch_head_distances(outputs, codebook)
    nearest = np.argmin(dists, axis=2)  # (K, B)
    counts = np.empty(nearest.shape[1], dtype=np.intp)
    for i in range(nearest.shape[1]):
        counts[i] = np.bincount(nearest[:, i]).max()
    return counts


def ensemble_agreement_counts(members: list[MultiHeadModel], X: np.ndarray) -> np.ndarray:
    """Size of the largest argmax-vote block across ensemble members."""
    votes = np.stack([np.argmax(m.logits(X), axis=1) for m in members])  # (M, B)
    counts = np.empty(votes.shape[1], dtype=np.intp)
    for i in range(votes.shape[1]):
        counts[i] = np.bincount(votes[:, i]).max()
    return counts


def detection_rates(
    flags_on_adversarial, flags_on_clean
) -> tuple[float, float]:
    """(fraction of adversarial flagged, fraction of clean flagged)."""
    adv = np.asarray(flags_on_adversarial, dtype=bool)
    clean = np.asarray(flags_on_clean, dtype=bool)
    if adv.size == 0 or clean.size == 0:
        raise ValueError("flag lists must be nonempty")
    return float(adv.mean()), float(clean.mean())


def matched_frr_detection(
    adv_agreement: np.ndarray,
    clean_agreement: np.ndarray,
    n_heads: int,
    target_frr: float,
) -> tuple[float, float, int, bool]:
    """Tune the required-agreement count ``m`` so the clean false-rejection
    rate stays at or under ``target_frr``, then report rates at that m.

    An input is flagged when fewer than m heads agree on one label; m runs
    over {2..K}, larger m being stricter. Returns (detection_rate, frr,
    chosen_m, target_met). If no m meets the target the least-FRR setting
    is returned with ``target_met`` False.
    """
    if n_heads < 2:
        raise ValueError("agreement ladder needs at least 2 heads")
    candidates = []
    for m in range(2, n_heads + 1):
        det, frr = detection_rates(adv_agreement < m, clean_agreement < m)
        candidates.append((m, det, frr))
    admissible = [c for c in candidates if c[2] <= target_frr]
    if admissible:
        m, det, frr = max(admissible, key=lambda c: c[0])  # strictest admissible
        return det, frr, m, True
    m, det, frr = min(candidates, key=lambda c: (c[2], c[0]))
    return det, frr, m, False


def write_adversarial_batch(path: str, batch: AdversarialBatch, ids=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "original", "perturbed", "epsilon", "surrogate"])
        for i, (orig, pert) in enumerate(zip(batch.originals, batch.perturbed)):
            writer.writerow(
                [
                    ids[i] if ids else f"adv_{i}",
                    ";".join(repr(float(v)) for v in orig),
                    ";".join(repr(float(v)) for v in pert),
                    repr(batch.epsilon),
                    batch.surrogate_id,
                ]
            )


def write_spread_histogram(path: str, clean_spreads: np.ndarray, adv_spreads: np.ndarray):
    """Rank-spread histogram with clean and adversarial columns."""
    top = int(max(clean_spreads.max(initial=0), adv_spreads.max(initial=0)))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spread_value", "count_clean", "count_adversarial"])
        for value in range(top + 1):
            writer.writerow(
                [value, int(np.sum(clean_spreads == value)), int(np.sum(adv_spreads == value))]
            )
