"""Synthetic Gaussian-mixture datasets and synthetic embedding codebooks.

Stand-ins for image/audio features and for pretrained word vectors: the
detection machinery only needs feature vectors and per-label target
embeddings, so desk-scale experiments run on generated ones. Everything
is deterministic given the seeds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSpace

__all__ = [
    "SyntheticDataset",
    "gen_synthetic_dataset",
    "gen_synthetic_codebooks",
    "gen_synthetic_taxonomy",
    "write_dataset_csv",
    "read_dataset_csv",
]


@dataclass
class SyntheticDataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    X_ood_val: np.ndarray
    X_ood_test: np.ndarray
    in_labels: list[str]
    ood_labels: list[str]
    input_range: tuple[float, float]


def gen_synthetic_dataset(
    n_in_classes: int,
    n_ood_classes: int,
    input_dim: int,
    samples_per_class: int,
    separation: float,
    seed: int,
    val_fraction: float = 0.2,
    test_fraction: float = 0.2,
    ood_val_fraction: float = 0.2,
    ood_scale: float = 0.25,
) -> SyntheticDataset:
    """Gaussian mixture with one component per class; OOD classes are
    held-out components with disjoint labels.

    ``ood_scale`` scales the OOD component means relative to the
    in-distribution ones; values below 1 place the OOD source between
    the training clusters, where the model has seen nothing. At
    separation 0 all distributions coincide regardless.
    """
    if n_in_classes < 2 or n_ood_classes < 1:
        raise ValueError("need at least 2 in-distribution classes and 1 OOD class")
    rng = np.random.default_rng(seed)
    total = n_in_classes + n_ood_classes
    means = separation * rng.normal(size=(total, input_dim))
    means[n_in_classes:] *= ood_scale

    def sample_class(c: int, n: int) -> np.ndarray:
        return means[c] + rng.normal(size=(n, input_dim))

    X_in, y_in = [], []
    for c in range(n_in_classes):
        X_in.append(sample_class(c, samples_per_class))
        y_in.append(np.full(samples_per_class, c, dtype=np.intp))
    X_in = np.concatenate(X_in)
    y_in = np.concatenate(y_in)
    order = rng.permutation(X_in.shape[0])
    X_in, y_in = X_in[order], y_in[order]

    n = X_in.shape[0]
    n_val = int(round(val_fraction * n))
    n_test = int(round(test_fraction * n))
    X_val, y_val = X_in[:n_val], y_in[:n_val]
    X_test, y_test = X_in[n_val : n_val + n_test], y_in[n_val : n_val + n_test]
    X_train, y_train = X_in[n_val + n_test :], y_in[n_val + n_test :]

    X_ood = np.concatenate(
        [sample_class(n_in_classes + c, samples_per_class) for c in range(n_ood_classes)]
    )
    X_ood = X_ood[rng.permutation(X_ood.shape[0])]
    n_ood_val = int(round(ood_val_fraction * X_ood.shape[0]))

    lo = float(min(X_in.min(), X_ood.min()))
    hi = float(max(X_in.max(), X_ood.max()))

    return SyntheticDataset(
        X_train=X_train,
        y_train=y_train,
        X_val=X_val,
        y_val=y_val,
        X_test=X_test,
        y_test=y_test,
        X_ood_val=X_ood[:n_ood_val],
        X_ood_test=X_ood[n_ood_val:],
        in_labels=[f"class{c:02d}" for c in range(n_in_classes)],
        ood_labels=[f"class{n_in_classes + c:02d}" for c in range(n_ood_classes)],
        input_range=(lo, hi),
    )


def _orthonormal_map(rng: np.random.Generator, d_from: int, d_to: int) -> np.ndarray:
    """Columns-orthonormal map used to rotate a base space into a new one."""
    q, r = np.linalg.qr(rng.normal(size=(max(d_from, d_to), max(d_from, d_to))))
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
    return q[:d_from, :d_to]


def gen_synthetic_codebooks(
    labels: list[str],
    k: int,
    dims: list[int],
    seed: int,
    diversity: float,
) -> list[EmbeddingSpace]:
    """K synthetic embedding spaces over the given labels.

    Space 1 is random unit vectors; space j blends a rotation of space 1
    with fresh noise. diversity 0 keeps the pairwise cosine structure of
    space 1; diversity 1 makes the spaces mutually independent.
    """
    if not 0.0 <= diversity <= 1.0:
        raise ValueError(f"diversity must be in [0, 1], got {diversity}")
    if any(d < 2 for d in dims):
        raise ValueError("embedding dims must be >= 2")
    if len(dims) != k:
        raise ValueError(f"need {k} dims, got {len(dims)}")
    rng = np.random.default_rng(seed)
    n = len(labels)

    base = rng.normal(size=(n, dims[0]))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    spaces = [EmbeddingSpace("space_0", dims[0], dict(zip(labels, base)))]

    for j in range(1, k):
        rotated = base @ _orthonormal_map(rng, dims[0], dims[j])
        noise = rng.normal(size=(n, dims[j]))
        noise /= np.linalg.norm(noise, axis=1, keepdims=True)
        mixed = (1.0 - diversity) * rotated + diversity * noise
        mixed /= np.linalg.norm(mixed, axis=1, keepdims=True)
        spaces.append(EmbeddingSpace(f"space_{j}", dims[j], dict(zip(labels, mixed))))
    return spaces


def gen_synthetic_taxonomy(labels: list[str], group_size: int = 3) -> tuple[str, dict[str, str]]:
    """Balanced two-level is-a hierarchy over the labels.

    Returns (edge-list text with a !root directive, identity label map).
    """
    lines = ["!root root"]
    for i, label in enumerate(labels):
        group = f"group{i // group_size}"
        lines.append(f"{group} root")
        lines.append(f"{label} {group}")
    # duplicate group->root edges are harmless but keep the file tidy
    seen: set[str] = set()
    unique = []
    for line in lines:
        if line not in seen:
            seen.add(line)
            unique.append(line)
    label_map = {label: label for label in labels}
    return "\n".join(unique) + "\n", label_map


def write_dataset_csv(path: str, X: np.ndarray, y: np.ndarray | None = None, prefix: str = "ex"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["example_id", "label"] + [f"f{i}" for i in range(X.shape[1])]
        writer.writerow(header)
        for i, row in enumerate(X):
            label = int(y[i]) if y is not None else -1
            writer.writerow([f"{prefix}_{i}", label] + [repr(float(v)) for v in row])


def read_dataset_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    X, y = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_features = len(header) - 2
        for row in reader:
            y.append(int(row[1]))
            X.append([float(v) for v in row[2 : 2 + n_features]])
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.intp)
