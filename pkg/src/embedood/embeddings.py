"""Word-embedding file parsing and per-label codebook construction.

Supports the two common plain-text formats: word2vec-text (first line
``<count> <dim>``) and GloVe-text (records only, dimension inferred from
the first line). Codebooks stack unit-normalized target vectors for N
labels across K embedding spaces; per-space dimensionalities may differ.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EmbeddingSpace",
    "LabelCodebook",
    "EmbeddingParseError",
    "MissingLabelError",
    "parse_embedding_file",
    "parse_embedding_text",
    "serialize_space",
    "parse_alias_file",
    "build_codebook",
    "cosine_distance",
]


class EmbeddingParseError(ValueError):
    """Malformed embedding file (bad dimension, duplicate word, NaN, ...)."""


class MissingLabelError(KeyError):
    """One or more labels could not be resolved in an embedding space.

    ``pairs`` holds the offending (label, space_name) combinations.
    """

    def __init__(self, pairs):
        self.pairs = list(pairs)
        msg = ", ".join(f"({lbl!r}, {space!r})" for lbl, space in self.pairs)
        super().__init__(f"labels missing from embedding spaces: {msg}")

    def __str__(self):  # KeyError quotes its arg; keep the message readable
        return self.args[0]


@dataclass(frozen=True)
class EmbeddingSpace:
    """A named word -> vector map with a fixed dimensionality."""

    name: str
    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"embedding dim must be >= 1, got {self.dim}")
        for word, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"vector for {word!r} has shape {vec.shape}, expected ({self.dim},)"
                )

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class LabelCodebook:
    """Per-space target matrices for an ordered label set.

    ``targets[k]`` has shape (N, dims[k]); row i is the unit-normalized
    vector of ``labels[i]`` in space k.
    """

    labels: tuple[str, ...]
    space_names: tuple[str, ...]
    targets: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValueError("codebook needs at least 2 labels")
        if len(self.targets) < 1:
            raise ValueError("codebook needs at least 1 embedding space")
        n = len(self.labels)
        for name, mat in zip(self.space_names, self.targets):
            if mat.shape[0] != n:
                raise ValueError(f"target matrix for {name!r} has {mat.shape[0]} rows, expected {n}")
            norms = np.linalg.norm(mat, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ValueError(f"target rows for {name!r} are not unit-normalized")

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def n_spaces(self) -> int:
        return len(self.targets)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(mat.shape[1] for mat in self.targets)

    def label_index(self, label: str) -> int:
        return self.labels.index(label)


def _parse_record(line: str, lineno: int, expected_dim: int | None) -> tuple[str, np.ndarray]:
    parts = line.split()
    if len(parts) < 2:
        raise EmbeddingParseError(f"line {lineno}: malformed record {line!r}")
    word = parts[0]
    try:
        values = [float(tok) for tok in parts[1:]]
    except ValueError as exc:
        raise EmbeddingParseError(f"line {lineno}: non-numeric value ({exc})") from None
    if any(not math.isfinite(v) for v in values):
        raise EmbeddingParseError(f"line {lineno}: non-finite value in vector for {word!r}")
    if expected_dim is not None and len(values) != expected_dim:
        raise EmbeddingParseError(
            f"line {lineno}: expected {expected_dim} values for {word!r}, got {len(values)}"
        )
    return word, np.asarray(values, dtype=np.float64)


def parse_embedding_file(source, fmt: str = "headerless", name: str = "space") -> EmbeddingSpace:
    """Parse a text embedding file into an :class:`EmbeddingSpace`.

    ``source`` may be a path, a text stream, or a byte stream (decoded as
    UTF-8). ``fmt`` is ``"headered"`` (word2vec-text) or ``"headerless"``
    (GloVe-text).
    """
    if fmt not in ("headered", "headerless"):
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(source, (str,)):
        with open(source, "r", encoding="utf-8") as fh:
            return _parse_stream(fh, fmt, name)
    if isinstance(source, (bytes, bytearray)):
        return _parse_stream(io.StringIO(source.decode("utf-8")), fmt, name)
    if hasattr(source, "read") and "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8")
    return _parse_stream(source, fmt, name)


def parse_embedding_text(text: str, fmt: str = "headerless", name: str = "space") -> EmbeddingSpace:
    return parse_embedding_file(io.StringIO(text), fmt=fmt, name=name)


def _parse_stream(stream, fmt: str, name: str) -> EmbeddingSpace:
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    declared_count: int | None = None
    first_lineno = 1

    lines = enumerate(stream, start=1)
    if fmt == "headered":
        try:
            _, header = next(lines)
        except StopIteration:
            raise EmbeddingParseError("empty file") from None
        parts = header.split()
        if len(parts) != 2:
            raise EmbeddingParseError(f"line 1: expected header '<count> <dim>', got {header!r}")
        try:
            declared_count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise EmbeddingParseError(f"line 1: non-integer header {header!r}") from None
        if dim < 1:
            raise EmbeddingParseError(f"line 1: dim must be >= 1, got {dim}")
        first_lineno = 2

    for lineno, line in lines:
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        word, vec = _parse_record(line, lineno, dim)
        if dim is None:
            dim = vec.shape[0]
        if word in vectors:
            raise EmbeddingParseError(f"line {lineno}: duplicate word {word!r}")
        vectors[word] = vec

    if not vectors:
        raise EmbeddingParseError("empty file")
    if declared_count is not None and declared_count != len(vectors):
        raise EmbeddingParseError(
            f"header declares {declared_count} records, found {len(vectors)}"
        )
    assert dim is not None
    _ = first_lineno
    return EmbeddingSpace(name=name, dim=dim, vectors=vectors)


def serialize_space(space: EmbeddingSpace, fmt: str = "headerless") -> str:
    """Inverse of parsing: emit the space in the requested text format."""
    lines = []
    if fmt == "headered":
        lines.append(f"{len(space.vectors)} {space.dim}")
    for word, vec in space.vectors.items():
        lines.append(word + " " + " ".join(repr(float(v)) for v in vec))
    return "\n".join(lines) + "\n"


def parse_alias_file(source) -> dict[str, str]:
    """Two-column text file mapping class names to embedding words."""
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    aliases: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise EmbeddingParseError(f"alias line {lineno}: expected 2 columns, got {line!r}")
        aliases[parts[0]] = parts[1]
    return aliases


def build_codebook(
    spaces: list[EmbeddingSpace],
    labels: list[str],
    label_map: dict[str, str] | None = None,
) -> LabelCodebook:
    """Assemble a codebook of unit-normalized target rows for every label.

    ``label_map`` resolves class names to embedding words (multi-word
    class names and similar). Any label missing from any space is a hard
    error listing every offending (label, space) pair.
    """
    label_map = label_map or {}
    resolved = [label_map.get(lbl, lbl) for lbl in labels]

    missing = [
        (lbl, space.name)
        for lbl, word in zip(labels, resolved)
        for space in spaces
        if word not in space
    ]
    if missing:
        raise MissingLabelError(missing)

    targets = []
    for space in spaces:
        mat = np.stack([space.vectors[word] for word in resolved]).astype(np.float64)
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            bad = labels[int(np.argmin(norms))]
            raise ValueError(f"zero-norm embedding for label {bad!r} in space {space.name!r}")
        targets.append(mat / norms)

    return LabelCodebook(
        labels=tuple(labels),
        space_names=tuple(space.name for space in spaces),
        targets=tuple(targets),
    )


def cosine_distance(u, v) -> float:
    """Half of one minus the cosine similarity; 0 = same direction, 1 = opposite."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance undefined for zero-norm input")
    return 0.5 * (1.0 - float(np.dot(u, v)) / (nu * nv))
