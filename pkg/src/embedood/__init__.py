"""Multi-embedding-supervised classification with norm-based OOD detection."""

__version__ = "0.1.0"

from .embeddings import (  # noqa: F401
    EmbeddingSpace,
    LabelCodebook,
    build_codebook,
    cosine_distance,
    parse_embedding_file,
)
from .estimator import MultiEmbeddingClassifier, SoftmaxClassifier  # noqa: F401
from .metrics import DetectionReport, ScoreSet, evaluate_detection  # noqa: F401
