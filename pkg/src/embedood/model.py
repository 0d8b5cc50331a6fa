"""Shared-trunk multi-head regression model and its training loop.

The model maps a feature vector through a fully-connected trunk into K
exclusive heads (FC -> ReLU -> FC -> FC), one per embedding space. Each
head regresses onto its space's target vector under a summed cosine
distance loss. A softmax variant reuses the identical trunk with a single
logit head for the comparator classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .embeddings import LabelCodebook

__all__ = [
    "ModelConfig",
    "MultiHeadModel",
    "TrainLog",
    "multi_embedding_loss",
    "train",
    "train_ensemble",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    trunk: tuple[int, ...]
    variant: str = "multi_embed"  # or "softmax"
    head_dims: tuple[int, ...] = ()  # K entries for multi_embed
    head_hidden: int = 16
    n_classes: int = 0  # softmax variant only

    def __post_init__(self):
        if self.variant not in ("multi_embed", "softmax"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "multi_embed" and len(self.head_dims) < 1:
            raise ValueError("multi_embed variant needs at least one head")
        if self.variant == "softmax" and self.n_classes < 2:
            raise ValueError("softmax variant needs n_classes >= 2")
        if self.input_dim < 1 or self.head_hidden < 1 or any(w < 1 for w in self.trunk):
            raise ValueError("all widths must be >= 1")

    @property
    def n_heads(self) -> int:
        return len(self.head_dims) if self.variant == "multi_embed" else 1

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "trunk": list(self.trunk),
            "variant": self.variant,
            "head_dims": list(self.head_dims),
            "head_hidden": self.head_hidden,
            "n_classes": self.n_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            input_dim=d["input_dim"],
            trunk=tuple(d["trunk"]),
            variant=d["variant"],
            head_dims=tuple(d["head_dims"]),
            head_hidden=d["head_hidden"],
            n_classes=d["n_classes"],
        )


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    # uniform fan-in scaling, range +-1/sqrt(fan_in)
    bound = 1.0 / np.sqrt(fan_in)
    w = ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = ad.Tensor(rng.uniform(-bound, bound, size=(fan_out,)), requires_grad=True)
    return w, b


class MultiHeadModel:
    """Trunk parameters are shared across heads; head parameters are exclusive."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)

        self.trunk_params: list[tuple[ad.Tensor, ad.Tensor]] = []
        width = config.input_dim
        for hidden in config.trunk:
            self.trunk_params.append(_init_layer(rng, width, hidden))
            width = hidden

        if config.variant == "multi_embed":
            out_dims = config.head_dims
        else:
            out_dims = (config.n_classes,)
        self.head_params: list[list[tuple[ad.Tensor, ad.Tensor]]] = []
        for d_out in out_dims:
            h = config.head_hidden
            self.head_params.append(
                [
                    _init_layer(rng, width, h),
                    _init_layer(rng, h, h),
                    _init_layer(rng, h, d_out),
                ]
            )

    @property
    def n_heads(self) -> int:
        return len(self.head_params)

    def shared_parameters(self) -> list[ad.Tensor]:
        return [t for pair in self.trunk_params for t in pair]

    def head_parameters(self, k: int) -> list[ad.Tensor]:
        return [t for pair in self.head_params[k] for t in pair]

    def parameters(self) -> list[ad.Tensor]:
        params = self.shared_parameters()
        for k in range(self.n_heads):
            params.extend(self.head_parameters(k))
        return params

    def named_parameters(self) -> dict[str, ad.Tensor]:
        named = {}
        for i, (w, b) in enumerate(self.trunk_params):
            named[f"trunk.{i}.weight"] = w
            named[f"trunk.{i}.bias"] = b
        for k, layers in enumerate(self.head_params):
            for j, (w, b) in enumerate(layers):
                named[f"head.{k}.{j}.weight"] = w
                named[f"head.{k}.{j}.bias"] = b
        return named

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def _trunk_forward(self, x: ad.Tensor) -> ad.Tensor:
        h = x
        for w, b in self.trunk_params:
            h = ad.relu(ad.add(ad.matmul(h, w), b))
        return h

    def forward(self, x) -> list[ad.Tensor]:
        """Run one example (p,) or a batch (B, p); returns K head outputs
        (or a single logits tensor for the softmax variant)."""
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        if x.shape[-1] != self.config.input_dim:
            raise ad.ShapeError(
                f"expected input of width {self.config.input_dim}, got shape {x.shape}"
            )
        h = self._trunk_forward(x)
        outputs = []
        for layers in self.head_params:
            (w1, b1), (w2, b2), (w3, b3) = layers
            z = ad.relu(ad.add(ad.matmul(h, w1), b1))
            z = ad.add(ad.matmul(z, w2), b2)  # no activation between FC2 and FC3
            z = ad.add(ad.matmul(z, w3), b3)
            outputs.append(z)
        return outputs

    def predict_vectors(self, X: np.ndarray) -> list[np.ndarray]:
        """Forward pass without gradient bookkeeping; plain arrays out."""
        return [t.values for t in self.forward(np.asarray(X, dtype=np.float64))]

    def logits(self, X: np.ndarray) -> np.ndarray:
        if self.config.variant != "softmax":
            raise ValueError("logits only available on the softmax variant")
        return self.forward(np.asarray(X, dtype=np.float64))[0].values


def multi_embedding_loss(outputs: list[ad.Tensor], codebook: LabelCodebook, y) -> ad.Tensor:
    """Sum over heads of cosine distance to the target row of label ``y``.

    For batched outputs, ``y`` is a vector of label indices and the result
    is the mean per-example loss.
    """
    if len(outputs) != codebook.n_spaces:
        raise ValueError(
            f"model has {len(outputs)} heads but codebook has {codebook.n_spaces} spaces"
        )
    batched = outputs[0].values.ndim == 2
    y_idx = np.atleast_1d(np.asarray(y, dtype=np.intp))
    total = None
    for k, out in enumerate(outputs):
        target = codebook.targets[k][y_idx] if batched else codebook.targets[k][y_idx[0]]
        norms = np.linalg.norm(np.atleast_2d(out.values), axis=1)
        if np.any(norms == 0.0):
            raise ValueError(f"head {k} produced a zero-norm output; cosine loss undefined")
        d = ad.cosine_distance_node(out, ad.Tensor(target))
        term = ad.scale(ad.tsum(d), 1.0 / d.values.size) if batched else d
        total = term if total is None else ad.add(total, term)
    return total


@dataclass
class TrainLog:
    """One entry per completed epoch."""

    mean_loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    mean_norm_correct: list[float] = field(default_factory=list)
    mean_norm_wrong: list[float] = field(default_factory=list)

    def append(self, loss: float, acc: float, norm_correct: float, norm_wrong: float):
        self.mean_loss.append(loss)
        self.accuracy.append(acc)
        self.mean_norm_correct.append(norm_correct)
        self.mean_norm_wrong.append(norm_wrong)

    @property
    def epochs(self) -> int:
        return len(self.mean_loss)


def _epoch_stats(model: MultiHeadModel, codebook, X, y):
    # local import: decoder depends on embeddings only, no cycle at runtime
    from .decoder import batch_ood_scores, batch_soft_decode

    outputs = model.predict_vectors(X)
    predicted = batch_soft_decode(outputs, codebook)
    scores = batch_ood_scores(outputs)
    correct = predicted == y
    acc = float(correct.mean())
    norm_c = float(scores[correct].mean()) if correct.any() else float("nan")
    norm_w = float(scores[~correct].mean()) if (~correct).any() else float("nan")
    return acc, norm_c, norm_w


def _softmax_epoch_stats(model: MultiHeadModel, X, y):
    logits = model.logits(X)
    predicted = np.argmax(logits, axis=1)
    correct = predicted == y
    return float(correct.mean()), float("nan"), float("nan")


def train(
    model: MultiHeadModel,
    dataset: tuple[np.ndarray, np.ndarray],
    *,
    epochs: int,
    batch_size: int = 64,
    optimizer: str = "sgd_momentum",
    optimizer_kwargs: dict | None = None,
    lr_drops: dict[int, float] | None = None,
    seed: int = 0,
    codebook: LabelCodebook | None = None,
) -> TrainLog:
    """Mini-batch gradient training; deterministic given the seed.

    Multi-embed models need the codebook for the loss; the softmax variant
    trains under cross-entropy on the same loop.
    """
    X, y = dataset
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if model.config.variant == "multi_embed":
        if codebook is None:
            raise ValueError("multi_embed training requires a codebook")
        if y.max(initial=0) >= codebook.n_labels:
            raise ValueError("dataset labels outside codebook label set")
    elif y.max(initial=0) >= model.config.n_classes:
        raise ValueError("dataset labels outside model class range")

    opt = ad.make_optimizer(optimizer, **(optimizer_kwargs or {}))
    rng = np.random.default_rng(seed)
    log = TrainLog()
    params = model.parameters()

    for epoch in range(epochs):
        if lr_drops and epoch in lr_drops:
            opt.lr /= lr_drops[epoch]
        order = rng.permutation(X.shape[0])
        losses = []
        for start in range(0, X.shape[0], batch_size):
            idx = order[start : start + batch_size]
            model.zero_grad()
            outputs = model.forward(X[idx])
            if model.config.variant == "multi_embed":
                loss = multi_embedding_loss(outputs, codebook, y[idx])
            else:
                loss = ad.cross_entropy(outputs[0], y[idx])
            ad.backward(loss)
            opt.step(params)
            losses.append(loss.item())
        if model.config.variant == "multi_embed":
            acc, norm_c, norm_w = _epoch_stats(model, codebook, X, y)
        else:
            acc, norm_c, norm_w = _softmax_epoch_stats(model, X, y)
        log.append(float(np.mean(losses)), acc, norm_c, norm_w)
    return log


def train_ensemble(
    config: ModelConfig,
    seeds: list[int],
    dataset: tuple[np.ndarray, np.ndarray],
    **train_kwargs,
) -> list[MultiHeadModel]:
    """Independently initialized softmax models, one per seed."""
    if config.variant != "softmax":
        raise ValueError("ensembles are built from the softmax variant")
    if len(set(seeds)) != len(seeds):
        raise ValueError("duplicate ensemble seeds defeat the method")
    models = []
    for seed in seeds:
        member = MultiHeadModel(config, seed=seed)
        train(member, dataset, seed=seed, **train_kwargs)
        models.append(member)
    return models


def save_model(model: MultiHeadModel, path: str, *, epoch: int = 0, extra: dict | None = None):
    meta = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "epoch": epoch,
        "init": "uniform_fan_in",
    }
    if extra:
        meta.update(extra)
    arrays = {name: p.values for name, p in model.named_parameters().items()}
    checkpoint.save_arrays(path, arrays, meta)


def load_model(path: str) -> MultiHeadModel:
    arrays, meta = checkpoint.load_arrays(path)
    model = MultiHeadModel(ModelConfig.from_dict(meta["config"]), seed=meta.get("seed", 0))
    named = model.named_parameters()
    for name, values in arrays.items():
        if name not in named:
            raise ValueError(f"unexpected parameter {name!r} in checkpoint")
        named[name].values = values
    return model
