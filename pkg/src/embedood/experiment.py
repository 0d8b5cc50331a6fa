"""Desk-scale experiment orchestration.

Reads a flat ``key = value`` config, generates synthetic data and
codebooks, trains the requested models (multi-embed variants, softmax
baseline, ensemble, surrogate), and emits every evaluation artifact as
CSV: detection reports, score histograms, semantic-relatedness tables,
and the adversarial detection comparison. Identical configs produce
bit-identical metric outputs.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import (
    agreement_counts,
    batch_ranking_spreads,
    detection_rates,
    ensemble_agreement_counts,
    fgsm_batch,
    matched_frr_detection,
    write_adversarial_batch,
    write_spread_histogram,
)
from .decoder import batch_ood_scores, batch_soft_decode
from .embeddings import build_codebook, parse_embedding_file, serialize_space
from .estimator import MultiEmbeddingClassifier, SoftmaxClassifier, alpha_at_tpr
from .metrics import (
    DetectionReport,
    ScoreSet,
    evaluate_detection,
    odin_grid_search,
    odin_score,
    write_report,
    write_scoreset,
)
from .model import load_model, save_model
from .synth import (
    gen_synthetic_codebooks,
    gen_synthetic_dataset,
    gen_synthetic_taxonomy,
    read_dataset_csv,
    write_dataset_csv,
)
from .taxonomy import avg_semantic_scores, load_taxonomy, parse_label_map

__all__ = [
    "DEFAULT_CONFIG",
    "RunManifest",
    "parse_config_text",
    "load_config",
    "config_hash",
    "do_gen_data",
    "do_gen_embeddings",
    "do_train",
    "do_eval_ood",
    "do_eval_adv",
    "do_eval_semantic",
    "run_experiment",
]

DEFAULT_CONFIG: dict[str, str] = {
    "dataset.n_in_classes": "8",
    "dataset.n_ood_classes": "4",
    "dataset.input_dim": "16",
    "dataset.samples_per_class": "500",
    "dataset.separation": "1.0",
    "dataset.ood_scale": "0.25",
    "dataset.seed": "11",
    "dataset.val_fraction": "0.2",
    "dataset.test_fraction": "0.2",
    "dataset.ood_val_fraction": "0.2",
    "codebook.k": "5",
    "codebook.dim": "12",
    "codebook.seed": "22",
    "codebook.diversity": "0.8",
    "model.trunk": "32",
    "model.head_hidden": "16",
    "train.epochs": "15",
    "train.batch_size": "64",
    "train.optimizer": "sgd_momentum",
    "train.lr": "0.05",
    "train.momentum": "0.9",
    "train.weight_decay": "0.0005",
    "train.seed": "33",
    "ensemble.size": "5",
    "ensemble.seed_base": "100",
    "surrogate.seed": "999",
    "surrogate.trunk": "24",
    "odin.t_grid": "1,10,100,1000",
    "odin.eps_grid": "0,0.001,0.004",
    "odin.calibration_cap": "80",
    "adv.eps_fraction": "0.25",
    "adv.sample_cap": "300",
    "adv.target_frr": "0.03",
    "eval.models": "baseline,odin,ensemble,embed1,embed3,embed5",
    "histogram.bins": "30",
    "semantic.group_size": "3",
}


@dataclass
class RunManifest:
    config_hash: str
    seeds: dict[str, int]
    artifacts: list[str] = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = __version__

    def write(self, path: str):
        with open(path, "w") as fh:
            fh.write(f"config_hash = {self.config_hash}\n")
            fh.write(f"version = {self.version}\n")
            fh.write(f"wall_clock_seconds = {self.wall_clock:.3f}\n")
            for name, seed in sorted(self.seeds.items()):
                fh.write(f"seed.{name} = {seed}\n")
            for artifact in self.artifacts:
                fh.write(f"artifact = {artifact}\n")


def parse_config_text(text: str) -> dict[str, str]:
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def load_config(path: str | None = None, overrides: dict[str, str] | None = None) -> dict[str, str]:
    cfg = dict(DEFAULT_CONFIG)
    if path is not None:
        cfg.update(parse_config_text(Path(path).read_text()))
    if overrides:
        cfg.update(overrides)
    return cfg


def config_hash(cfg: dict[str, str]) -> str:
    canon = "\n".join(f"{k} = {cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _int(cfg, key):
    return int(cfg[key])


def _float(cfg, key):
    return float(cfg[key])


def _floats(cfg, key):
    return [float(v) for v in cfg[key].split(",") if v.strip()]


def _strs(cfg, key):
    return [v.strip() for v in cfg[key].split(",") if v.strip()]


def _trunk(cfg, key):
    return tuple(int(v) for v in cfg[key].split(",") if v.strip())


def _write_meta(path: Path, meta: dict):
    with open(path, "w") as fh:
        for key, value in meta.items():
            fh.write(f"{key} = {value}\n")


def _read_meta(path: Path) -> dict[str, str]:
    return parse_config_text(path.read_text())


def do_gen_data(cfg: dict[str, str], out_dir: Path) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    data = gen_synthetic_dataset(
        n_in_classes=_int(cfg, "dataset.n_in_classes"),
        n_ood_classes=_int(cfg, "dataset.n_ood_classes"),
        input_dim=_int(cfg, "dataset.input_dim"),
        samples_per_class=_int(cfg, "dataset.samples_per_class"),
        separation=_float(cfg, "dataset.separation"),
        ood_scale=_float(cfg, "dataset.ood_scale"),
        seed=_int(cfg, "dataset.seed"),
        val_fraction=_float(cfg, "dataset.val_fraction"),
        test_fraction=_float(cfg, "dataset.test_fraction"),
        ood_val_fraction=_float(cfg, "dataset.ood_val_fraction"),
    )
    artifacts = []
    for name, X, y in [
        ("train", data.X_train, data.y_train),
        ("val", data.X_val, data.y_val),
        ("test_in", data.X_test, data.y_test),
        ("ood_val", data.X_ood_val, None),
        ("ood_test", data.X_ood_test, None),
    ]:
        path = out_dir / f"{name}.csv"
        write_dataset_csv(str(path), X, y, prefix=name)
        artifacts.append(str(path))

    meta_path = out_dir / "dataset_meta.txt"
    _write_meta(
        meta_path,
        {
            "input_lo": repr(data.input_range[0]),
            "input_hi": repr(data.input_range[1]),
            "in_labels": ",".join(data.in_labels),
            "ood_labels": ",".join(data.ood_labels),
        },
    )
    artifacts.append(str(meta_path))

    tax_text, label_map = gen_synthetic_taxonomy(
        data.in_labels + data.ood_labels, group_size=_int(cfg, "semantic.group_size")
    )
    (out_dir / "taxonomy.txt").write_text(tax_text)
    (out_dir / "label_map.txt").write_text(
        "".join(f"{k} {v}\n" for k, v in label_map.items())
    )
    artifacts += [str(out_dir / "taxonomy.txt"), str(out_dir / "label_map.txt")]
    return artifacts


def do_gen_embeddings(cfg: dict[str, str], out_dir: Path) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = _read_meta(out_dir / "dataset_meta.txt")
    labels = meta["in_labels"].split(",")
    k = _int(cfg, "codebook.k")
    dims = [_int(cfg, "codebook.dim")] * k
    spaces = gen_synthetic_codebooks(
        labels=labels,
        k=k,
        dims=dims,
        seed=_int(cfg, "codebook.seed"),
        diversity=_float(cfg, "codebook.diversity"),
    )
    emb_dir = out_dir / "embeddings"
    emb_dir.mkdir(exist_ok=True)
    artifacts = []
    for i, space in enumerate(spaces):
        path = emb_dir / f"space_{i}.txt"
        path.write_text(serialize_space(space, fmt="headered"))
        artifacts.append(str(path))
    return artifacts


def _load_codebook(cfg, out_dir: Path, k: int):
    meta = _read_meta(out_dir / "dataset_meta.txt")
    labels = meta["in_labels"].split(",")
    spaces = [
        parse_embedding_file(str(out_dir / "embeddings" / f"space_{i}.txt"),
                             fmt="headered", name=f"space_{i}")
        for i in range(k)
    ]
    return build_codebook(spaces, labels)


def _train_hyperparams(cfg):
    return {
        "epochs": _int(cfg, "train.epochs"),
        "batch_size": _int(cfg, "train.batch_size"),
        "optimizer": cfg["train.optimizer"],
        "lr": _float(cfg, "train.lr"),
        "momentum": _float(cfg, "train.momentum"),
        "weight_decay": _float(cfg, "train.weight_decay"),
    }


def _embed_counts(cfg) -> dict[str, int]:
    k = _int(cfg, "codebook.k")
    requested = {}
    for name in _strs(cfg, "eval.models"):
        if name.startswith("embed"):
            count = int(name[len("embed") :])
            if count > k:
                raise ValueError(f"{name} requested but only {k} codebooks configured")
            requested[name] = count
    return requested


def do_train(cfg: dict[str, str], out_dir: Path) -> list[str]:
    X_train, y_train = read_dataset_csv(str(out_dir / "train.csv"))
    hp = _train_hyperparams(cfg)
    trunk = _trunk(cfg, "model.trunk")
    head_hidden = _int(cfg, "model.head_hidden")
    seed = _int(cfg, "train.seed")
    n_classes = _int(cfg, "dataset.n_in_classes")
    models = _strs(cfg, "eval.models")
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    artifacts = []

    codebook_full = _load_codebook(cfg, out_dir, _int(cfg, "codebook.k"))

    def common_kwargs():
        return dict(
            trunk=trunk,
            head_hidden=head_hidden,
            epochs=hp["epochs"],
            batch_size=hp["batch_size"],
            optimizer=hp["optimizer"],
            lr=hp["lr"],
            momentum=hp["momentum"],
            weight_decay=hp["weight_decay"],
        )

    for name, count in _embed_counts(cfg).items():
        sub = _load_codebook(cfg, out_dir, count)
        clf = MultiEmbeddingClassifier(codebook=sub, seed=seed, **common_kwargs())
        clf.fit(X_train, y_train)
        path = ckpt_dir / f"{name}.ckpt"
        save_model(clf.model_, str(path), epoch=hp["epochs"])
        artifacts.append(str(path))

    if "baseline" in models or "odin" in models:
        clf = SoftmaxClassifier(n_classes=n_classes, seed=seed, **common_kwargs())
        clf.fit(X_train, y_train)
        path = ckpt_dir / "baseline.ckpt"
        save_model(clf.model_, str(path), epoch=hp["epochs"])
        artifacts.append(str(path))

    if "ensemble" in models:
        base = _int(cfg, "ensemble.seed_base")
        for i in range(_int(cfg, "ensemble.size")):
            clf = SoftmaxClassifier(n_classes=n_classes, seed=base + i, **common_kwargs())
            clf.fit(X_train, y_train)
            path = ckpt_dir / f"ensemble_{i}.ckpt"
            save_model(clf.model_, str(path), epoch=hp["epochs"])
            artifacts.append(str(path))

    # black-box surrogate: same data, different seed and trunk width
    surrogate = SoftmaxClassifier(
        n_classes=n_classes,
        seed=_int(cfg, "surrogate.seed"),
        **{**common_kwargs(), "trunk": _trunk(cfg, "surrogate.trunk")},
    )
    surrogate.fit(X_train, y_train)
    path = ckpt_dir / "surrogate.ckpt"
    save_model(surrogate.model_, str(path), epoch=hp["epochs"])
    artifacts.append(str(path))
    _ = codebook_full
    return artifacts


def _ensemble_models(cfg, out_dir: Path):
    return [
        load_model(str(out_dir / "checkpoints" / f"ensemble_{i}.ckpt"))
        for i in range(_int(cfg, "ensemble.size"))
    ]


def _ensemble_probs(members, X):
    probs = None
    for member in members:
        logits = member.logits(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)
        probs = p if probs is None else probs + p
    return probs / len(members)


def _msp_scores(model, X):
    logits = model.logits(X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).max(axis=1)


def do_eval_ood(cfg: dict[str, str], out_dir: Path) -> list[str]:
    X_test, y_test = read_dataset_csv(str(out_dir / "test_in.csv"))
    X_ood, _ = read_dataset_csv(str(out_dir / "ood_test.csv"))
    X_val, _ = read_dataset_csv(str(out_dir / "val.csv"))
    X_ood_val, _ = read_dataset_csv(str(out_dir / "ood_val.csv"))
    models = _strs(cfg, "eval.models")
    artifacts = []
    reports: dict[str, DetectionReport] = {}

    def record(name: str, scores: ScoreSet):
        path = out_dir / f"scores_{name}.csv"
        write_scoreset(str(path), scores)
        artifacts.append(str(path))
        reports[name] = evaluate_detection(scores)

    if "baseline" in models:
        model = load_model(str(out_dir / "checkpoints" / "baseline.ckpt"))
        record("baseline", ScoreSet(_msp_scores(model, X_test), _msp_scores(model, X_ood)))

    if "odin" in models:
        model = load_model(str(out_dir / "checkpoints" / "baseline.ckpt"))
        cap = _int(cfg, "odin.calibration_cap")
        t_star, eps_star = odin_grid_search(
            model,
            X_val[:cap],
            X_ood_val[:cap],
            t_grid=_floats(cfg, "odin.t_grid"),
            eps_grid=_floats(cfg, "odin.eps_grid"),
        )
        ins = np.array([odin_score(model, x, t_star, eps_star) for x in X_test])
        outs = np.array([odin_score(model, x, t_star, eps_star) for x in X_ood])
        record("odin", ScoreSet(ins, outs))

    if "ensemble" in models:
        members = _ensemble_models(cfg, out_dir)
        record(
            "ensemble",
            ScoreSet(
                _ensemble_probs(members, X_test).max(axis=1),
                _ensemble_probs(members, X_ood).max(axis=1),
            ),
        )

    embed_scores = {}
    for name, count in _embed_counts(cfg).items():
        model = load_model(str(out_dir / "checkpoints" / f"{name}.ckpt"))
        in_out = model.predict_vectors(X_test)
        ood_out = model.predict_vectors(X_ood)
        scores = ScoreSet(batch_ood_scores(in_out), batch_ood_scores(ood_out))
        embed_scores[name] = (model, scores, in_out)
        record(name, scores)

    report_path = out_dir / "detection_report.csv"
    write_report(str(report_path), reports)
    artifacts.append(str(report_path))

    # norm histogram and the correctness/OOD median comparison use the
    # widest multi-embed model available
    if embed_scores:
        widest = max(embed_scores, key=lambda n: int(n[len("embed") :]))
        model, scores, in_out = embed_scores[widest]
        hist_path = out_dir / "norm_histogram.csv"
        _write_score_histogram(
            str(hist_path), scores, bins=_int(cfg, "histogram.bins")
        )
        artifacts.append(str(hist_path))

        codebook = _load_codebook(cfg, out_dir, int(widest[len("embed") :]))
        predicted = batch_soft_decode(in_out, codebook)
        correct = predicted == y_test
        alpha = alpha_at_tpr(batch_ood_scores(model.predict_vectors(X_val)))
        medians_path = out_dir / "norm_medians.csv"
        with open(medians_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "median_score", "count"])
            writer.writerow(
                ["correct", repr(float(np.median(scores.in_scores[correct]))), int(correct.sum())]
            )
            writer.writerow(
                ["wrong", repr(float(np.median(scores.in_scores[~correct]))), int((~correct).sum())]
            )
            writer.writerow(
                ["ood", repr(float(np.median(scores.out_scores))), scores.out_scores.size]
            )
            writer.writerow(["alpha_at_95_tpr", repr(alpha), 0])
        artifacts.append(str(medians_path))
    return artifacts


def _write_score_histogram(path: str, scores: ScoreSet, bins: int):
    lo = min(scores.in_scores.min(), scores.out_scores.min())
    hi = max(scores.in_scores.max(), scores.out_scores.max())
    edges = np.linspace(lo, hi, bins + 1)
    count_in, _ = np.histogram(scores.in_scores, bins=edges)
    count_out, _ = np.histogram(scores.out_scores, bins=edges)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count_in", "count_out"])
        for i in range(bins):
            writer.writerow(
                [repr(float(edges[i])), repr(float(edges[i + 1])), int(count_in[i]), int(count_out[i])]
            )


def do_eval_adv(cfg: dict[str, str], out_dir: Path) -> list[str]:
    X_test, y_test = read_dataset_csv(str(out_dir / "test_in.csv"))
    meta = _read_meta(out_dir / "dataset_meta.txt")
    lo, hi = float(meta["input_lo"]), float(meta["input_hi"])
    eps = _float(cfg, "adv.eps_fraction") * (hi - lo)
    cap = _int(cfg, "adv.sample_cap")
    X, y = X_test[:cap], y_test[:cap]

    surrogate = load_model(str(out_dir / "checkpoints" / "surrogate.ckpt"))
    batch = fgsm_batch(surrogate, X, y, eps, (lo, hi), surrogate_id="surrogate.ckpt")
    artifacts = []
    batch_path = out_dir / "adv_batch.csv"
    write_adversarial_batch(str(batch_path), batch)
    artifacts.append(str(batch_path))

    widest = max(_embed_counts(cfg).items(), key=lambda kv: kv[1])
    codebook = _load_codebook(cfg, out_dir, widest[1])
    embed_model = load_model(str(out_dir / "checkpoints" / f"{widest[0]}.ckpt"))

    clean_out = embed_model.predict_vectors(X)
    adv_out = embed_model.predict_vectors(batch.perturbed)
    k = widest[1]
    clean_agree = agreement_counts(clean_out, codebook)
    adv_agree = agreement_counts(adv_out, codebook)

    members = _ensemble_models(cfg, out_dir)
    ens_clean = ensemble_agreement_counts(members, X)
    ens_adv = ensemble_agreement_counts(members, batch.perturbed)
    m = len(members)

    target_frr = _float(cfg, "adv.target_frr")
    emb_det, emb_frr = detection_rates(adv_agree < k, clean_agree < k)
    ens_det, ens_frr = detection_rates(ens_adv < m, ens_clean < m)
    emb_m_det, emb_m_frr, emb_m, emb_ok = matched_frr_detection(
        adv_agree, clean_agree, k, target_frr
    )
    ens_m_det, ens_m_frr, ens_m, ens_ok = matched_frr_detection(
        ens_adv, ens_clean, m, target_frr
    )

    report_path = out_dir / "adv_report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["detector", "setting", "detection_rate", "false_rejection_rate", "target_met"]
        )
        writer.writerow(["embed_agreement", f"unanimous_{k}", f"{100*emb_det:.2f}", f"{100*emb_frr:.2f}", 1])
        writer.writerow(["ensemble_agreement", f"unanimous_{m}", f"{100*ens_det:.2f}", f"{100*ens_frr:.2f}", 1])
        writer.writerow(
            ["embed_agreement_matched", f"m_{emb_m}", f"{100*emb_m_det:.2f}", f"{100*emb_m_frr:.2f}", int(emb_ok)]
        )
        writer.writerow(
            ["ensemble_agreement_matched", f"m_{ens_m}", f"{100*ens_m_det:.2f}", f"{100*ens_m_frr:.2f}", int(ens_ok)]
        )
    artifacts.append(str(report_path))

    spread_path = out_dir / "spread_histogram.csv"
    write_spread_histogram(
        str(spread_path),
        batch_ranking_spreads(clean_out, codebook),
        batch_ranking_spreads(adv_out, codebook),
    )
    artifacts.append(str(spread_path))
    return artifacts


def do_eval_semantic(cfg: dict[str, str], out_dir: Path) -> list[str]:
    X_test, y_test = read_dataset_csv(str(out_dir / "test_in.csv"))
    meta = _read_meta(out_dir / "dataset_meta.txt")
    labels = meta["in_labels"].split(",")
    label_map = parse_label_map(str(out_dir / "label_map.txt"))
    tax = load_taxonomy(str(out_dir / "taxonomy.txt"), label_map=label_map)

    rows = []

    def add_row(name: str, predicted: np.ndarray):
        correct = predicted == y_test
        pairs = [
            (labels[int(t)], labels[int(p)])
            for t, p in zip(y_test, predicted)
            if t != p
        ]
        if pairs:
            avg = avg_semantic_scores(tax, pairs)
            rows.append(
                [name, f"{100*correct.mean():.2f}", f"{avg.wup:.4f}", f"{avg.lch:.4f}", f"{avg.path:.4f}"]
            )
        else:
            rows.append([name, f"{100*correct.mean():.2f}", "n/a", "n/a", "n/a"])

    models = _strs(cfg, "eval.models")
    if "baseline" in models:
        model = load_model(str(out_dir / "checkpoints" / "baseline.ckpt"))
        add_row("baseline", np.argmax(model.logits(X_test), axis=1))
    for name, count in _embed_counts(cfg).items():
        model = load_model(str(out_dir / "checkpoints" / f"{name}.ckpt"))
        codebook = _load_codebook(cfg, out_dir, count)
        add_row(name, batch_soft_decode(model.predict_vectors(X_test), codebook))
    if "ensemble" in models:
        members = _ensemble_models(cfg, out_dir)
        add_row("ensemble", np.argmax(_ensemble_probs(members, X_test), axis=1))

    path = out_dir / "semantic_report.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "accuracy", "avg_wup", "avg_lch", "avg_path"])
        writer.writerows(rows)
    return [str(path)]


def run_experiment(cfg: dict[str, str], out_dir: str | Path) -> RunManifest:
    out_dir = Path(out_dir)
    start = time.monotonic()
    artifacts = []
    artifacts += do_gen_data(cfg, out_dir)
    artifacts += do_gen_embeddings(cfg, out_dir)
    artifacts += do_train(cfg, out_dir)
    artifacts += do_eval_ood(cfg, out_dir)
    artifacts += do_eval_adv(cfg, out_dir)
    artifacts += do_eval_semantic(cfg, out_dir)
    manifest = RunManifest(
        config_hash=config_hash(cfg),
        seeds={
            "dataset": _int(cfg, "dataset.seed"),
            "codebook": _int(cfg, "codebook.seed"),
            "train": _int(cfg, "train.seed"),
            "ensemble_base": _int(cfg, "ensemble.seed_base"),
            "surrogate": _int(cfg, "surrogate.seed"),
        },
        artifacts=artifacts,
        wall_clock=time.monotonic() - start,
    )
    manifest.write(str(out_dir / "manifest.txt"))
    return manifest
