"""Command-line entry points for the desk-scale experiment pipeline."""

from __future__ import annotations

from pathlib import Path

import click

from . import experiment


def _config(ctx) -> dict[str, str]:
    overrides = {}
    if ctx.obj.get("seed") is not None:
        # one global seed offsets every component seed deterministically
        base = ctx.obj["seed"]
        overrides = {
            "dataset.seed": str(base),
            "codebook.seed": str(base + 1),
            "train.seed": str(base + 2),
            "ensemble.seed_base": str(base + 100),
            "surrogate.seed": str(base + 999),
        }
    return experiment.load_config(ctx.obj.get("config"), overrides)


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None, help="Flat key = value config file.")
@click.option("--seed", type=int, default=None, help="Override all component seeds from one base value.")
@click.option("--out-dir", type=click.Path(), default="runs/default", show_default=True)
@click.pass_context
def main(ctx, config, seed, out_dir):
    """Synthetic experiments for embedding-supervised OOD detection."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = config
    ctx.obj["seed"] = seed
    ctx.obj["out_dir"] = Path(out_dir)


def _run_stage(ctx, stage):
    cfg = _config(ctx)
    out = ctx.obj["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    artifacts = stage(cfg, out)
    for artifact in artifacts:
        click.echo(artifact)


@main.command("gen-data")
@click.pass_context
def gen_data(ctx):
    """Generate the synthetic train/val/test and OOD splits."""
    _run_stage(ctx, experiment.do_gen_data)


@main.command("gen-embeddings")
@click.pass_context
def gen_embeddings(ctx):
    """Generate the synthetic embedding-space files."""
    _run_stage(ctx, experiment.do_gen_embeddings)


@main.command("train")
@click.pass_context
def train_cmd(ctx):
    """Train the configured models and write checkpoints."""
    _run_stage(ctx, experiment.do_train)


@main.command("eval-ood")
@click.pass_context
def eval_ood(ctx):
    """Score in/out test sets and emit detection reports and histograms."""
    _run_stage(ctx, experiment.do_eval_ood)


@main.command("eval-adv")
@click.pass_context
def eval_adv(ctx):
    """Run the black-box sign-gradient attack and the agreement detectors."""
    _run_stage(ctx, experiment.do_eval_adv)


@main.command("eval-semantic")
@click.pass_context
def eval_semantic(ctx):
    """Taxonomy-relatedness table for each model's misclassifications."""
    _run_stage(ctx, experiment.do_eval_semantic)


@main.command("report")
@click.pass_context
def report(ctx):
    """Run the full pipeline end-to-end and write the run manifest."""
    cfg = _config(ctx)
    out = ctx.obj["out_dir"]
    manifest = experiment.run_experiment(cfg, out)
    click.echo(f"config_hash {manifest.config_hash}")
    click.echo(str(out / "manifest.txt"))


if __name__ == "__main__":
    main()
