"""
``vaelab`` command line.

Exit codes: 0 success, 1 failed reproduction check or any other lab error,
2 configuration error (click usage errors also exit with 2).
"""

import functools
import os
import sys

import click
from loguru import logger
from pydantic import ValidationError

from .config import ExperimentConfig, load_experiment_config
from .datasets import ground_truth, load_csv, model_as_ground_truth
from .errors import ConfigError, LabError
from .interface import PathologyLab
from .models import NoiseSource, load_checkpoint
from .plotting import density_panel, manifold_panel, posterior_panel, scatter_panel
from .utils import GENERATOR_NAMES, TABLE_NAMES, configure_logging, derive_seed, to_numpy


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            logger.error(f"❌ {exc}")
            sys.exit(2)
        except LabError as exc:
            logger.error(f"❌ {exc}")
            sys.exit(1)

    return wrapper


def _load_config(path, **overrides):
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if path is not None:
        return load_experiment_config(path, **overrides)
    try:
        return ExperimentConfig(**overrides)
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ConfigError(error.get("msg", "invalid value"), key=str(error["loc"][0])) from exc


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.option("-q", "--quiet", is_flag=True, help="Warnings and errors only.")
def main(verbose, quiet):
    """Global-optima pathologies of mean-field Gaussian VAEs, at desk scale."""
    configure_logging(verbose, quiet)


@main.command()
@click.argument("kind", type=click.Choice(GENERATOR_NAMES))
@click.option("--n", "n", type=click.IntRange(min=3), default=9000, show_default=True, help="Total rows.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True)
@_handle_errors
def gen(kind, n, seed, out_dir):
    """Write KIND_train.csv, KIND_validation.csv and KIND_test.csv."""
    lab = PathologyLab(output_dir=out_dir)
    try:
        gt, parts, paths = lab.write_splits(kind, n, seed, out_dir)
    except OSError as exc:
        raise LabError(f"cannot write to {out_dir}: {exc}") from exc
    sizes = "/".join(str(len(parts[name])) for name in ("train", "validation", "test"))
    labels = f", labels: {gt.label_kind}" if gt.is_labeled else ""
    click.echo(f"{gt.name}: K={gt.latent_dim} D={gt.data_dim} prior={gt.prior} "
               f"σ²={gt.noise_variance.tolist()}{labels}, rows {sizes}")
    for path in paths:
        logger.info(f"💾 {path}")


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--version", "versions", type=int, multiple=True, help="Dataset versions (default: all in config).")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
@_handle_errors
def train(config_path, versions, output_dir):
    """Run the restart protocol of CONFIG_PATH and write checkpoints and histories."""
    config = _load_config(config_path, output_dir=output_dir)
    lab = PathologyLab(config)
    for version in versions or config.versions:
        logger.info(f"🚀 training {config.dataset}/{config.method} version {version}")
        _, report = lab.train_and_save(version)
        click.echo(report.format_table())


@main.command(name="eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("data_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(GENERATOR_NAMES), default=None, help="Ground truth for quadrature metrics.")
@click.option("--eta", type=float, default=None, help="Threshold of the posterior-mismatch split.")
@click.option("--method", type=click.Choice(["vae", "iwae", "lin"]), default="vae", show_default=True,
              help="Label of the report rows.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Defaults to diagnostics.csv next to the checkpoint.")
@_handle_errors
def evaluate(checkpoint, data_csv, kind, eta, method, seed, config_path, out_path):
    """Diagnostics of a trained CHECKPOINT on DATA_CSV."""
    model, meta = load_checkpoint(checkpoint)
    dataset = load_csv(data_csv)
    lab = PathologyLab(_load_config(config_path))
    gt = ground_truth(kind) if kind else None
    report = lab.evaluate(model, gt, dataset, method=method, seed=seed, eta=eta)
    report.hyperparameters["checkpoint_hash"] = meta["config_hash"]
    report.to_csv(out_path or os.path.join(os.path.dirname(checkpoint) or ".", "diagnostics.csv"))
    click.echo(report.format_table())


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--version", type=int, default=0, show_default=True)
@_handle_errors
def sweep(config_path, version):
    """Fit every grid cell and select the smallest validation smooth-kNN statistic."""
    config = _load_config(config_path)
    lab = PathologyLab(config)
    _, frame = lab.sweep(config.dataset, config.method, version, semi_supervised=config.semi_supervised)
    frame.insert(0, "config_hash", config.config_hash())
    path = lab.path("sweep.csv")
    os.makedirs(lab.output_dir, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"💾 sweep written to {path}")
    click.echo(frame.to_string(index=False))


@main.command()
@click.argument("table", type=click.Choice(TABLE_NAMES))
@click.option("--budget-ack", is_flag=True, help="Acknowledge the training budget of the table.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
@_handle_errors
def reproduce(table, budget_ack, config_path, output_dir):
    """Regenerate TABLE as CSV and check its orderings."""
    if table != "aabi1" and not budget_ack:
        raise click.UsageError(f"{table} trains many models; pass --budget-ack to run it")
    lab = PathologyLab(_load_config(config_path, output_dir=output_dir))
    summary = lab.reproduce(table)
    click.echo("=" * 20 + f" {table} " + "=" * 20)
    click.echo(summary.to_string(index=False))
    click.echo(f"✅ {table}: all checks passed")


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("data_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--kind", type=click.Choice(GENERATOR_NAMES), default=None, help="Also draw the ground-truth panels.")
@click.option("--seed", type=int, default=0, show_default=True)
@_handle_errors
def plot(checkpoint, data_csv, out_dir, kind, seed):
    """Scatter, density, posterior and manifold SVG panels."""
    model, _ = load_checkpoint(checkpoint)
    data = load_csv(data_csv)
    learned = to_numpy(model.sample(len(data), NoiseSource(derive_seed(seed, "plot"))))
    try:
        scatter_panel(data.x, learned, os.path.join(out_dir, "scatter.svg"))
        if model.is_labeled or model.latent_dim != 1 or model.data_dim != 2:
            logger.warning("⚠️ density, posterior and manifold panels need an unlabeled 1-D latent, 2-D model")
            return
        sources = [("learned", model_as_ground_truth(model))]
        if kind:
            sources.append(("true", ground_truth(kind)))
        for prefix, source in sources:
            density_panel(source, os.path.join(out_dir, f"{prefix}_density.svg"))
            posterior_panel(source, data.x[:3], os.path.join(out_dir, f"{prefix}_posterior.svg"))
            manifold_panel(source, os.path.join(out_dir, f"{prefix}_manifold.svg"))
    except OSError as exc:
        raise LabError(f"cannot write to {out_dir}: {exc}") from exc


@main.command()
@click.option("--kind", type=click.Choice(GENERATOR_NAMES), default="figure8", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--version", type=int, default=0, show_default=True)
@_handle_errors
def adv(kind, config_path, version):
    """Attack a classifier and defend it by projecting onto learned manifolds."""
    lab = PathologyLab(_load_config(config_path))
    frame = lab.adversarial_scenario(kind, version)
    path = lab.path(f"adv_{kind}_v{version}.csv")
    os.makedirs(lab.output_dir, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"💾 adversarial scenario written to {path}")
    click.echo(frame.to_string(index=False))


if __name__ == "__main__":
    main()
