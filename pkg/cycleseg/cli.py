"""
Command-line interface.

    python manage.py train --iterations 500 --seed 1
    python manage.py eval --checkpoint runs/train/model.ckpt --steps 7 --per-step
    python manage.py strategy-bench --config bench.env

Every RunConfig key is also a flag; `--config` reads a key=value file first.
Exit codes: 0 success, 1 verification failure, 2 usage/config error, 3 I/O error.
"""

import functools
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional

import click

from . import run_pipeline, settings, verdicts
from .errors import (
    CombinatorialBlowup,
    ConfigError,
    CycleSegError,
    FormatError,
    GroupTooSmall,
    InvalidConfig,
    IoError,
)
from .imageio import save_dataset
from .runconfig import RunConfig, load_run_config, write_resolved

EXIT_VERIFICATION = 1
EXIT_USAGE = 2
EXIT_IO = 3

_USAGE_ERRORS = (ConfigError, InvalidConfig, GroupTooSmall, CombinatorialBlowup)
_IO_ERRORS = (IoError, FormatError, OSError)


def _root_cause(exc: BaseException) -> BaseException:
    """Follow `raise ... from` links down to the first package or OS error."""
    current: Optional[BaseException] = exc
    while current is not None:
        if isinstance(current, (CycleSegError, OSError)):
            return current
        current = current.__cause__
    return exc


def exit_codes(fn):
    """Translate configuration and I/O failures into exit codes 2 and 3."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (RuntimeError, CycleSegError, OSError) as e:
            cause = _root_cause(e)
            if isinstance(cause, _USAGE_ERRORS):
                code = EXIT_USAGE
            elif isinstance(cause, _IO_ERRORS):
                code = EXIT_IO
            else:
                raise
            click.echo(f"❌ {type(cause).__name__}: {cause}", err=True)
            sys.exit(code)
    return wrapper


def config_options(fn):
    """Add --config plus one string flag per RunConfig key (`--held_out` or `--held-out`)."""
    for f in reversed(fields(RunConfig)):
        flags = sorted({f"--{f.name}", f"--{f.name.replace('_', '-')}"})
        fn = click.option(*flags, f.name, default=None, help=f"RunConfig key (default: {f.default!r})")(fn)
    return click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                        help="key=value run configuration file")(fn)


def resolve(config_path: Optional[str], overrides) -> RunConfig:
    return load_run_config(config_path, overrides)


def output_dir(cfg: RunConfig, command: str) -> Path:
    return Path(cfg.output_dir) if cfg.output_dir else settings.OUTPUT_DIR / command


@click.group()
def cli():
    """Co-segmentation with cycle refinement on a numpy autodiff engine."""
    settings.configure_logging()


@cli.command()
@config_options
@exit_codes
def train(config_path, **overrides):
    """Train a model and write checkpoint, training log and curve."""
    cfg = resolve(config_path, overrides)
    summary = run_pipeline.train_model(cfg, output_dir(cfg, "train"))
    click.echo(f"checkpoint: {summary['checkpoint']}")


@cli.command(name="eval")
@click.option("--per-step", is_flag=True, help="Score and dump masks after every refinement step")
@config_options
@exit_codes
def eval_command(per_step, config_path, **overrides):
    """Evaluate a checkpoint on the held-out test pairs."""
    cfg = resolve(config_path, overrides)
    summary = run_pipeline.evaluate_model(cfg, output_dir(cfg, "eval"), per_step=per_step)
    click.echo(f"metrics: {summary['metrics']}")


@cli.command(name="group-eval")
@config_options
@exit_codes
def group_eval_command(config_path, **overrides):
    """Group segmentation of held-out classes with one strategy and k."""
    cfg = resolve(config_path, overrides)
    table = run_pipeline.run_group_eval(cfg, output_dir(cfg, "group-eval"))
    click.echo(table.to_string(index=False))


@cli.command(name="strategy-bench")
@config_options
@exit_codes
def strategy_bench_command(config_path, **overrides):
    """Group segmentation over every (strategy, k, class) cell."""
    cfg = resolve(config_path, overrides)
    table = run_pipeline.run_strategy_bench(cfg, output_dir(cfg, "strategy-bench"))
    click.echo(table.to_string(index=False))


@cli.command()
@click.option("--scope", type=click.Choice(["ops", "modules", "full", "all"]), default="all", show_default=True)
@config_options
@exit_codes
def gradcheck(scope, config_path, **overrides):
    """Compare tape gradients with central finite differences."""
    cfg = resolve(config_path, overrides)
    out = output_dir(cfg, "gradcheck")
    results, passed = run_pipeline.run_gradcheck(scope, cfg.seed, out)
    write_resolved(cfg, out / run_pipeline.RESOLVED_CONFIG)
    for r in results:
        mark = "✅" if r.passed else "❌"
        click.echo(f"{mark} {r.scope:<8} {r.component:<20} {r.worst_rel_err:.3e} (tol {r.tolerance:.0e})")
    if not passed:
        sys.exit(EXIT_VERIFICATION)


@cli.command(name="gen-data")
@config_options
@exit_codes
def gen_data(config_path, **overrides):
    """Write train/, val/ and test/ splits as PPM/PGM files with manifests."""
    cfg = resolve(config_path, overrides)
    out = output_dir(cfg, "data")
    datasets = run_pipeline.build_datasets(cfg)
    for split in ("train", "val", "test"):
        manifest = save_dataset(datasets[split], out / split)
        click.echo(f"{split}: {manifest}")
    write_resolved(cfg, out / run_pipeline.RESOLVED_CONFIG)


@cli.command()
@click.option("--study", type=click.Choice(list(run_pipeline.ABLATION_STUDIES)), default="exchange", show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True, help="Comma-separated seeds")
@config_options
@exit_codes
def ablation(study, seeds, config_path, **overrides):
    """Train and test every variant of an ablation study per seed."""
    cfg = resolve(config_path, overrides)
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"Invalid --seeds value {seeds!r}") from e
    table = run_pipeline.run_ablation(cfg, study, seed_list, output_dir(cfg, f"ablation-{study}"))
    click.echo(table.groupby("variant", sort=False)[["precision", "jaccard"]].mean().to_string())


@cli.command()
@click.argument("study", type=click.Choice(list(verdicts.STUDIES)))
@click.argument("artifact_dir", type=click.Path(file_okay=False))
@exit_codes
def verdict(study, artifact_dir):
    """Judge a study's artifacts and write summary.txt; exit 1 on FAIL."""
    checks = verdicts.judge(study, artifact_dir)
    passed = verdicts.write_summary(study, checks, Path(artifact_dir) / "summary.txt")
    for check in checks:
        mark = "✅" if check.passed else "❌"
        click.echo(f"{mark} {check.name:<24} {check.detail}")
    if not passed:
        sys.exit(EXIT_VERIFICATION)


def main() -> None:
    cli()
