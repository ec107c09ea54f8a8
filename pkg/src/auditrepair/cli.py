"""Command line entry point: ``auditrepair <command>``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 infeasible
intervention.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import yaml

from .data import AgeGroup, SynthConfig, generate_synthetic, table2_replica, write_csv
from .errors import AuditRepairError, ConfigError
from .harness import (ALL_SETTINGS, ExperimentConfig, Model, Setting, emit_reports, run_rq3, run_rq4,
                      run_setting)

DEFAULT_LEVELS = (0.0, 0.2, 0.4, 0.6, 0.8)


def _experiment(opts: dict, settings=None, model=None) -> ExperimentConfig:
    """Build a config from flags; a ``--config`` file overrides any flag it sets."""
    raw = {
        "k_folds": opts["k_folds"],
        "budget_rate": opts["budget"],
        "seeds": list(opts["seed"]) or [0],
        "n_jobs": opts["n_jobs"],
        "model": model or opts.get("model") or Model.FOREST.value,
        "settings": list(settings or opts.get("setting") or [s.value for s in ALL_SETTINGS]),
    }
    if opts.get("data"):
        raw["data_source"] = {"csv": opts["data"]}
    elif opts.get("synth_config"):
        raw["data_source"] = {"synthetic": _read_mapping(opts["synth_config"])}
    if opts.get("config"):
        raw.update(_read_mapping(opts["config"]))
    if raw.get("data_source") is None:
        raw.pop("data_source", None)
    return ExperimentConfig.from_mapping(raw)


def _read_mapping(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return raw


def _common(fn):
    opts = [
        click.option("--data", type=click.Path(dir_okay=False), help="Audit CSV to use instead of synthetic data."),
        click.option("--synth-config", type=click.Path(exists=True, dir_okay=False),
                     help="YAML synthetic-data config (defaults to the built-in audit replica)."),
        click.option("--config", type=click.Path(exists=True, dir_okay=False),
                     help="YAML experiment config; its keys override the flags."),
        click.option("--k-folds", default=5, show_default=True),
        click.option("--budget", default=0.16, show_default=True, help="Predicted-positive rate."),
        click.option("--seed", multiple=True, type=int, help="Repeatable; default 0."),
        click.option("--n-jobs", default=1, show_default=True, help="Parallel fold workers."),
        click.option("--out", type=click.Path(file_okay=False), default="reports", show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _summary(result, title=""):
    if title:
        click.echo(title)
    for s in result.config.settings:
        for x in result.x_values:
            tag = "" if x is None else f" x={x:g}"
            click.echo(f"  {s.value:<20}{tag:>8}  FPRD {result.mean('fprd', s, x_value=x):+.4f}"
                       f"  AUC {result.mean('auc', s, x_value=x):.4f}")
    click.echo(f"  ({len(result.folds)} fold reports in {result.duration_s:.1f}s)")


@click.group()
def cli():
    """Label-bias repair experiments on audit-study hiring data."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="YAML synthetic-data config; default is the built-in audit replica.")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--delta", type=float, default=None, help="Planted gap; drops the pinned audit callback counts.")
@click.option("--n-records", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def generate(config_path, seed, delta, n_records, out):
    """Write a synthetic audit dataset with latent labels to CSV."""
    cfg = SynthConfig.from_file(config_path) if config_path else table2_replica()
    if delta is not None:
        cfg = replace(cfg, discrimination_delta=delta, group_callbacks=None)
    if n_records is not None:
        cfg = replace(cfg, n_records=n_records, group_callbacks=None)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    data = generate_synthetic(cfg)
    write_csv(data, out)
    c = data.group_counts()
    y, o = AgeGroup.YOUNG, AgeGroup.OLDER
    click.echo(f"wrote {len(data)} records to {out}; callbacks young {c[y, 1]}/{c[y, 1] + c[y, 0]}, "
               f"older {c[o, 1]}/{c[o, 1] + c[o, 0]}")


@cli.command()
@_common
@click.option("--setting", multiple=True, type=click.Choice([s.value for s in Setting]))
@click.option("--model", type=click.Choice([m.value for m in Model]), default=Model.FOREST.value,
              show_default=True)
def run(**opts):
    """Cross-validate the chosen settings and write reports."""
    result = run_setting(_experiment(opts))
    emit_reports(result, opts["out"])
    _summary(result)


def _per_model(opts, models, runner):
    for m in models:
        cfg = _experiment(opts, model=m)
        result = runner(cfg)
        emit_reports(result, Path(opts["out"]) / m.lower())
        _summary(result, m)


_MODELS = click.option("--model", "models", multiple=True, type=click.Choice([m.value for m in Model]),
                       help="Repeatable; default both model families.")


@cli.command()
@_common
@_MODELS
def rq1(models, **opts):
    """EBR on observed versus repaired test labels."""
    _per_model(opts, models or [m.value for m in Model], run_setting)


@cli.command()
@_common
@_MODELS
def rq2(models, **opts):
    """All four settings, ranked by |FPRD|."""
    for m in models or [m.value for m in Model]:
        result = run_setting(_experiment(opts, model=m))
        emit_reports(result, Path(opts["out"]) / m.lower())
        ranked = sorted(result.config.settings, key=lambda s: abs(result.mean("fprd", s)))
        _summary(result, m)
        click.echo("  ranking by |FPRD|: " + " < ".join(s.value for s in ranked))


@cli.command()
@_common
@_MODELS
@click.option("--target-gap", default=0.10, show_default=True)
def rq3(models, target_gap, **opts):
    """Widen the age gap and compare the EBR discrepancy before and after."""
    for m in models or [Model.FOREST.value]:
        base, doubled = run_rq3(_experiment(opts, model=m), target_gap)
        out = Path(opts["out"]) / m.lower()
        emit_reports(base, out / "original")
        emit_reports(doubled, out / "doubled")
        d0, d1 = base.discrepancy(), doubled.discrepancy(target_gap)
        click.echo(f"{m}: discrepancy {d0:+.4f} -> {d1:+.4f} (factor {d1 / d0:.2f})" if d0 else
                   f"{m}: discrepancy {d0:+.4f} -> {d1:+.4f}")


@cli.command()
@_common
@_MODELS
@click.option("--level", "levels", multiple=True, type=float, help=f"Repeatable; default {DEFAULT_LEVELS}.")
def rq4(models, levels, **opts):
    """Sweep the Spanish-fluency disparity."""
    for m in models or [Model.FOREST.value]:
        result = run_rq4(_experiment(opts, model=m), levels or DEFAULT_LEVELS)
        emit_reports(result, Path(opts["out"]) / m.lower())
        _summary(result, m)


@cli.command()
@click.argument("report_dir", type=click.Path(exists=True, file_okay=False))
def report(report_dir):
    """Print the aggregate table of a finished run."""
    path = Path(report_dir) / "aggregate.json"
    if not path.exists():
        raise ConfigError(f"{report_dir} has no aggregate.json")
    body = json.loads(path.read_text(encoding="utf-8"))
    click.echo(f"model {body['model']}, seeds {body['seeds']}, {body['k_folds']} folds")
    for a in body["aggregates"]:
        x = "" if a["x_value"] is None else f"{a['x_label']}={a['x_value']:g}"
        click.echo(f"  {a['setting']:<20} {a['label_source']:<9} {x:<22} "
                   f"FPRD {a['fprd_mean']:+.4f} ± {a['fprd_std']:.4f}  "
                   f"AUC {a['auc_mean']:.4f} ± {a['auc_std']:.4f}  n={a['n_folds']}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except AuditRepairError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
