"""Command-line entry points for the full QC workflow.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage/config errors.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from . import __version__
from .config import config_to_dict, load_config, save_config
from .datasets import load_labeled_samples
from .detectors import load_model, save_model, train_detector
from .errors import ConfigError, DmriqcError
from .evaluation import (
    FoldSpec,
    cross_dataset_eval,
    cross_validate,
    finetune_eval,
    flag_counts_by_volume,
    threshold_sweep,
    volume_truth,
    write_metrics_csv,
    write_summary_json,
)
from .pipeline import ThresholdConfig, qc_volume, write_report
from .simulate import ALL_KINDS, make_benchmark, write_phantom_set
from .volume import AXIAL, SAGITTAL, ExclusionRule, load_dwi


def _fail(exc: Exception) -> "click.exceptions.Exit":
    click.echo(f"error: {exc}", err=True)
    code = 2 if isinstance(exc, ConfigError) else 1
    return click.exceptions.Exit(code)


@click.group()
@click.version_option(__version__)
def main():
    """Diffusion MRI slice-QC toolkit."""


@main.command()
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--count", default=20, show_default=True)
@click.option("--shape", default="48x48x28", show_default=True, help="Volume grid as XxYxZ.")
@click.option("--gradients", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--noise", default=0.02, show_default=True)
@click.option("--prefix", default="phantom", show_default=True,
              help="Volume id prefix; keep distinct across datasets.")
def phantoms(out, count, shape, gradients, seed, noise, prefix):
    """Generate clean synthetic phantom volumes."""
    try:
        dims = tuple(int(t) for t in shape.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"bad shape {shape!r}, expected XxYxZ")
    if len(dims) != 3:
        raise click.BadParameter(f"bad shape {shape!r}, expected XxYxZ")
    try:
        paths = write_phantom_set(
            out, count, shape=dims, gradients=gradients, seed=seed, noise=noise, prefix=prefix
        )
    except DmriqcError as exc:
        raise _fail(exc)
    click.echo(f"wrote {len(paths)} clean volumes to {out}")


def _parse_mix(text: str) -> dict[str, float]:
    mix = {}
    for token in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in token:
            raise click.BadParameter(f"bad mix token {token!r}, expected kind=fraction")
        kind, _, frac = token.partition("=")
        if kind not in ALL_KINDS:
            raise click.BadParameter(f"unknown artifact kind {kind!r} (choose from {', '.join(ALL_KINDS)})")
        try:
            mix[kind] = float(frac)
        except ValueError:
            raise click.BadParameter(f"bad fraction {frac!r} for kind {kind!r}")
    return mix


@main.command()
@click.option("--clean-dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--mix", required=True, help="Comma list, e.g. ghosting=0.2,motion=0.25")
@click.option("--severity", default="0.4:0.8", show_default=True, help="lo:hi severity range.")
@click.option("--seed", default=0, show_default=True)
def simulate(clean_dir, out, mix, severity, seed):
    """Inject artifacts into clean volumes and write a labeled benchmark."""
    mix_map = _parse_mix(mix)
    try:
        lo, _, hi = severity.partition(":")
        severity_range = (float(lo), float(hi or lo))
    except ValueError:
        raise click.BadParameter(f"bad severity {severity!r}, expected lo:hi")
    try:
        manifest = make_benchmark(clean_dir, out, mix_map, severity_range=severity_range, seed=seed)
    except DmriqcError as exc:
        raise _fail(exc)
    n_affected = sum(1 for e in manifest.entries if e["kinds"])
    click.echo(
        f"benchmark at {out}: {len(manifest.entries)} volumes, "
        f"{n_affected} with artifacts, {manifest.clean_count} clean"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(path_type=Path))
@click.option("--view", type=click.Choice([AXIAL, SAGITTAL]), default=None, help="Overrides the config.")
@click.option("--backend", default=None, help="Overrides the config backend.")
@click.option("--out-model", required=True, type=click.Path(path_type=Path))
def train(config_path, view, backend, out_model):
    """Train one detector from an experiment config."""
    try:
        cfg = load_config(config_path)
        if view is not None:
            cfg = dataclasses.replace(cfg, view=view)
        if backend is not None:
            cfg = dataclasses.replace(cfg, backend=dataclasses.replace(cfg.backend, backend=backend))
        samples = load_labeled_samples(cfg.data.volumes_dir, cfg.data.labels_csv, cfg.view, cfg.exclusion)
        model = train_detector(samples, cfg.backend, cfg.train, view=cfg.view)
        save_model(model, out_model)
        save_config(cfg, Path(out_model).with_suffix(".config.json"))
        log = {
            "backend": model.backend,
            "view": model.view,
            "samples": len(samples),
            "epochs": cfg.train.epochs,
            "learning_rate": cfg.train.learning_rate,
            "seed": cfg.train.seed,
            "fingerprint": model.fingerprint,
            "loss_history": getattr(model.estimator, "loss_history_", None),
        }
        log_path = Path(out_model).with_suffix(".log.json")
        log_path.write_text(json.dumps(log, indent=2))
    except DmriqcError as exc:
        raise _fail(exc)
    click.echo(f"trained {model.backend} ({model.view}) on {len(samples)} slices -> {out_model}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--axial-model", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--sagittal-model", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--axial-threshold", default=3, show_default=True)
@click.option("--sagittal-threshold", default=7, show_default=True)
@click.option("--report-dir", required=True, type=click.Path(path_type=Path))
@click.option("--thumbnails/--no-thumbnails", default=False, show_default=True)
def qc(input_path, axial_model, sagittal_model, axial_threshold, sagittal_threshold, report_dir, thumbnails):
    """Run both detectors on a volume and write its QC report."""
    try:
        volume = load_dwi(input_path)
        ax = load_model(axial_model, expected_view=AXIAL)
        sg = load_model(sagittal_model, expected_view=SAGITTAL)
        report = qc_volume(
            volume,
            ax,
            sg,
            rule=ExclusionRule(),
            thresholds=ThresholdConfig(axial_threshold, sagittal_threshold),
        )
        path = write_report(report, Path(report_dir) / volume.id, thumbnails=thumbnails)
    except DmriqcError as exc:
        raise _fail(exc)
    flagged = sum(1 for s in report.slices if s["flag"])
    bad_volumes = sum(1 for v in report.verdicts if v["flag"])
    click.echo(f"{volume.id}: {flagged} flagged slices, {bad_volumes} flagged gradient volumes -> {path}")


def _eval_cv(cfg, out_dir):
    samples = load_labeled_samples(cfg.data.volumes_dir, cfg.data.labels_csv, cfg.view, cfg.exclusion)
    result = cross_validate(samples, cfg.backend, cfg.folds, cfg.train, cfg.augment)
    rows = [{"row": f"fold{i}", **m.to_dict()} for i, m in enumerate(result["folds"])]
    write_metrics_csv(out_dir / "cv.csv", rows)
    write_summary_json(out_dir / "cv.json", {"mode": "cv", "mean": result["mean"], "folds": result["folds"]})
    return f"cv mean accuracy {result['mean']['accuracy']:.4f} over {cfg.folds.k} folds"


def _eval_sweep(cfg, out_dir):
    if not cfg.evaluation.model_path:
        raise ConfigError("sweep mode needs evaluation.model_path (train a model first)")
    model = load_model(cfg.evaluation.model_path, expected_view=cfg.view)
    samples = load_labeled_samples(cfg.data.volumes_dir, cfg.data.labels_csv, cfg.view, cfg.exclusion)
    flags = model.predict_flags(samples)
    counts = flag_counts_by_volume(samples, flags)
    truth = volume_truth(samples)
    keys = sorted(truth)
    rows = threshold_sweep(
        [counts.get(k, 0) for k in keys],
        [truth[k] for k in keys],
        list(cfg.evaluation.thresholds),
    )
    write_metrics_csv(out_dir / "sweep.csv", [{"row": f"T={t}", **m.to_dict()} for t, m in rows])
    write_summary_json(
        out_dir / "sweep.json",
        {"mode": "sweep", "rows": [{"threshold": t, "metrics": m} for t, m in rows]},
    )
    return f"sweep over {len(rows)} thresholds on {len(keys)} gradient volumes"


def _load_datasets(cfg):
    if not cfg.datasets:
        raise ConfigError("this mode needs a datasets list in the config")
    by_id = {}
    for ref in cfg.datasets:
        by_id[ref.id] = load_labeled_samples(ref.volumes_dir, ref.labels_csv, cfg.view, cfg.exclusion)
    train_ids = cfg.evaluation.train_ids or tuple(sorted(by_id)[:-1])
    test_id = cfg.evaluation.test_id or sorted(by_id)[-1]
    missing = [i for i in (*train_ids, test_id) if i not in by_id]
    if missing:
        raise ConfigError(f"datasets {missing} not defined in the config")
    return {i: by_id[i] for i in train_ids}, (test_id, by_id[test_id])


def _eval_cross_dataset(cfg, out_dir):
    train_sets, test_set = _load_datasets(cfg)
    result = cross_dataset_eval(train_sets, test_set, cfg.backend, cfg.train)
    write_metrics_csv(out_dir / "cross_dataset.csv", [{"row": test_set[0], **result["metrics"].to_dict()}])
    write_summary_json(out_dir / "cross_dataset.json", {"mode": "cross-dataset", **{k: v for k, v in result.items() if k != "model"}})
    return f"cross-dataset accuracy {result['metrics'].accuracy:.4f} on {test_set[0]}"


def _eval_finetune(cfg, out_dir):
    train_sets, test_set = _load_datasets(cfg)
    result = finetune_eval(train_sets, test_set, cfg.backend, cfg.train, cfg.evaluation.finetune_fraction)
    rows = [
        {"row": "before", **result["before"].to_dict()},
        {"row": "after", **result["after"].to_dict()},
    ]
    write_metrics_csv(out_dir / "finetune.csv", rows)
    write_summary_json(out_dir / "finetune.json", {"mode": "finetune", **{k: v for k, v in result.items() if k != "model"}})
    return (
        f"finetune on {test_set[0]}: accuracy {result['before'].accuracy:.4f} "
        f"-> {result['after'].accuracy:.4f}"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(path_type=Path))
@click.option("--mode", required=True, type=click.Choice(["cv", "cross-dataset", "sweep", "finetune"]))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
def evaluate(config_path, mode, out_dir):
    """Evaluate a backend: cross-validation, sweeps, or cross-dataset runs."""
    runners = {
        "cv": _eval_cv,
        "sweep": _eval_sweep,
        "cross-dataset": _eval_cross_dataset,
        "finetune": _eval_finetune,
    }
    try:
        cfg = load_config(config_path)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        message = runners[mode](cfg, out_dir)
        save_config(cfg, out_dir / "config.resolved.json")
    except DmriqcError as exc:
        raise _fail(exc)
    click.echo(message)


@main.command()
@click.option("--report-dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--port", default=8099, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--label-out", default="decisions.csv", show_default=True, type=click.Path(path_type=Path))
@click.option("--ui-dir", default=None, type=click.Path(file_okay=False, path_type=Path),
              help="Optional built web-client directory to serve at /.")
def serve(report_dir, port, host, label_out, ui_dir):
    """Serve reports and collect expert review decisions."""
    from .service import serve_reports

    try:
        serve_reports(report_dir, port=port, label_out=label_out, host=host, ui_dir=ui_dir)
    except DmriqcError as exc:
        raise _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
