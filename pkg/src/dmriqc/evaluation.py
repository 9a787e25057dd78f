"""Metrics, cross-validation, threshold sweeps, and cross-dataset protocols.

Precision/recall/accuracy follow the usual confusion-count definitions,
with zero denominators surfaced as explicit ``None`` markers rather than
silent zeros. Folds group by subject (volume) by default to keep slices of
one acquisition out of both sides of a split.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_dataset
from .detectors import BackendSpec, TrainConfig, finetune, train_detector
from .errors import LeakageError, TrainingError
from .pipeline import volume_flag
from .volume import SliceSample

RESULTS_VERSION = 1


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.total if self.total else None

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
        }


def compute_metrics(predicted_flags, true_labels) -> Metrics:
    pred = np.asarray(predicted_flags).astype(bool)
    true = np.asarray(true_labels).astype(bool)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(f"length mismatch: {pred.shape} predictions vs {true.shape} labels")
    if pred.size == 0:
        raise ValueError("empty inputs")
    return Metrics(
        tp=int(np.sum(pred & true)),
        fp=int(np.sum(pred & ~true)),
        tn=int(np.sum(~pred & ~true)),
        fn=int(np.sum(~pred & true)),
    )


@dataclass(frozen=True)
class FoldSpec:
    k: int = 5
    seed: int = 0
    grouping: str = "subject"  # subject | slice

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.grouping not in ("subject", "slice"):
            raise ValueError(f"unknown grouping {self.grouping!r}")


def kfold_split(samples: list[SliceSample], spec: FoldSpec = FoldSpec()) -> list[np.ndarray]:
    """Index folds: pairwise disjoint, union complete, sizes within one unit."""
    rng = np.random.default_rng(spec.seed)
    if spec.grouping == "slice":
        if len(samples) < spec.k:
            raise ValueError(f"{len(samples)} samples cannot fill {spec.k} folds")
        order = rng.permutation(len(samples))
        return [np.sort(fold) for fold in np.array_split(order, spec.k)]

    groups = sorted({s.volume_id for s in samples})
    if len(groups) < spec.k:
        raise ValueError(f"{len(groups)} subjects cannot fill {spec.k} folds")
    order = rng.permutation(len(groups))
    folds = []
    for chunk in np.array_split(order, spec.k):
        chosen = {groups[i] for i in chunk}
        folds.append(np.array([i for i, s in enumerate(samples) if s.volume_id in chosen]))
    return folds


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize_folds(fold_metrics: list[Metrics]) -> dict:
    return {
        "precision": _mean_or_none([m.precision for m in fold_metrics]),
        "recall": _mean_or_none([m.recall for m in fold_metrics]),
        "accuracy": _mean_or_none([m.accuracy for m in fold_metrics]),
    }


def cross_validate(
    samples: list[SliceSample],
    spec: BackendSpec,
    folds: FoldSpec = FoldSpec(),
    train: TrainConfig = TrainConfig(),
    augment: AugmentConfig | None = None,
) -> dict:
    """K-fold CV; augmentation (when given) touches training folds only.

    A fold whose training data collapses to a single class is skipped with
    a warning; the run fails only when no fold is trainable.
    """
    fold_idx = kfold_split(samples, folds)
    per_fold: list[Metrics] = []
    skipped: list[int] = []
    for i, test_idx in enumerate(fold_idx):
        test_mask = np.zeros(len(samples), dtype=bool)
        test_mask[test_idx] = True
        train_samples = [s for s, held in zip(samples, test_mask) if not held]
        test_samples = [s for s, held in zip(samples, test_mask) if held]
        labels = [s.label for s in train_samples]
        if len(set(labels)) < 2:
            warnings.warn(f"fold {i}: training data has a single class; fold skipped")
            skipped.append(i)
            continue
        if augment is not None:
            train_samples = augment_dataset(train_samples, augment, seed=train.seed + i)
        model = train_detector(train_samples, spec, train)
        flags = model.predict_flags(test_samples)
        per_fold.append(compute_metrics(flags, [s.label for s in test_samples]))
    if not per_fold:
        raise TrainingError("every fold had single-class training data")
    return {"folds": per_fold, "mean": summarize_folds(per_fold), "skipped_folds": skipped}


def threshold_sweep(
    flag_counts: list[int],
    true_volume_labels: list[int],
    thresholds: list[int],
) -> list[tuple[int, Metrics]]:
    """One Metrics row per threshold; recall must be non-increasing in T."""
    if not thresholds:
        raise ValueError("thresholds must be nonempty")
    counts = np.asarray(flag_counts, dtype=int)
    labels = np.asarray(true_volume_labels, dtype=int)
    rows = []
    for t in thresholds:
        flags = [volume_flag(int(c), int(t)) for c in counts]
        rows.append((int(t), compute_metrics(flags, labels)))
    recalls = [m.recall for _, m in sorted(rows, key=lambda r: r[0]) if m.recall is not None]
    for earlier, later in zip(recalls, recalls[1:]):
        assert later <= earlier + 1e-12, "recall must be non-increasing in the threshold"
    return rows


def volume_truth(samples: list[SliceSample]) -> dict[tuple[str, int], int]:
    """A (volume, gradient) is truly artifactual iff it has >= 1 labeled-1 slice."""
    truth: dict[tuple[str, int], int] = {}
    for s in samples:
        key = (s.volume_id, s.gradient_index)
        truth[key] = max(truth.get(key, 0), int(s.label or 0))
    return truth


def flag_counts_by_volume(samples: list[SliceSample], flags) -> dict[tuple[str, int], int]:
    counts: dict[tuple[str, int], int] = {}
    for s, f in zip(samples, flags):
        key = (s.volume_id, s.gradient_index)
        counts.setdefault(key, 0)
        if f:
            counts[key] += 1
    return counts


def cross_dataset_eval(
    train_sets: dict[str, list[SliceSample]],
    test_set: tuple[str, list[SliceSample]],
    spec: BackendSpec,
    train: TrainConfig = TrainConfig(),
) -> dict:
    """Train on the union of train sets, evaluate on a disjoint dataset."""
    test_id, test_samples = test_set
    if test_id in train_sets:
        raise LeakageError(f"dataset {test_id!r} appears in both train and test")
    test_keys = {s.key for s in test_samples}
    for ds_id, ds in train_sets.items():
        overlap = test_keys & {s.key for s in ds}
        if overlap:
            raise LeakageError(f"dataset {ds_id!r} shares {len(overlap)} slices with the test set")
    pooled = [s for ds in train_sets.values() for s in ds]
    model = train_detector(pooled, spec, train)
    flags = model.predict_flags(test_samples)
    metrics = compute_metrics(flags, [s.label for s in test_samples])
    return {
        "train_datasets": sorted(train_sets),
        "test_dataset": test_id,
        "metrics": metrics,
        "model": model,
    }


def finetune_eval(
    train_sets: dict[str, list[SliceSample]],
    test_set: tuple[str, list[SliceSample]],
    spec: BackendSpec,
    train: TrainConfig = TrainConfig(),
    fraction: float = 0.10,
) -> dict:
    """Cross-dataset baseline vs. retrained-with-10% comparison.

    The finetune subsample is drawn first and excluded from the evaluation
    slices for both models, so the two metrics are directly comparable.
    """
    test_id, test_samples = test_set
    base = cross_dataset_eval(train_sets, (test_id, test_samples), spec, train)
    pooled = [s for ds in train_sets.values() for s in ds]
    tuned = finetune(base["model"], pooled, test_samples, fraction=fraction, train=train)
    sampled = set(tuned.sampled_keys)
    eval_samples = [s for s in test_samples if s.key not in sampled]
    if not eval_samples:
        raise TrainingError("finetune subsample swallowed the whole test set")
    assert not sampled & {s.key for s in eval_samples}

    before = compute_metrics(base["model"].predict_flags(eval_samples), [s.label for s in eval_samples])
    after = compute_metrics(tuned.predict_flags(eval_samples), [s.label for s in eval_samples])
    return {
        "train_datasets": sorted(train_sets),
        "test_dataset": test_id,
        "fraction": fraction,
        "sampled": sorted(sampled),
        "before": before,
        "after": after,
        "model": tuned,
    }


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------

def write_metrics_csv(path, rows: list[dict]) -> None:
    """One row per fold/threshold; None rates serialize as empty cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["row", "tp", "fp", "tn", "fn", "precision", "recall", "accuracy"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("precision", "recall", "accuracy"):
                if out.get(key) is None:
                    out[key] = ""
            writer.writerow({k: out.get(k, "") for k in fields})


def write_summary_json(path, summary: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def default(o):
        if isinstance(o, Metrics):
            return o.to_dict()
        if isinstance(o, (np.integer, np.floating)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        return str(o)

    with open(path, "w") as fh:
        json.dump({"version": RESULTS_VERSION, **summary}, fh, indent=2, default=default)
