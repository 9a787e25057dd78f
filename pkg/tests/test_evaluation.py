import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmriqc.detectors import BackendSpec, TrainConfig
from dmriqc.errors import LeakageError, TrainingError
from dmriqc.evaluation import (
    FoldSpec,
    Metrics,
    compute_metrics,
    cross_dataset_eval,
    cross_validate,
    flag_counts_by_volume,
    kfold_split,
    summarize_folds,
    threshold_sweep,
    volume_truth,
    write_metrics_csv,
    write_summary_json,
)
from dmriqc.volume import SliceSample

rng = np.random.default_rng(777)


def brute_force_confusion(pred, true):
    tp = fp = tn = fn = 0
    for p, t in zip(pred, true):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def test_metrics_paper_formula_example():
    m = Metrics(tp=94, fp=6, tn=891, fn=9)
    assert m.precision == pytest.approx(0.94)
    assert m.recall == pytest.approx(94 / 103, abs=1e-4)
    assert m.accuracy == pytest.approx(0.985)


def test_metrics_all_correct():
    m = compute_metrics([1, 0, 1, 0], [1, 0, 1, 0])
    assert m.precision == m.recall == m.accuracy == 1.0


def test_metrics_undefined_markers():
    m = compute_metrics([0, 0, 0], [0, 0, 0])
    assert m.precision is None  # tp + fp == 0
    assert m.recall is None  # tp + fn == 0
    assert m.accuracy == 1.0
    d = m.to_dict()
    assert d["precision"] is None and d["recall"] is None


def test_metrics_random_vs_brute_force():
    for _ in range(200):
        n = int(rng.integers(1, 60))
        pred = rng.integers(0, 2, size=n).astype(bool)
        true = rng.integers(0, 2, size=n).astype(bool)
        m = compute_metrics(pred, true)
        assert (m.tp, m.fp, m.tn, m.fn) == brute_force_confusion(pred, true)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=50))
def test_metrics_property_hypothesis(pairs):
    pred = [p for p, _ in pairs]
    true = [t for _, t in pairs]
    m = compute_metrics(pred, true)
    tp, fp, tn, fn = brute_force_confusion(pred, true)
    assert (m.tp, m.fp, m.tn, m.fn) == (tp, fp, tn, fn)
    assert m.total == len(pairs)
    if tp + fp:
        assert m.precision == tp / (tp + fp)
    else:
        assert m.precision is None


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        compute_metrics([1, 0], [1])


def _make_samples(n_volumes=10, per_volume=4):
    out = []
    for v in range(n_volumes):
        for i in range(per_volume):
            out.append(
                SliceSample(f"vol{v}", "axial", 0, i, rng.normal(size=(8, 8)), label=(v + i) % 2)
            )
    return out


def test_kfold_slice_partition_properties():
    samples = _make_samples(2, 5)  # 10 samples
    folds = kfold_split(samples, FoldSpec(k=5, seed=0, grouping="slice"))
    assert [len(f) for f in folds] == [2, 2, 2, 2, 2]
    all_idx = np.concatenate(folds)
    assert sorted(all_idx) == list(range(10))


def test_kfold_partition_brute_force_random_inputs():
    for trial in range(100):
        n_vol = int(rng.integers(5, 12))
        per = int(rng.integers(1, 5))
        samples = _make_samples(n_vol, per)
        k = int(rng.integers(2, min(6, n_vol + 1)))
        grouping = "subject" if rng.random() < 0.5 else "slice"
        folds = kfold_split(samples, FoldSpec(k=k, seed=trial, grouping=grouping))
        flat = np.concatenate(folds)
        assert len(flat) == len(samples)
        assert len(set(flat.tolist())) == len(samples)
        if grouping == "subject":
            fold_vols = [{samples[i].volume_id for i in f} for f in folds]
            for a in range(k):
                for b in range(a + 1, k):
                    assert not fold_vols[a] & fold_vols[b]
            sizes = [len(v) for v in fold_vols]
            assert max(sizes) - min(sizes) <= 1
        else:
            sizes = [len(f) for f in folds]
            assert max(sizes) - min(sizes) <= 1


def test_kfold_seed_determinism():
    samples = _make_samples(8, 3)
    a = kfold_split(samples, FoldSpec(k=4, seed=9))
    b = kfold_split(samples, FoldSpec(k=4, seed=9))
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa, fb)


def test_kfold_too_few_groups():
    samples = _make_samples(3, 2)
    with pytest.raises(ValueError):
        kfold_split(samples, FoldSpec(k=5, grouping="subject"))


def test_cross_validate_oracle_perfect():
    samples = _make_samples(10, 4)
    result = cross_validate(samples, BackendSpec(backend="oracle"), FoldSpec(k=5, seed=1))
    assert result["mean"]["accuracy"] == 1.0
    assert all(m.accuracy == 1.0 for m in result["folds"])


def test_cross_validate_constant_model_balanced():
    # constant-0 predictions on balanced data: accuracy 0.5, recall 0
    samples = _make_samples(10, 4)

    from dmriqc import evaluation

    class ZeroModel:
        view = "axial"
        backend = "zero"
        fingerprint = {}

        def predict_flags(self, xs):
            return np.zeros(len(xs), dtype=bool)

    orig = evaluation.train_detector
    evaluation.train_detector = lambda *a, **k: ZeroModel()
    try:
        result = cross_validate(samples, BackendSpec(backend="oracle"), FoldSpec(k=5, seed=1))
    finally:
        evaluation.train_detector = orig
    assert result["mean"]["accuracy"] == pytest.approx(0.5)
    assert result["mean"]["recall"] == 0.0


def test_threshold_sweep_rows_and_monotonicity():
    counts = [0, 2, 4, 9, 1, 6]
    labels = [0, 0, 1, 1, 0, 1]
    rows = threshold_sweep(counts, labels, list(range(1, 11)))
    assert len(rows) == 10
    recalls = [m.recall for _, m in rows]
    assert recalls[0] >= recalls[-1]
    # strict-> rule recomputed independently at T=3
    t3 = dict(rows)[3]
    flags = [c > 3 for c in counts]
    tp = sum(1 for f, l in zip(flags, labels) if f and l)
    assert t3.tp == tp == 3


def test_threshold_sweep_all_zero_counts():
    rows = threshold_sweep([0, 0, 0], [1, 0, 1], [1, 2])
    for _, m in rows:
        assert m.recall == 0.0 or m.recall is None


def test_threshold_sweep_empty_thresholds():
    with pytest.raises(ValueError):
        threshold_sweep([1], [1], [])


def test_volume_truth_and_counts():
    samples = [
        SliceSample("a", "axial", 0, 0, np.zeros((2, 2)), label=0),
        SliceSample("a", "axial", 0, 1, np.zeros((2, 2)), label=1),
        SliceSample("a", "axial", 1, 0, np.zeros((2, 2)), label=0),
        SliceSample("b", "axial", 0, 0, np.zeros((2, 2)), label=0),
    ]
    truth = volume_truth(samples)
    assert truth == {("a", 0): 1, ("a", 1): 0, ("b", 0): 0}
    counts = flag_counts_by_volume(samples, [True, True, False, False])
    assert counts == {("a", 0): 2, ("a", 1): 0, ("b", 0): 0}


def test_cross_dataset_leakage_guards():
    samples = _make_samples(4, 2)
    with pytest.raises(LeakageError):
        cross_dataset_eval({"A": samples}, ("A", samples), BackendSpec(backend="oracle"))
    with pytest.raises(LeakageError):
        cross_dataset_eval({"A": samples}, ("B", samples), BackendSpec(backend="oracle"))


def test_cross_dataset_oracle_perfect():
    train_samples = _make_samples(4, 2)
    test_samples = [
        SliceSample(f"t{v}", "axial", 0, i, rng.normal(size=(8, 8)), label=(v + i) % 2)
        for v in range(3)
        for i in range(3)
    ]
    result = cross_dataset_eval({"A": train_samples}, ("B", test_samples), BackendSpec(backend="oracle"))
    assert result["metrics"].accuracy == 1.0  # oracle is perfect regardless of the split


def test_writers(tmp_path):
    rows = [{"row": "fold0", **Metrics(1, 2, 3, 4).to_dict()}, {"row": "fold1", **Metrics(0, 0, 5, 0).to_dict()}]
    write_metrics_csv(tmp_path / "out.csv", rows)
    text = (tmp_path / "out.csv").read_text().splitlines()
    assert text[0] == "row,tp,fp,tn,fn,precision,recall,accuracy"
    assert len(text) == 3
    assert text[2].split(",")[5] == ""  # undefined precision -> empty cell
    write_summary_json(tmp_path / "out.json", {"mean": summarize_folds([Metrics(1, 2, 3, 4)])})
    import json

    data = json.loads((tmp_path / "out.json").read_text())
    assert data["version"] == 1


def test_cross_validate_augments_training_folds_only():
    from dmriqc.augment import AugmentConfig

    samples = _make_samples(6, 4)
    result = cross_validate(
        samples,
        BackendSpec(backend="oracle"),
        FoldSpec(k=3, seed=0),
        augment=AugmentConfig(multiplier=2),
    )
    # test folds stay untouched: per-fold totals sum to the original count
    assert sum(m.total for m in result["folds"]) == len(samples)
    assert result["mean"]["accuracy"] == 1.0


def test_cross_validate_skips_degenerate_folds_with_warning():
    import warnings as _warnings

    ones = [SliceSample("vA", "axial", 0, i, rng.normal(size=(8, 8)), label=0) for i in range(4)]
    mixed = [SliceSample("vB", "axial", 0, i, rng.normal(size=(8, 8)), label=i % 2) for i in range(4)]
    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always")
        result = cross_validate(ones + mixed, BackendSpec(backend="oracle"), FoldSpec(k=2, seed=1))
    assert len(result["folds"]) == 1
    assert result["skipped_folds"] != []
    assert any("single class" in str(w.message) for w in caught)

    with pytest.raises(TrainingError):
        # both folds degenerate: every training fold is single-class
        half0 = [SliceSample("vA", "axial", 0, i, rng.normal(size=(8, 8)), label=0) for i in range(4)]
        half1 = [SliceSample("vB", "axial", 0, i, rng.normal(size=(8, 8)), label=1) for i in range(4)]
        cross_validate(half0 + half1, BackendSpec(backend="oracle"), FoldSpec(k=2, seed=1))
