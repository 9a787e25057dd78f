import numpy as np
import pytest

from dmriqc.backbone import BackboneHandle, create_backbone_asset, file_digest, load_backbone
from dmriqc.detectors import (
    BackendSpec,
    OracleModel,
    PcaConfig,
    RfConfig,
    finetune,
    load_model,
    predict_slice,
    save_model,
    stratified_subsample,
    train_cnn_head,
    train_cnn_pca_svm,
    train_detector,
    train_feature_rf,
    train_gabor_fc,
)
from dmriqc.errors import ModelFormatError, TrainingError, ViewMismatchError
from dmriqc.heads import HeadConfig, SoftmaxHead, TrainConfig
from dmriqc.volume import SliceSample

import dataclasses


# -- backbone -----------------------------------------------------------------

def test_backbone_asset_round_trip(backbone_spec):
    handle = load_backbone(backbone_spec)
    assert handle.spec.output_dim == 64
    rng = np.random.default_rng(0)
    batch = [rng.normal(size=(48, 48)) for _ in range(4)]
    feats = handle.features(batch)
    assert feats.shape == (4, 64)
    np.testing.assert_array_equal(feats, handle.features(batch))  # deterministic


def test_backbone_digest_mismatch(tmp_path, backbone_spec):
    corrupted = tmp_path / "corrupt.npz"
    data = bytearray(open(backbone_spec.weights_path, "rb").read())
    data[200] ^= 0xFF
    corrupted.write_bytes(bytes(data))
    bad_spec = dataclasses.replace(backbone_spec, weights_path=str(corrupted))
    with pytest.raises(ModelFormatError, match="digest"):
        load_backbone(bad_spec)


def test_backbone_missing_file(backbone_spec):
    bad = dataclasses.replace(backbone_spec, weights_path="/nonexistent.npz")
    with pytest.raises(ModelFormatError):
        load_backbone(bad)


def test_backbone_asset_deterministic(tmp_path):
    a = create_backbone_asset(tmp_path / "a.npz", seed=7)
    b = create_backbone_asset(tmp_path / "b.npz", seed=7)
    assert a.weights_digest == b.weights_digest
    c = create_backbone_asset(tmp_path / "c.npz", seed=8)
    assert c.weights_digest != a.weights_digest


# -- softmax head ---------------------------------------------------------------

def test_head_loss_decreases_on_separable_data():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(-2, 1, size=(80, 8)), rng.normal(2, 1, size=(80, 8))])
    y = np.array([0] * 80 + [1] * 80)
    head = SoftmaxHead(8, HeadConfig(hidden_units=32), seed=0)
    head.fit(X, y, TrainConfig(epochs=20, learning_rate=1e-2, seed=0))
    assert head.loss_history[-1] < head.loss_history[0]
    acc = (head.predict_proba(X)[:, 1] > 0.5).astype(int)
    assert (acc == y).mean() == 1.0


def test_head_probabilities_sum_to_one():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 6))
    y = (X[:, 0] > 0).astype(int)
    head = SoftmaxHead(6, seed=1)
    head.fit(X, y, TrainConfig(epochs=2, seed=1))
    proba = head.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)


def test_head_inference_deterministic_despite_dropout():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 5))
    y = (X[:, 1] > 0).astype(int)
    head = SoftmaxHead(5, HeadConfig(dropout_rate=0.5), seed=2)
    head.fit(X, y, TrainConfig(epochs=3, seed=2))
    np.testing.assert_array_equal(head.predict_proba(X), head.predict_proba(X))


# -- toy-set detectors ------------------------------------------------------------

def test_cnn_head_separates_stripes_from_blobs(backbone_spec, toy_stripe_blob):
    # linear-probe sanity first: backbone features must separate the toy set
    handle = BackboneHandle(backbone_spec)
    feats = handle.features([s.pixels for s in toy_stripe_blob])
    labels = np.array([s.label for s in toy_stripe_blob])
    from sklearn.linear_model import LogisticRegression

    probe = LogisticRegression(max_iter=2000).fit(feats, labels)
    assert probe.score(feats, labels) >= 0.99

    model = train_cnn_head(backbone_spec, toy_stripe_blob, train=TrainConfig(seed=0))
    flags = model.predict_flags(toy_stripe_blob)
    assert (flags == labels).mean() == 1.0
    assert model.estimator.loss_history_[-1] < model.estimator.loss_history_[0]


def test_cnn_head_leaves_backbone_frozen(backbone_spec, toy_stripe_blob):
    before = file_digest(backbone_spec.weights_path)
    train_cnn_head(backbone_spec, toy_stripe_blob, train=TrainConfig(epochs=2, seed=0))
    assert file_digest(backbone_spec.weights_path) == before == backbone_spec.weights_digest


def test_gabor_fc_on_toy_set(toy_stripe_blob):
    model = train_gabor_fc(toy_stripe_blob, train=TrainConfig(seed=0))
    labels = np.array([s.label for s in toy_stripe_blob])
    assert (model.predict_flags(toy_stripe_blob) == labels).mean() >= 0.95
    # repeated predictions identical (dropout off at inference)
    p1 = model.predict_proba(toy_stripe_blob[:10])
    p2 = model.predict_proba(toy_stripe_blob[:10])
    np.testing.assert_array_equal(p1, p2)


def test_gabor_rf_on_toy_set(toy_stripe_blob):
    model = train_feature_rf(toy_stripe_blob, "gabor", rf=RfConfig(seed=0))
    labels = np.array([s.label for s in toy_stripe_blob])
    assert (model.predict_flags(toy_stripe_blob) == labels).mean() == 1.0


def test_rf_single_class_error(toy_stripe_blob):
    ones = [s for s in toy_stripe_blob if s.label == 1]
    with pytest.raises(TrainingError):
        train_feature_rf(ones, "gabor")


def test_rf_training_deterministic_bytes(tmp_path, toy_stripe_blob):
    m1 = train_feature_rf(toy_stripe_blob, "gabor", rf=RfConfig(seed=5))
    m2 = train_feature_rf(toy_stripe_blob, "gabor", rf=RfConfig(seed=5))
    save_model(m1, tmp_path / "m1.bin")
    save_model(m2, tmp_path / "m2.bin")
    assert (tmp_path / "m1.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()


# -- pca + svm ----------------------------------------------------------------------

def test_pca_single_direction_gives_k1(backbone_spec, toy_stripe_blob, monkeypatch):
    from dmriqc import detectors

    class OneDirHandle:
        def __init__(self, spec):
            self.spec = spec

        def features(self, X):
            rng = np.random.default_rng(0)
            t = rng.normal(size=(len(X), 1))
            direction = np.ones((1, 8))
            return t @ direction + 1e-9 * rng.normal(size=(len(X), 8))

    monkeypatch.setattr(detectors, "load_backbone", lambda spec: OneDirHandle(spec))
    model = train_cnn_pca_svm(backbone_spec, toy_stripe_blob, train=TrainConfig(seed=0))
    assert model.estimator.n_components_ == 1


def test_pca_component_count_minimal_vs_eigen_oracle(backbone_spec, toy_stripe_blob):
    model = train_cnn_pca_svm(backbone_spec, toy_stripe_blob, pca=PcaConfig(0.98), train=TrainConfig(seed=0))
    est = model.estimator
    handle = BackboneHandle(backbone_spec)
    feats = handle.features([s.pixels for s in toy_stripe_blob])
    # independent oracle: eigen-spectrum of the sample covariance
    centered = feats - feats.mean(axis=0)
    eigvals = np.sort(np.linalg.eigvalsh(centered.T @ centered))[::-1]
    ratio = np.cumsum(eigvals) / eigvals.sum()
    k_oracle = int(np.argmax(ratio >= 0.98 - 1e-12) + 1)
    assert est.n_components_ == k_oracle
    cumulative = np.cumsum(est.explained_variance_ratio_)
    assert cumulative[-1] >= 0.98
    if est.n_components_ > 1:
        assert cumulative[-2] < 0.98


def test_pca_isotropic_gaussian_needs_most_components(backbone_spec, monkeypatch):
    from dmriqc import detectors

    d, n = 50, 5000
    rng = np.random.default_rng(11)

    class IsoHandle:
        def __init__(self, spec):
            self.spec = spec

        def features(self, X):
            return rng.normal(size=(len(X), d))

    monkeypatch.setattr(detectors, "load_backbone", lambda spec: IsoHandle(spec))
    samples = [SliceSample("v", "axial", 0, i, np.zeros((4, 4)), label=i % 2) for i in range(n)]
    spec = BackendSpec(backend="cnn_pca_svm", backbone=create_backbone_asset("/tmp/iso.npz"))
    model = train_detector(samples, spec, TrainConfig(seed=0))
    assert abs(model.estimator.n_components_ - int(np.ceil(0.98 * d))) <= 1


# -- prediction contracts -------------------------------------------------------------

def test_predict_slice_threshold_rules():
    class Fixed:
        view = "axial"
        backend = "oracle"
        fingerprint = {}

        def __init__(self, p):
            self.p = p

        def predict_proba(self, samples):
            return np.full(len(samples), self.p)

    s = SliceSample("v", "axial", 0, 0, np.zeros((4, 4)))
    assert predict_slice(Fixed(0.7), s) == {"prob_artifact": 0.7, "flag": True}
    assert predict_slice(Fixed(0.5), s) == {"prob_artifact": 0.5, "flag": False}


def test_view_mismatch_error(toy_stripe_blob):
    model = train_feature_rf(toy_stripe_blob, "lbp", rf=RfConfig(seed=0))
    bad = SliceSample("v", "sagittal", 0, 0, np.zeros((12, 12)))
    with pytest.raises(ViewMismatchError):
        model.predict_proba([bad])


def test_probabilities_sum_to_one_every_backend(backbone_spec, toy_stripe_blob):
    subset = toy_stripe_blob[:40]
    specs = [
        BackendSpec(backend="gabor_rf"),
        BackendSpec(backend="zernike_rf"),
        BackendSpec(backend="lbp_rf"),
        BackendSpec(backend="gabor_fc"),
        BackendSpec(backend="cnn_head", backbone=backbone_spec),
        BackendSpec(backend="cnn_pca_svm", backbone=backbone_spec),
    ]
    for spec in specs:
        model = train_detector(subset, spec, TrainConfig(epochs=2, seed=0))
        proba = model.estimator.predict_proba([s.pixels for s in subset[:8]])
        np.testing.assert_allclose(np.asarray(proba).sum(axis=1), 1.0, atol=1e-9)


# -- persistence ---------------------------------------------------------------------

def test_save_load_round_trip_predictions(tmp_path, backbone_spec, toy_stripe_blob):
    probe = toy_stripe_blob[:64]
    model = train_cnn_head(backbone_spec, toy_stripe_blob, train=TrainConfig(epochs=3, seed=0))
    save_model(model, tmp_path / "model.bin")
    loaded = load_model(tmp_path / "model.bin")
    np.testing.assert_array_equal(model.predict_proba(probe), loaded.predict_proba(probe))
    assert loaded.fingerprint == model.fingerprint
    assert loaded.backend == "cnn_head"
    assert loaded.view == "axial"


def test_load_wrong_backend_rejected(tmp_path, toy_stripe_blob):
    model = train_feature_rf(toy_stripe_blob, "gabor")
    save_model(model, tmp_path / "model.bin")
    with pytest.raises(ModelFormatError, match="backend"):
        load_model(tmp_path / "model.bin", expected_backend="cnn_head")


def test_load_corrupted_payload_rejected(tmp_path, toy_stripe_blob):
    model = train_feature_rf(toy_stripe_blob, "lbp")
    save_model(model, tmp_path / "model.bin")
    blob = bytearray((tmp_path / "model.bin").read_bytes())
    blob[-1] ^= 0xFF
    (tmp_path / "bad.bin").write_bytes(bytes(blob))
    with pytest.raises(ModelFormatError, match="digest"):
        load_model(tmp_path / "bad.bin")


def test_load_not_a_model(tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"not a model at all")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "junk.bin")


# -- finetune -----------------------------------------------------------------------

def test_stratified_subsample_exact_counts():
    rng = np.random.default_rng(0)
    samples = [
        SliceSample("v", "axial", 0, i, rng.normal(size=(4, 4)), label=int(i < 900))
        for i in range(1000)
    ]
    chosen = stratified_subsample(samples, 0.10, seed=1)
    assert len(chosen) == 100
    assert sum(1 for s in chosen if s.label == 1) == 90
    assert sum(1 for s in chosen if s.label == 0) == 10


def test_stratified_subsample_too_small():
    samples = [SliceSample("v", "axial", 0, 0, np.zeros((4, 4)), label=1)]
    with pytest.raises(TrainingError):
        stratified_subsample(samples, 0.1, seed=0)


def test_finetune_records_sampled_keys(toy_stripe_blob):
    base = toy_stripe_blob[:120]
    new = toy_stripe_blob[120:]
    model = train_feature_rf(base, "gabor", rf=RfConfig(seed=0))
    tuned = finetune(model, base, new, fraction=0.25, seed=3)
    assert len(tuned.sampled_keys) == round(0.25 * len(new))
    assert set(tuned.sampled_keys) <= {s.key for s in new}
    eval_set = [s for s in new if s.key not in set(tuned.sampled_keys)]
    assert not set(tuned.sampled_keys) & {s.key for s in eval_set}


def test_finetune_fraction_one_uses_everything(toy_stripe_blob):
    base = toy_stripe_blob[:40]
    new = toy_stripe_blob[40:80]
    model = train_feature_rf(base, "gabor", rf=RfConfig(seed=0))
    tuned = finetune(model, base, new, fraction=1.0, seed=0)
    assert sorted(tuned.sampled_keys) == sorted(s.key for s in new)


# -- oracle --------------------------------------------------------------------------

def test_oracle_model_reads_labels(toy_stripe_blob):
    labels = {s.key: s.label for s in toy_stripe_blob}
    oracle = OracleModel("axial", labels)
    flags = oracle.predict_flags(toy_stripe_blob)
    assert (flags == np.array([s.label for s in toy_stripe_blob], dtype=bool)).all()


def test_training_order_invariance(tmp_path, toy_stripe_blob):
    shuffled = list(toy_stripe_blob)
    np.random.default_rng(0).shuffle(shuffled)
    m1 = train_feature_rf(toy_stripe_blob[:60], "lbp", rf=RfConfig(seed=2))
    m2 = train_feature_rf(
        sorted(toy_stripe_blob[:60], key=lambda s: s.key, reverse=True), "lbp", rf=RfConfig(seed=2)
    )
    save_model(m1, tmp_path / "a.bin")
    save_model(m2, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_head_refit_deterministic(toy_stripe_blob):
    rng_local = np.random.default_rng(6)
    X = rng_local.normal(size=(60, 7))
    y = (X[:, 0] > 0).astype(int)
    h1 = SoftmaxHead(7, seed=3).fit(X, y, TrainConfig(epochs=4, seed=3))
    h2 = SoftmaxHead(7, seed=3).fit(X, y, TrainConfig(epochs=4, seed=3))
    assert h1.loss_history == h2.loss_history
    np.testing.assert_array_equal(h1.predict_proba(X), h2.predict_proba(X))
