"""Detector backends and the trained-model container.

Every backend is an sklearn-style classifier over lists of 2D slices; a
``DetectorModel`` binds a fitted backend to one view with a training
fingerprint, and serializes to a single-file container (JSON header +
pickled parameter blob guarded by a digest).
"""

from __future__ import annotations

import hashlib
import json
import pickle
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.decomposition import PCA
from sklearn.ensemble import RandomForestClassifier
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from . import __version__ as _tool_version
from .backbone import BackboneHandle, FeatureBackbone, file_digest, load_backbone
from .errors import ModelFormatError, TrainingError, ViewMismatchError
from .features import GaborConfig, LbpConfig, ZernikeConfig, make_extractor
from .heads import HeadConfig, SoftmaxHead, TrainConfig
from .validation import check_binary_labels, check_slice_list
from .volume import AXIAL, SAGITTAL, VIEWS, SliceSample, normalize_pixels

BACKENDS = ("cnn_head", "gabor_rf", "zernike_rf", "lbp_rf", "gabor_fc", "cnn_pca_svm")

ARTIFACTS_BY_VIEW = {
    AXIAL: ("herringbone", "chemical_shift", "susceptibility", "ghosting"),
    SAGITTAL: ("motion", "multiband"),
}

MODEL_MAGIC = b"DMRIQCM1"
MODEL_FORMAT = 1


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 100
    max_depth: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class PcaConfig:
    variance_target: float = 0.98

    def __post_init__(self):
        if not 0.0 < self.variance_target <= 1.0:
            raise ValueError("variance_target must be in (0, 1]")


@dataclass(frozen=True)
class SvmConfig:
    kernel: str = "rbf"
    C: float = 1.0


def select_component_count(explained_variance_ratio, variance_target: float) -> int:
    """Smallest k whose cumulative explained variance reaches the target."""
    cumulative = np.cumsum(np.asarray(explained_variance_ratio, dtype=float))
    k = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
    return min(k, len(cumulative))


@dataclass(frozen=True)
class BackendSpec:
    """Everything needed to build one detector backend from scratch."""

    backend: str = "gabor_rf"
    backbone: FeatureBackbone | None = None
    gabor: GaborConfig = field(default_factory=GaborConfig)
    zernike: ZernikeConfig = field(default_factory=ZernikeConfig)
    lbp: LbpConfig = field(default_factory=LbpConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    rf: RfConfig = field(default_factory=RfConfig)
    pca: PcaConfig = field(default_factory=PcaConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)

    def __post_init__(self):
        if self.backend not in BACKENDS + ("oracle",):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend in ("cnn_head", "cnn_pca_svm") and self.backbone is None:
            raise ValueError(f"backend {self.backend!r} requires a backbone declaration")


def _check_two_classes(y):
    counts = np.bincount(y, minlength=2)
    if counts.min() < 1:
        raise TrainingError(f"need both classes present, got counts {counts.tolist()}")


def _prepare_slices(X) -> list[np.ndarray]:
    # normalization is idempotent, so already-normalized slices pass through
    return [normalize_pixels(s) for s in check_slice_list(X)]


def _balance(X, y, mode: str, seed: int):
    """Oversample the minority class when requested (rf/svm backends)."""
    if mode != "oversample":
        return X, y
    y = np.asarray(y)
    counts = np.bincount(y, minlength=2)
    if counts.min() == 0 or counts[0] == counts[1]:
        return X, y
    rng = np.random.default_rng(seed)
    minority = int(np.argmin(counts))
    idx = np.flatnonzero(y == minority)
    extra = rng.choice(idx, size=int(counts.max() - counts.min()), replace=True)
    keep = np.concatenate([np.arange(len(y)), extra])
    X = np.asarray(X)
    return X[keep], y[keep]


class TextureRfClassifier(BaseEstimator, ClassifierMixin):
    """Texture descriptor + random forest."""

    def __init__(self, descriptor="gabor", config=None, rf: RfConfig = RfConfig(), class_balance="none"):
        self.descriptor = descriptor
        self.config = config
        self.rf = rf
        self.class_balance = class_balance

    def _extractor(self):
        return make_extractor(self.descriptor, self.config)

    def fit(self, X, y):
        slices = _prepare_slices(X)
        y = check_binary_labels(y, len(slices))
        _check_two_classes(y)
        feats = self._extractor().transform(slices)
        feats, y = _balance(feats, y, self.class_balance, self.rf.seed)
        self.forest_ = RandomForestClassifier(
            n_estimators=self.rf.n_trees,
            max_depth=self.rf.max_depth,
            random_state=self.rf.seed,
            class_weight="balanced" if self.class_balance == "weighted" else None,
        ).fit(feats, y)
        self.classes_ = self.forest_.classes_
        return self

    def predict_proba(self, X):
        feats = self._extractor().transform(_prepare_slices(X))
        proba = self.forest_.predict_proba(feats)
        if proba.shape[1] == 1:  # single-class forest guard
            proba = np.hstack([1 - proba, proba])
        return proba

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)


class _HeadOnFeatures(BaseEstimator, ClassifierMixin):
    """Shared scaffolding: feature extraction -> standardize -> softmax head."""

    def __init__(self, head: HeadConfig = HeadConfig(), train: TrainConfig = TrainConfig()):
        self.head = head
        self.train = train

    def _features(self, X) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def fit(self, X, y):
        y = check_binary_labels(y)
        _check_two_classes(y)
        feats = self._features(X)
        if len(feats) != len(y):
            raise TrainingError(f"{len(feats)} samples vs {len(y)} labels")
        feats, y = _balance(feats, y, self.train.class_balance, self.train.seed)
        self.scaler_ = StandardScaler().fit(feats)
        self.head_ = SoftmaxHead(feats.shape[1], self.head, seed=self.train.seed)
        self.head_.fit(self.scaler_.transform(feats), y, self.train)
        self.loss_history_ = list(self.head_.loss_history)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        return self.head_.predict_proba(self.scaler_.transform(self._features(X)))

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)


class CnnHeadClassifier(_HeadOnFeatures):
    """Frozen backbone features + trainable head (the transfer-learning route)."""

    def __init__(self, backbone: FeatureBackbone, head=HeadConfig(), train=TrainConfig()):
        super().__init__(head=head, train=train)
        self.backbone = backbone

    def _handle(self) -> BackboneHandle:
        if not hasattr(self, "_handle_cache"):
            self._handle_cache = load_backbone(self.backbone)
        return self._handle_cache

    def _features(self, X):
        return self._handle().features(check_slice_list(X))

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_handle_cache", None)
        return state


class GaborFcClassifier(_HeadOnFeatures):
    """Gabor responses into the same FC-256 + softmax head."""

    def __init__(self, gabor: GaborConfig = GaborConfig(), head=HeadConfig(), train=TrainConfig()):
        super().__init__(head=head, train=train)
        self.gabor = gabor

    def _features(self, X):
        feats = make_extractor("gabor", self.gabor).transform(_prepare_slices(X))
        if self.gabor == GaborConfig():
            assert feats.shape[1] == 32
        return feats


class CnnPcaSvmClassifier(BaseEstimator, ClassifierMixin):
    """Backbone features -> minimal-k PCA at a variance target -> SVM."""

    def __init__(self, backbone: FeatureBackbone, pca: PcaConfig = PcaConfig(), svm: SvmConfig = SvmConfig(), seed: int = 0):
        self.backbone = backbone
        self.pca = pca
        self.svm = svm
        self.seed = seed

    def _handle(self) -> BackboneHandle:
        if not hasattr(self, "_handle_cache"):
            self._handle_cache = load_backbone(self.backbone)
        return self._handle_cache

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_handle_cache", None)
        return state

    def fit(self, X, y):
        y = check_binary_labels(y)
        _check_two_classes(y)
        feats = self._handle().features(check_slice_list(X))
        if np.allclose(feats.var(axis=0), 0.0):
            raise TrainingError("degenerate features: zero variance in every direction")
        full = PCA(random_state=self.seed).fit(feats)
        k = select_component_count(full.explained_variance_ratio_, self.pca.variance_target)
        self.n_components_ = k
        self.explained_variance_ratio_ = full.explained_variance_ratio_[:k]
        kept_variance = float(np.sum(self.explained_variance_ratio_))
        if kept_variance < self.pca.variance_target - 1e-9 and k < len(full.explained_variance_ratio_):
            raise TrainingError(
                f"PCA kept {kept_variance:.4f} of the variance with k={k}, "
                f"below the {self.pca.variance_target} target"
            )
        self.pca_ = PCA(n_components=k, random_state=self.seed).fit(feats)
        reduced = self.pca_.transform(feats)
        self.scaler_ = StandardScaler().fit(reduced)
        self.svc_ = SVC(
            kernel=self.svm.kernel,
            C=self.svm.C,
            probability=True,
            random_state=self.seed,
        ).fit(self.scaler_.transform(reduced), y)
        self.classes_ = self.svc_.classes_
        return self

    def predict_proba(self, X):
        feats = self._handle().features(check_slice_list(X))
        return self.svc_.predict_proba(self.scaler_.transform(self.pca_.transform(feats)))

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)


# ---------------------------------------------------------------------------
# trained-model container
# ---------------------------------------------------------------------------

def _canonical_json(obj) -> str:
    def default(o):
        if isinstance(o, (np.integer, np.floating)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        return str(o)

    return json.dumps(obj, sort_keys=True, default=default)


def data_hash(samples: list[SliceSample]) -> str:
    h = hashlib.sha256()
    for s in sorted(samples, key=lambda s: s.key):
        h.update(repr(s.key).encode())
        h.update(b"?" if s.label is None else str(s.label).encode())
        h.update(np.ascontiguousarray(s.pixels, dtype=np.float64).tobytes())
    return h.hexdigest()


def make_fingerprint(spec: BackendSpec, train: TrainConfig, samples: list[SliceSample]) -> dict:
    return {
        "config_sha256": hashlib.sha256(_canonical_json([spec, train]).encode()).hexdigest(),
        "data_sha256": data_hash(samples),
        "seed": train.seed,
    }


@dataclass
class DetectorModel:
    backend: str
    view: str
    estimator: object
    fingerprint: dict
    spec: BackendSpec
    train: TrainConfig
    sampled_keys: list = field(default_factory=list)

    @property
    def artifacts_covered(self) -> tuple[str, ...]:
        return ARTIFACTS_BY_VIEW[self.view]

    def _check_view(self, samples):
        for s in samples:
            if s.view != self.view:
                raise ViewMismatchError(f"{s.view} slice {s.key} fed to a {self.view} detector")

    def predict_proba(self, samples: list[SliceSample]) -> np.ndarray:
        """Artifact probability per slice."""
        self._check_view(samples)
        proba = self.estimator.predict_proba([s.pixels for s in samples])
        p = np.asarray(proba)[:, 1]
        return np.clip(p, 0.0, 1.0)

    def predict_flags(self, samples: list[SliceSample]) -> np.ndarray:
        return self.predict_proba(samples) > 0.5


class OracleModel:
    """Test-plumbing detector that reads ground truth instead of predicting.

    Uses the slice's own label when present, else a (volume, view, gradient,
    index) -> label lookup such as a benchmark label CSV.
    """

    backend = "oracle"

    def __init__(self, view: str, labels: dict | None = None):
        self.view = view
        self.labels = labels or {}
        self.fingerprint = {"config_sha256": "oracle", "data_sha256": "oracle", "seed": 0}

    @property
    def artifacts_covered(self):
        return ARTIFACTS_BY_VIEW[self.view]

    def predict_proba(self, samples):
        for s in samples:
            if s.view != self.view:
                raise ViewMismatchError(f"{s.view} slice {s.key} fed to a {self.view} detector")
        return np.array(
            [float(s.label if s.label is not None else self.labels.get(s.key, 0)) for s in samples]
        )

    def predict_flags(self, samples):
        return self.predict_proba(samples) > 0.5


def predict_slice(model, sample: SliceSample) -> dict:
    """Score one slice: probability plus the strict > 0.5 flag."""
    prob = float(model.predict_proba([sample])[0])
    return {"prob_artifact": prob, "flag": bool(prob > 0.5)}


def _infer_view(samples, view):
    views = {s.view for s in samples}
    if view is None:
        if len(views) != 1:
            raise TrainingError(f"samples mix views {sorted(views)}; pass view explicitly")
        return views.pop()
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}")
    if views - {view}:
        raise ViewMismatchError(f"samples from views {sorted(views)} for a {view} detector")
    return view


def _labeled_xy(samples):
    missing = [s.key for s in samples if s.label is None]
    if missing:
        raise TrainingError(f"{len(missing)} unlabeled samples (first: {missing[0]})")
    return [s.pixels for s in samples], np.array([s.label for s in samples], dtype=int)


def train_detector(
    samples: list[SliceSample],
    spec: BackendSpec,
    train: TrainConfig = TrainConfig(),
    view: str | None = None,
) -> DetectorModel:
    """Fit one backend on labeled slices and wrap it as a DetectorModel."""
    if not samples:
        raise TrainingError("no training samples")
    view = _infer_view(samples, view)
    # canonicalize by slice key so training never depends on input ordering
    samples = sorted(samples, key=lambda s: s.key)
    X, y = _labeled_xy(samples)

    backend = spec.backend
    if backend == "oracle":
        labels = {s.key: s.label for s in samples}
        model = OracleModel(view, labels)
        return model  # type: ignore[return-value]
    if backend == "cnn_head":
        est = CnnHeadClassifier(spec.backbone, head=spec.head, train=train)
    elif backend == "gabor_fc":
        est = GaborFcClassifier(gabor=spec.gabor, head=spec.head, train=train)
    elif backend == "cnn_pca_svm":
        est = CnnPcaSvmClassifier(spec.backbone, pca=spec.pca, svm=spec.svm, seed=train.seed)
    elif backend in ("gabor_rf", "zernike_rf", "lbp_rf"):
        descriptor = backend.split("_")[0]
        config = {"gabor": spec.gabor, "zernike": spec.zernike, "lbp": spec.lbp}[descriptor]
        rf = RfConfig(n_trees=spec.rf.n_trees, max_depth=spec.rf.max_depth, seed=train.seed)
        est = TextureRfClassifier(descriptor, config=config, rf=rf, class_balance=train.class_balance)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    est.fit(X, y)
    return DetectorModel(
        backend=backend,
        view=view,
        estimator=est,
        fingerprint=make_fingerprint(spec, train, samples),
        spec=spec,
        train=train,
    )


def train_cnn_head(backbone: FeatureBackbone, samples, head=HeadConfig(), train=TrainConfig(), view=None):
    spec = BackendSpec(backend="cnn_head", backbone=backbone, head=head)
    return train_detector(samples, spec, train, view)


def train_feature_rf(samples, descriptor: str = "gabor", config=None, rf: RfConfig = RfConfig(), view=None):
    backend = f"{descriptor}_rf"
    kwargs = {descriptor: config} if config is not None else {}
    spec = BackendSpec(backend=backend, rf=rf, **kwargs)
    return train_detector(samples, spec, TrainConfig(seed=rf.seed), view)


def train_gabor_fc(samples, head=HeadConfig(), train=TrainConfig(), gabor=GaborConfig(), view=None):
    spec = BackendSpec(backend="gabor_fc", gabor=gabor, head=head)
    return train_detector(samples, spec, train, view)


def train_cnn_pca_svm(backbone: FeatureBackbone, samples, pca=PcaConfig(), svm=SvmConfig(), train=TrainConfig(), view=None):
    spec = BackendSpec(backend="cnn_pca_svm", backbone=backbone, pca=pca, svm=svm)
    return train_detector(samples, spec, train, view)


def stratified_subsample(samples: list[SliceSample], fraction: float, seed: int) -> list[SliceSample]:
    """Class-stratified random subset: round(fraction * n_c) per class."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    chosen: list[SliceSample] = []
    for cls in (0, 1):
        group = [s for s in samples if s.label == cls]
        take = int(np.floor(fraction * len(group) + 0.5))
        if take:
            idx = rng.choice(len(group), size=take, replace=False)
            chosen.extend(group[i] for i in sorted(int(i) for i in idx))
    if not chosen:
        raise TrainingError(f"fraction {fraction} of {len(samples)} samples selects nothing")
    return chosen


def finetune(
    model: DetectorModel,
    base_samples: list[SliceSample],
    new_samples: list[SliceSample],
    fraction: float = 0.10,
    train: TrainConfig | None = None,
    seed: int | None = None,
) -> DetectorModel:
    """Retrain on base data plus a stratified subsample of the new data.

    The sampled slice keys are recorded on the returned model so callers can
    exclude them from any evaluation set.
    """
    train = train if train is not None else model.train
    subsample = stratified_subsample(new_samples, fraction, seed if seed is not None else train.seed)
    refit = train_detector(base_samples + subsample, model.spec, train, view=model.view)
    refit.sampled_keys = [s.key for s in subsample]
    return refit


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_model(model: DetectorModel, path) -> None:
    payload = pickle.dumps(
        {
            "estimator": model.estimator,
            "spec": model.spec,
            "train": model.train,
            "sampled_keys": model.sampled_keys,
        },
        protocol=4,
    )
    header = {
        "format_version": MODEL_FORMAT,
        "backend": model.backend,
        "view": model.view,
        "fingerprint": model.fingerprint,
        "artifacts_covered": list(model.artifacts_covered),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "tool_version": _tool_version,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_model_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: not a detector model file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(hlen).decode())


def load_model(path, expected_backend: str | None = None, expected_view: str | None = None) -> DetectorModel:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: not a detector model file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    if header.get("format_version") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: unsupported model format {header.get('format_version')!r}")
    actual = hashlib.sha256(payload).hexdigest()
    if actual != header["payload_sha256"]:
        raise ModelFormatError(f"{path}: payload digest mismatch")
    if expected_backend is not None and header["backend"] != expected_backend:
        raise ModelFormatError(f"{path}: backend {header['backend']!r} != expected {expected_backend!r}")
    if expected_view is not None and header["view"] != expected_view:
        raise ModelFormatError(f"{path}: view {header['view']!r} != expected {expected_view!r}")
    state = pickle.loads(payload)
    return DetectorModel(
        backend=header["backend"],
        view=header["view"],
        estimator=state["estimator"],
        fingerprint=header["fingerprint"],
        spec=state["spec"],
        train=state["train"],
        sampled_keys=state.get("sampled_keys", []),
    )
