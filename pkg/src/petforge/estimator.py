"""scikit-learn style wrapper: fit a PET method on in-memory waveforms, transform to embeddings."""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autograd as ag
from .backbone import BackboneConfig
from .data import CorpusConfig
from .errors import InputError
from .harness import DataConfig, OptimConfig, RunConfig, ScheduleConfig, make_optimizer, run_steps
from .head import HeadConfig
from .metrics import cosine_score
from .model import SpeakerModel
from .pet import MethodSpec


class SpeakerEmbedder(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Train a method's trainable set on ``(waveforms, speaker labels)``.

    ``X`` is a 2-D array of equal-length waveforms. ``transform`` returns
    speaker embeddings, ``predict`` the training-speaker class, and
    ``verify`` cosine scores between paired rows.
    """

    def __init__(self, method="unipet", backbone=None, head=None, backbone_weights=None,
                 steps=300, batch_size=32, crop_seconds=1.0, warmup_fraction=0.1,
                 optim=None, seed=0, dtype="float32"):
        self.method = method
        self.backbone = backbone
        self.head = head
        self.backbone_weights = backbone_weights
        self.steps = steps
        self.batch_size = batch_size
        self.crop_seconds = crop_seconds
        self.warmup_fraction = warmup_fraction
        self.optim = optim
        self.seed = seed
        self.dtype = dtype

    def _run_config(self):
        spec = self.method if isinstance(self.method, MethodSpec) else MethodSpec.desk(self.method)
        backbone = self.backbone or BackboneConfig()
        return RunConfig(
            backbone=backbone,
            method=spec,
            head=self.head or HeadConfig(),
            optim=self.optim or OptimConfig(),
            schedule=ScheduleConfig(total_steps=self.steps, warmup_fraction=self.warmup_fraction),
            batch_size=self.batch_size,
            seed=self.seed,
            backbone_weights=self.backbone_weights,
            data=DataConfig(corpus=CorpusConfig(sample_rate=backbone.sample_rate)),
        )

    def _check_X(self, X):
        X = check_array(X, dtype=np.dtype(self.dtype))
        min_len = (self.backbone or BackboneConfig()).receptive_field
        if X.shape[1] < min_len:
            raise InputError(f"waveforms have {X.shape[1]} samples, fewer than the {min_len} needed")
        return X

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.dtype(self.dtype))
        X = self._check_X(X)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        if len(self.classes_) < 2:
            raise InputError("need at least two speakers")
        labels = self.label_encoder_.transform(y)
        config = self._run_config()
        model = SpeakerModel(config.backbone, config.method, config.head, len(self.classes_),
                             seed=self.seed, dtype=np.dtype(self.dtype))
        if self.backbone_weights:
            model.backbone.load_weights(self.backbone_weights)
        crop = min(int(round(self.crop_seconds * config.backbone.sample_rate)), X.shape[1])

        def batches(step):
            rng = np.random.default_rng([self.seed, 1, step])
            rows = rng.integers(0, len(X), size=self.batch_size)
            starts = rng.integers(0, X.shape[1] - crop + 1, size=self.batch_size)
            waves = np.stack([X[r, s : s + crop] for r, s in zip(rows, starts)])
            return waves, labels[rows]

        opt = make_optimizer(config, model)
        self.log_ = run_steps(config, model, opt, batches, 0, self.steps)
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        return self

    def _forward(self, X, what):
        check_is_fitted(self, "model_")
        X = self._check_X(X)
        fn = getattr(self.model_, what)
        with ag.no_grad():
            return np.concatenate([fn(X[i : i + 1]).data for i in range(len(X))], axis=0)

    def transform(self, X):
        return self._forward(X, "embed").astype(np.float64)

    def predict_proba(self, X):
        logits = self._forward(X, "logits").astype(np.float64)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def verify(self, X_enroll, X_test):
        """Cosine scores between row ``i`` of ``X_enroll`` and row ``i`` of ``X_test``."""
        a, b = self.transform(X_enroll), self.transform(X_test)
        if len(a) != len(b):
            raise InputError("enroll and test batches differ in length")
        return np.array([cosine_score(u, v) for u, v in zip(a, b)])
