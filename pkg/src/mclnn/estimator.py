"""Scikit-learn compatible clip classifier built on masked conditional layers."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import Standardizer, append_delta, segment_clip, stack_segments
from .evaluation import vote
from .network import LayerSpec, ModelConfig, Network
from .training import TrainConfig, train
from .validation import check_clips, check_labels

# Two masked layers over 120 input bins (60 log-Mel + 60 delta).
DEFAULT_LAYERS = (
    {"type": "mclnn", "nodes": 300, "order": 15, "bandwidth": 20, "overlap": -5},
    {"type": "mclnn", "nodes": 200, "order": 15, "bandwidth": 5, "overlap": 3},
)


class MCLNNClassifier(ClassifierMixin, BaseEstimator):
    """Classify variable-length clips by voting over fixed-width segments.

    ``X`` is a sequence of ``l x T`` feature matrices (frames as columns);
    ``y`` holds integer class indices. During ``fit`` each clip is
    optionally extended with delta rows, standardized with statistics from
    the training clips, cut into segments of width
    ``sum(2 * order) + extra_frames`` and every segment is trained on with
    its clip's label. ``predict`` sums the segment probabilities of a clip
    and takes the argmax.

    Parameters
    ----------
    layers : sequence of dict, default=None
        Conditional layer specs with keys ``type`` ('clnn' or 'mclnn'),
        ``nodes``, ``order`` and, for 'mclnn', ``bandwidth`` and ``overlap``.
        ``None`` uses the two-layer ESC-10 architecture.
    dense : sequence of int, default=(100, 100)
        Widths of the fully connected layers after pooling.
    extra_frames : int, default=1
        Frames left after the conditional layers, averaged by the pooling layer.
    n_classes : int, default=None
        Number of classes; inferred as ``max(y) + 1`` when ``None``.
    transfer : {'prelu', 'sigmoid', 'linear'}, default='prelu'
    hop : int, default=None
        Segment hop in frames; ``None`` means non-overlapping segments.
    delta : bool, default=False
        Append first-difference rows before standardizing.
    standardize : bool, default=True
    epochs, batch_size, learning_rate, clnn_dropout, dense_dropout, patience
        Training settings, see :class:`~mclnn.training.TrainConfig`.
    random_state : int, default=0
        Seeds weight initialisation, shuffling and dropout.

    Attributes
    ----------
    network_ : Network
    standardizer_ : Standardizer or None
    model_config_ : ModelConfig
    history_ : list of EpochMetrics
    classes_ : ndarray of shape (n_classes,)
    n_features_in_ : int
        Feature rows per clip before delta expansion.
    """

    def __init__(self, layers=None, dense=(100, 100), extra_frames=1, n_classes=None,
                 transfer="prelu", hop=None, delta=False, standardize=True, epochs=200,
                 batch_size=32, learning_rate=1e-3, clnn_dropout=0.0, dense_dropout=0.5,
                 patience=None, random_state=0):
        self.layers = layers
        self.dense = dense
        self.extra_frames = extra_frames
        self.n_classes = n_classes
        self.transfer = transfer
        self.hop = hop
        self.delta = delta
        self.standardize = standardize
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.clnn_dropout = clnn_dropout
        self.dense_dropout = dense_dropout
        self.patience = patience
        self.random_state = random_state

    def model_config(self, feature_len, n_classes):
        layers = DEFAULT_LAYERS if self.layers is None else self.layers
        return ModelConfig(
            feature_len=feature_len,
            classes=n_classes,
            layers=tuple(LayerSpec(**dict(s)) for s in layers),
            dense=tuple(self.dense),
            extra_frames=self.extra_frames,
            transfer=self.transfer,
        )

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.random_state or 0,
            clnn_dropout=self.clnn_dropout,
            dense_dropout=self.dense_dropout,
            patience=self.patience,
        )

    def _prepare(self, clips):
        if self.delta:
            clips = [append_delta(c) for c in clips]
        if self.standardizer_ is not None:
            clips = self.standardizer_.transform(clips)
        return clips

    def _segments(self, clips, labels):
        q = self.model_config_.segment_width
        segs = []
        for i, (clip, label) in enumerate(zip(clips, labels)):
            segs.extend(segment_clip(clip, q, self.hop, clip_id=f"clip {i}", label=int(label)))
        return stack_segments(segs)

    def fit(self, X, y, validation_data=None):
        """Fit on clips ``X``; ``validation_data=(X_val, y_val)`` enables best-epoch selection."""
        clips = check_clips(X)
        if not clips:
            raise ValueError("cannot fit on an empty set of clips")
        y = check_labels(y, len(clips), self.n_classes)
        n_classes = self.n_classes or int(y.max()) + 1
        self.n_features_in_ = clips[0].shape[0]
        self.classes_ = np.arange(n_classes)

        self.standardizer_ = None
        if self.delta:
            clips = [append_delta(c) for c in clips]
        if self.standardize:
            self.standardizer_ = Standardizer().fit(clips)
            clips = self.standardizer_.transform(clips)
        self.model_config_ = self.model_config(clips[0].shape[0], n_classes)
        x, seg_y = self._segments(clips, y)

        x_val = y_val = None
        if validation_data is not None:
            val_clips = check_clips(validation_data[0], self.n_features_in_)
            val_labels = check_labels(validation_data[1], len(val_clips), n_classes)
            if val_clips:
                x_val, y_val = self._segments(self._prepare(val_clips), val_labels)

        self.network_ = Network.from_config(self.model_config_, seed=self.random_state or 0)
        _, self.history_ = train(self.network_, x, seg_y, x_val, y_val, self.train_config())
        return self

    def predict_segment_proba(self, X):
        """Per-clip arrays of segment probabilities, each ``(r, n_classes)``."""
        check_is_fitted(self, "network_")
        clips = self._prepare(check_clips(X, self.n_features_in_))
        q = self.model_config_.segment_width
        out = []
        for i, clip in enumerate(clips):
            segs = segment_clip(clip, q, self.hop, clip_id=f"clip {i}")
            out.append(self.network_.predict_proba(np.stack([s.data for s in segs])))
        return out

    def predict_proba(self, X):
        """Mean segment probability per clip; its argmax is the voted class."""
        return np.vstack([p.mean(axis=0) for p in self.predict_segment_proba(X)])

    def predict(self, X):
        return np.array([vote(p) for p in self.predict_segment_proba(X)], dtype=np.int64)
