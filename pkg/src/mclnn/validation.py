"""Input checks shared by the estimator and the data pipeline."""

import numpy as np

from .numerics import DTYPE


def check_feature_matrix(features, name="features", n_features=None):
    """Return ``features`` as a finite float64 ``l x T`` array with ``T >= 1``."""
    m = np.asarray(features, dtype=DTYPE)
    if m.ndim != 2:
        raise ValueError(f"{name} must be a 2-D (features x frames) matrix, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one frame, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    if n_features is not None and m.shape[0] != n_features:
        raise ValueError(f"{name} has {m.shape[0]} feature rows, expected {n_features}")
    return m


def check_clips(clips, n_features=None):
    """Validate a sequence of clips that share one feature length."""
    if isinstance(clips, np.ndarray) and clips.ndim == 3:
        clips = list(clips)
    out = [check_feature_matrix(c, f"clip {i}", n_features) for i, c in enumerate(clips)]
    if out and len({c.shape[0] for c in out}) != 1:
        raise ValueError("all clips must have the same number of feature rows")
    return out


def check_labels(y, n_samples, n_classes=None):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_samples:
        raise ValueError(f"expected {n_samples} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class indices")
    y = y.astype(np.int64)
    if len(y) and y.min() < 0:
        raise ValueError("labels must be non-negative class indices")
    if n_classes is not None and len(y) and y.max() >= n_classes:
        raise ValueError(f"label {y.max()} out of range for {n_classes} classes")
    return y
