"""Clip-level voting, confusion matrices and fold-rotation cross-validation."""

from dataclasses import dataclass
import json
import logging
import warnings

import numpy as np

logger = logging.getLogger(__name__)


def vote(segment_probs):
    """Clip class from per-segment probability rows: argmax of their sum.

    ``np.argmax`` returns the first maximum, so ties go to the lowest class.
    """
    p = np.asarray(segment_probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None]
    if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] == 0:
        raise ValueError(f"need at least one probability row, got shape {p.shape}")
    return int(np.argmax(p.sum(axis=0)))


@dataclass
class ClipPrediction:
    clip_id: str
    segment_probs: np.ndarray
    voted: int


@dataclass
class ConfusionReport:
    matrix: np.ndarray
    per_class_accuracy: np.ndarray
    overall_accuracy: float

    @property
    def total(self):
        return int(self.matrix.sum())


def confusion(truths, predictions, n_classes=None):
    """Counts with true classes on rows and predicted classes on columns."""
    t = np.asarray(truths, dtype=np.int64)
    p = np.asarray(predictions, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"truths and predictions differ in length: {t.shape} vs {p.shape}")
    if n_classes is None:
        n_classes = int(max(t.max(initial=-1), p.max(initial=-1))) + 1
    if len(t) and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return report_from_matrix(m)


def report_from_matrix(matrix):
    m = np.asarray(matrix, dtype=np.int64)
    rows = m.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, np.diag(m) / np.maximum(rows, 1), np.nan)
    total = m.sum()
    overall = float(np.trace(m) / total) if total else float("nan")
    return ConfusionReport(m, per_class, overall)


def format_confusion(matrix, labels=None):
    """Aligned text table, true classes as rows and predictions as columns."""
    m = np.asarray(matrix)
    labels = [str(i) for i in range(len(m))] if labels is None else [str(s) for s in labels]
    width = max(max(len(s) for s in labels), len(str(m.max(initial=0))))
    lines = []
    for name, row in zip(labels, m):
        lines.append(name.rjust(width) + " " + " ".join(str(v).rjust(width) for v in row))
    lines.append(" " * width + " " + " ".join(s.rjust(width) for s in labels))
    return "\n".join(lines)


def fold_rotation(folds, i):
    """Test fold ``i``, validation the next fold (cyclically), train the rest."""
    folds = list(folds)
    test = folds[i]
    val = folds[(i + 1) % len(folds)]
    train = [f for f in folds if f not in (test, val)]
    return train, val, test


@dataclass
class CrossValidationResult:
    per_fold_accuracy: list
    confusion: np.ndarray
    histories: list
    config_echo: dict

    @property
    def mean_accuracy(self):
        return float(np.mean(self.per_fold_accuracy))

    def to_json(self):
        payload = {
            "per_fold_accuracy": [float(a) for a in self.per_fold_accuracy],
            "mean_accuracy": self.mean_accuracy,
            "confusion": self.confusion.tolist(),
            "config_echo": self.config_echo,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def run_cross_validation(manifest, estimator, n_folds=5, config_echo=None):
    """Rotate test/validation/train folds over ``manifest`` and score each.

    ``estimator`` is an unfitted :class:`~mclnn.estimator.MCLNNClassifier`;
    each rotation trains a clone seeded with ``random_state + rotation``.
    Standardization is fitted inside the estimator on the training folds only.
    """
    from sklearn.base import clone

    folds = manifest.folds
    if len(folds) != n_folds:
        raise ValueError(f"manifest has {len(folds)} folds ({folds}), expected {n_folds}")
    if n_folds < 3:
        raise ValueError("cross-validation needs at least 3 folds (train/validation/test)")
    n_classes = estimator.n_classes or manifest.n_classes
    cache = {r.clip_id: manifest.load(r) for r in manifest.records}

    def gather(fold_ids):
        recs = manifest.in_folds(fold_ids)
        return [cache[r.clip_id] for r in recs], np.array([r.label for r in recs], dtype=np.int64)

    for f in folds:
        missing = set(range(n_classes)) - {r.label for r in manifest.in_folds([f])}
        if missing:
            warnings.warn(f"fold {f} has no clips of classes {sorted(missing)}")

    accuracies = []
    total = np.zeros((n_classes, n_classes), dtype=np.int64)
    histories = []
    base_seed = estimator.random_state or 0
    for i in range(n_folds):
        train_f, val_f, test_f = fold_rotation(folds, i)
        x_tr, y_tr = gather(train_f)
        x_va, y_va = gather([val_f])
        x_te, y_te = gather([test_f])
        model = clone(estimator).set_params(random_state=base_seed + i, n_classes=n_classes)
        model.fit(x_tr, y_tr, validation_data=(x_va, y_va))
        pred = model.predict(x_te)
        report = confusion(y_te, pred, n_classes)
        accuracies.append(report.overall_accuracy)
        total += report.matrix
        histories.append(model.history_)
        logger.info("rotation %d: test fold %s accuracy %.4f", i, test_f, report.overall_accuracy)
    return CrossValidationResult(accuracies, total, histories, config_echo or {})
