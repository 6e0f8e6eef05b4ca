"""Feature files, manifests, delta features, standardization and segmentation.

A clip's features are an ``l x T`` float64 matrix: one row per frequency bin,
one column per frame.
"""

import csv
from dataclasses import dataclass
import os
from pathlib import Path
import struct

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .numerics import DTYPE, SeededRng
from .validation import check_clips, check_feature_matrix

FEATURE_MAGIC = b"MCLF"
STD_FLOOR = 1e-8
MANIFEST_FIELDS = ("clip_id", "path", "label", "fold")


class FeatureFileError(ValueError):
    pass


class ClipTooShortError(ValueError):
    pass


def save_features(path, features):
    """Write ``MCLF`` | u32 l | u32 T | l*T float64, frame after frame."""
    m = check_feature_matrix(features)
    l, t = m.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", l, t))
        fh.write(np.ascontiguousarray(m.T, dtype="<f8").tobytes())


def load_features(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise FeatureFileError(f"{path}: no such feature file") from None
    if blob[:4] != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FeatureFileError(f"{path}: truncated header")
    l, t = struct.unpack_from("<II", blob, 4)
    if l == 0 or t == 0:
        raise FeatureFileError(f"{path}: empty feature matrix (l={l}, T={t})")
    payload = len(blob) - 12
    if payload != 8 * l * t:
        raise FeatureFileError(
            f"{path}: payload of {payload} bytes, expected {8 * l * t} for l={l}, T={t}"
        )
    m = np.frombuffer(blob, dtype="<f8", offset=12).reshape(t, l).T.astype(DTYPE)
    if not np.all(np.isfinite(m)):
        raise FeatureFileError(f"{path}: non-finite values")
    return m


def append_delta(features):
    """Stack the first temporal difference under the features (``2l x T``).

    The first frame has no predecessor, so its delta is zero.
    """
    m = check_feature_matrix(features)
    delta = np.zeros_like(m)
    delta[:, 1:] = np.diff(m, axis=1)
    return np.vstack([m, delta])


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-feature standardization fitted over every frame of the training clips.

    ``fit`` takes a list of ``l x T`` clips; statistics pool all their
    frames. The standard deviation is the population one, floored at
    ``std_floor`` so constant features map to zero.
    """

    def __init__(self, std_floor=STD_FLOOR):
        self.std_floor = std_floor

    def fit(self, clips, y=None):
        clips = check_clips(clips)
        if not clips:
            raise ValueError("cannot fit a standardizer on an empty set of clips")
        frames = np.hstack(clips)
        self.mean_ = frames.mean(axis=1)
        self.scale_ = np.maximum(frames.std(axis=1), self.std_floor)
        self.n_features_in_ = frames.shape[0]
        return self

    def transform(self, clips):
        check_is_fitted(self, ("mean_", "scale_"))
        single = isinstance(clips, np.ndarray) and clips.ndim == 2
        clips = check_clips([clips] if single else clips, n_features=self.n_features_in_)
        out = [(c - self.mean_[:, None]) / self.scale_[:, None] for c in clips]
        return out[0] if single else out


def fit_standardizer(training_clips):
    return Standardizer().fit(training_clips)


def apply_standardizer(standardizer, clip):
    return standardizer.transform(np.asarray(clip, dtype=DTYPE))


@dataclass
class Segment:
    data: np.ndarray
    clip_id: str
    label: int


def segment_clip(features, q, hop=None, clip_id="", label=-1):
    """Cut contiguous ``l x q`` windows starting at 0, hop, 2*hop, ...

    ``hop`` defaults to ``q`` (non-overlapping).
    """
    m = check_feature_matrix(features)
    hop = q if hop is None else hop
    if q < 1 or hop < 1:
        raise ValueError(f"q and hop must be positive, got q={q}, hop={hop}")
    t = m.shape[1]
    if t < q:
        raise ClipTooShortError(
            f"clip {clip_id or '<unnamed>'} has {t} frames, shorter than segment width q={q}"
        )
    return [Segment(m[:, s:s + q].copy(), clip_id, label) for s in range(0, t - q + 1, hop)]


def stack_segments(segments):
    x = np.stack([s.data for s in segments])
    y = np.array([s.label for s in segments], dtype=np.int64)
    return x, y


@dataclass(frozen=True)
class ManifestRecord:
    clip_id: str
    path: str
    label: int
    fold: int


class FoldManifest:
    """Clip records plus the directory their relative paths resolve against."""

    def __init__(self, records, root="."):
        self.records = list(records)
        self.root = Path(root)
        ids = [r.clip_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest clip_ids must be unique")
        for r in self.records:
            if r.label < 0:
                raise ValueError(f"clip {r.clip_id}: negative label {r.label}")
            if r.fold < 1:
                raise ValueError(f"clip {r.clip_id}: fold must be >= 1, got {r.fold}")

    def __len__(self):
        return len(self.records)

    @property
    def folds(self):
        return sorted({r.fold for r in self.records})

    @property
    def n_classes(self):
        return max(r.label for r in self.records) + 1

    def in_folds(self, folds):
        folds = set(folds)
        return [r for r in self.records if r.fold in folds]

    def resolve(self, record):
        return self.root / record.path

    def load(self, record):
        return load_features(self.resolve(record))

    @classmethod
    def read(cls, path):
        path = Path(path)
        try:
            fh = open(path, newline="")
        except FileNotFoundError:
            raise FeatureFileError(f"{path}: manifest not found") from None
        with fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
                raise FeatureFileError(
                    f"{path}: header must be {','.join(MANIFEST_FIELDS)}, got {reader.fieldnames}"
                )
            try:
                records = [ManifestRecord(row["clip_id"], row["path"], int(row["label"]),
                                          int(row["fold"])) for row in reader]
            except (TypeError, ValueError) as exc:
                raise FeatureFileError(f"{path}: malformed row ({exc})") from None
        return cls(records, root=path.parent)

    def write(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_FIELDS)
            for r in self.records:
                writer.writerow([r.clip_id, r.path, r.label, r.fold])


def synth_dataset(n_classes=3, clips_per_class=10, feature_len=16, frames=40, seed=0,
                  n_folds=5):
    """Band-limited noise clips, one frequency band per class.

    Class ``k`` draws rows ``[k*l//c, (k+1)*l//c)`` from U[0.5, 1.0] and all
    other rows from U[0, 0.05]. Clips cycle through the classes and are
    dealt round-robin over ``n_folds`` folds.

    Returns ``(clips, manifest)``; manifest paths are ``<clip_id>.mclf``.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if clips_per_class < 1 or feature_len < n_classes or frames < 1:
        raise ValueError("clips_per_class and frames must be positive and feature_len >= classes")
    rng = SeededRng(seed)
    clips = []
    records = []
    for j in range(n_classes * clips_per_class):
        label = j % n_classes
        lo = label * feature_len // n_classes
        hi = (label + 1) * feature_len // n_classes
        clip = rng.uniform(0.0, 0.05, (feature_len, frames))
        clip[lo:hi] = rng.uniform(0.5, 1.0, (hi - lo, frames))
        clip_id = f"clip_{j:04d}"
        clips.append(clip)
        records.append(ManifestRecord(clip_id, f"{clip_id}.mclf", label, j % n_folds + 1))
    return clips, FoldManifest(records)


def write_dataset(out_dir, clips, manifest):
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    for clip, record in zip(clips, manifest.records):
        save_features(out_dir / record.path, clip)
    manifest.write(out_dir / "manifest.csv")
    return out_dir / "manifest.csv"
