import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mclnn.data import synth_dataset
from mclnn.estimator import DEFAULT_LAYERS, MCLNNClassifier

LAYERS = [dict(type="mclnn", nodes=12, order=1, bandwidth=6, overlap=3),
          dict(type="clnn", nodes=8, order=1)]


@pytest.fixture(scope="module")
def data():
    clips, manifest = synth_dataset(3, 6, 12, 20, seed=2)
    y = np.array([r.label for r in manifest.records])
    return clips, y


@pytest.fixture(scope="module")
def fitted(data):
    clips, y = data
    return MCLNNClassifier(layers=LAYERS, dense=(8,), extra_frames=2, epochs=40,
                           random_state=1).fit(clips, y)


def test_params_round_trip():
    est = MCLNNClassifier(layers=LAYERS, hop=3, delta=True)
    params = est.get_params()
    assert params["hop"] == 3 and params["layers"] == LAYERS
    other = clone(est).set_params(epochs=7)
    assert other.epochs == 7 and other.delta is True


def test_default_layers():
    cfg = MCLNNClassifier(extra_frames=41).model_config(120, 10)
    assert [s.nodes for s in cfg.layers] == [300, 200]
    assert [(s.bandwidth, s.overlap, s.order) for s in cfg.layers] == [(20, -5, 15), (5, 3, 15)]
    assert cfg.dense == (100, 100)
    assert cfg.segment_width == 101
    assert len(DEFAULT_LAYERS) == 2


def test_fit_predict(fitted, data):
    clips, y = data
    assert fitted.model_config_.segment_width == 6
    assert fitted.score(clips, y) == 1.0
    proba = fitted.predict_proba(clips)
    assert proba.shape == (len(clips), 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(proba.argmax(axis=1), fitted.predict(clips))
    segs = fitted.predict_segment_proba(clips[:1])
    assert segs[0].shape == (3, 3)


def test_standardizer_uses_training_clips_only(fitted, data):
    clips, _ = data
    frames = np.hstack(clips)
    np.testing.assert_allclose(fitted.standardizer_.mean_, frames.mean(axis=1))


def test_delta_doubles_feature_rows(data):
    clips, y = data
    est = MCLNNClassifier(layers=LAYERS, dense=(4,), extra_frames=2, epochs=1, delta=True)
    est.fit(clips, y)
    assert est.model_config_.feature_len == 24
    assert est.n_features_in_ == 12
    assert est.predict(clips[:2]).shape == (2,)


def test_input_validation(fitted, data):
    clips, y = data
    with pytest.raises(NotFittedError):
        MCLNNClassifier().predict(clips)
    with pytest.raises(ValueError, match="expected 12"):
        fitted.predict([np.zeros((5, 20))])
    with pytest.raises(ValueError, match="2-D"):
        MCLNNClassifier(layers=LAYERS).fit([np.zeros(20)], [0])
    with pytest.raises(ValueError, match="labels"):
        MCLNNClassifier(layers=LAYERS).fit(clips, y[:-1])
    with pytest.raises(ValueError, match="non-finite"):
        MCLNNClassifier(layers=LAYERS).fit([np.full((12, 20), np.nan)], [0])


def test_short_clip_rejected(data):
    clips, y = data
    from mclnn.data import ClipTooShortError
    with pytest.raises(ClipTooShortError, match="shorter than segment width q=6"):
        MCLNNClassifier(layers=LAYERS, extra_frames=2, epochs=1).fit(
            [c[:, :5] for c in clips], y)


def test_fit_is_deterministic(data):
    clips, y = data
    kw = dict(layers=LAYERS, dense=(8,), extra_frames=2, epochs=3, random_state=4)
    a = MCLNNClassifier(**kw).fit(clips, y).predict_proba(clips)
    b = MCLNNClassifier(**kw).fit(clips, y).predict_proba(clips)
    assert np.array_equal(a, b)
