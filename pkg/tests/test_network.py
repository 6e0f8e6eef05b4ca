import json
import struct

import numpy as np
import pytest

from mclnn.estimator import DEFAULT_LAYERS
from mclnn.network import (LayerSpec, ModelConfig, Network, SegmentWidthError, load_network,
                           save_network)


def small_config(**kw):
    base = dict(
        feature_len=10, classes=3,
        layers=[dict(type="mclnn", nodes=8, order=1, bandwidth=4, overlap=1),
                dict(type="clnn", nodes=6, order=2)],
        dense=(5,), extra_frames=2,
    )
    base.update(kw)
    return ModelConfig(**base)


def test_segment_width_sums_consumed_frames():
    cfg = small_config()
    assert cfg.segment_width == 2 * 1 + 2 * 2 + 2
    assert cfg.describe_width() == "q = 2*1 + 2*2 + 2 = 8"


def test_default_architecture_widths():
    cfg = ModelConfig(feature_len=120, classes=10, layers=DEFAULT_LAYERS, extra_frames=41)
    assert cfg.segment_width == 101
    assert [s.window for s in cfg.layers] == [31, 31]
    net = Network.from_config(cfg, seed=0)
    # roughly three million parameters for the 120-bin, k=41 setting
    assert abs(net.n_params() - 3.0e6) / 3.0e6 < 0.01


def test_each_layer_consumes_2n_frames():
    cfg = small_config()
    net = Network.from_config(cfg, seed=1)
    h = np.random.default_rng(0).normal(size=(2, cfg.segment_width, 10))
    for layer, spec in zip(net.clnn_layers, cfg.layers):
        out, _ = layer.forward(h)
        assert out.shape[1] == h.shape[1] - 2 * spec.order
        h = out
    assert h.shape[1] == cfg.extra_frames


def test_wrong_width_rejected_with_expected_and_found():
    cfg = small_config()
    net = Network.from_config(cfg)
    with pytest.raises(SegmentWidthError, match=r"segment width q=9, model requires 8"):
        net.forward(np.zeros((1, 10, 9)))


def test_config_validation():
    with pytest.raises(ValueError, match="bandwidth and overlap"):
        LayerSpec(nodes=4, order=1, type="mclnn")
    with pytest.raises(ValueError, match="order"):
        LayerSpec(nodes=4, order=0, type="clnn")
    with pytest.raises(ValueError, match="extra_frames"):
        small_config(extra_frames=0)
    with pytest.raises(ValueError, match="2 classes"):
        small_config(classes=1)


def test_config_dict_round_trip():
    cfg = small_config()
    assert ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_probabilities_sum_to_one():
    cfg = small_config()
    net = Network.from_config(cfg, seed=3)
    p = net.predict_proba(np.random.default_rng(1).normal(size=(4, 10, 8)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_serialization_round_trip(tmp_path):
    cfg = small_config()
    net = Network.from_config(cfg, seed=5)
    path = tmp_path / "m.mcln"
    save_network(net, path)
    loaded = load_network(path)
    assert loaded.config == cfg
    for (k, a), (k2, b) in zip(net.params().items(), loaded.params().items()):
        assert k == k2 and np.array_equal(a, b)
    assert loaded.clnn_layers[0].mask == net.clnn_layers[0].mask
    x = np.random.default_rng(2).normal(size=(3, 10, 8))
    assert np.array_equal(net.predict_proba(x), loaded.predict_proba(x))
    # resaving gives identical bytes
    save_network(loaded, tmp_path / "again.mcln")
    assert (tmp_path / "again.mcln").read_bytes() == path.read_bytes()


def test_serialization_layout(tmp_path):
    net = Network.from_config(small_config(), seed=0)
    path = tmp_path / "m.mcln"
    save_network(net, path)
    blob = path.read_bytes()
    assert blob[:4] == b"MCLN"
    version, hlen = struct.unpack_from("<HI", blob, 4)
    assert version == 1
    header = json.loads(blob[10:10 + hlen])
    assert header["layers"][0] == {"type": "mclnn", "n": 1, "l": 10, "e": 8,
                                   "mask": {"bw": 4, "ov": 1}, "transfer": "prelu"}
    assert header["layers"][1]["mask"] is None
    assert len(blob) - 10 - hlen == 8 * net.n_params()
    first = np.frombuffer(blob, "<f8", count=3, offset=10 + hlen)
    assert np.array_equal(first, net.clnn_layers[0].weights.reshape(-1)[:3])


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.mcln"
    bad.write_bytes(b"XXXX" + b"\0" * 20)
    with pytest.raises(ValueError, match="magic"):
        load_network(bad)
    net = Network.from_config(small_config(), seed=0)
    good = tmp_path / "good.mcln"
    save_network(net, good)
    (tmp_path / "short.mcln").write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError, match="parameters"):
        load_network(tmp_path / "short.mcln")
