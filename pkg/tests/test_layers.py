import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mclnn.layers import (ClnnLayer, DenseLayer, clnn_backward, clnn_forward, dense_forward,
                          dropout_mask, global_mean_pool, prelu, softmax)
from mclnn.mask import BinaryMask, MaskSpec, build_mask
from mclnn.numerics import SeededRng


def reference_forward(layer, seg):
    """Per-element double loop over window offsets, features and nodes."""
    n, (l, t) = layer.order, seg.shape
    w = layer.weights if layer.mask is None else layer.weights * layer.mask.entries
    out = np.zeros((layer.out_len, t - 2 * n))
    for c, centre in enumerate(range(n, t - n)):
        for j in range(layer.out_len):
            acc = layer.bias[j]
            for u in range(-n, n + 1):
                for i in range(l):
                    acc += seg[i, centre + u] * w[u + n, i, j]
            if layer.transfer == "prelu":
                acc = acc if acc > 0 else layer.alpha[j] * acc
            elif layer.transfer == "sigmoid":
                acc = 1.0 / (1.0 + np.exp(-acc))
            out[j, c] = acc
    return out


def random_layer(seed, l=8, e=5, n=1, mask=None, transfer="prelu"):
    rng = np.random.default_rng(seed)
    layer = ClnnLayer(n, l, e, mask=mask, transfer=transfer,
                      weights=rng.normal(size=(2 * n + 1, l, e)), bias=rng.normal(size=e))
    if layer.alpha is not None:
        layer.alpha[...] = rng.uniform(0.05, 0.5, e)
    return layer


def test_sum_of_three_frames():
    layer = ClnnLayer(1, 1, 1, transfer="linear", weights=np.ones((3, 1, 1)))
    assert np.array_equal(clnn_forward(layer, [[1.0, 2.0, 3.0]]), [[6.0]])


def test_zero_weights_give_transfer_of_bias():
    layer = ClnnLayer(2, 3, 4, transfer="sigmoid", bias=[-1.0, 0.0, 0.5, 2.0])
    out = clnn_forward(layer, np.random.default_rng(0).normal(size=(3, 5)))
    assert out.shape == (4, 1)
    np.testing.assert_allclose(out[:, 0], 1.0 / (1.0 + np.exp(-layer.bias)))


def test_frame_count():
    layer = random_layer(0, l=4, e=3, n=2)
    assert clnn_forward(layer, np.zeros((4, 7))).shape == (3, 3)


@pytest.mark.parametrize("transfer", ["prelu", "sigmoid", "linear"])
def test_matches_elementwise_reference(transfer):
    spec = MaskSpec(3, 1, 6, 4)
    layer = random_layer(1, l=6, e=4, n=2, mask=build_mask(spec), transfer=transfer)
    seg = np.random.default_rng(2).normal(size=(6, 9))
    np.testing.assert_allclose(clnn_forward(layer, seg), reference_forward(layer, seg),
                               rtol=1e-12, atol=1e-12)


def test_all_ones_mask_is_bit_identical():
    l, e, n = 7, 5, 2
    plain = random_layer(3, l, e, n)
    ones = BinaryMask(np.ones((l, e)), MaskSpec(l, l, l, e))
    masked = ClnnLayer(n, l, e, mask=ones, weights=plain.weights, bias=plain.bias, alpha=plain.alpha)
    seg = np.random.default_rng(4).normal(size=(l, 9))
    up = np.random.default_rng(5).normal(size=(e, 5))
    assert np.array_equal(clnn_forward(plain, seg), clnn_forward(masked, seg))
    for a, b in zip(clnn_backward(plain, seg, up), clnn_backward(masked, seg, up)):
        assert np.array_equal(a, b)


def test_rejects_short_or_misshaped_segments():
    layer = random_layer(0, l=4, e=3, n=2)
    with pytest.raises(ValueError, match="at least 5"):
        clnn_forward(layer, np.zeros((4, 4)))
    with pytest.raises(ValueError, match="4 rows"):
        clnn_forward(layer, np.zeros((3, 6)))


def test_mask_shape_must_match():
    with pytest.raises(ValueError, match="mask shape"):
        ClnnLayer(1, 4, 3, mask=build_mask(MaskSpec(2, 1, 3, 4)))


def test_zero_upstream_gives_zero_gradients():
    layer = random_layer(0)
    seg = np.random.default_rng(0).normal(size=(8, 5))
    for g in clnn_backward(layer, seg, np.zeros((5, 3))):
        assert not np.any(g)


def test_masked_positions_get_zero_gradient():
    mask = build_mask(MaskSpec(3, -1, 8, 5))
    layer = random_layer(0, mask=mask)
    seg = np.random.default_rng(1).normal(size=(8, 5))
    gw = clnn_backward(layer, seg, np.random.default_rng(2).normal(size=(5, 3)))[0]
    assert np.all(gw[:, mask.entries == 0] == 0.0)


def _fd_check(layer, seg, up, h=1e-5):
    """Central differences of <up, forward(seg)> for every parameter and input entry."""
    def objective():
        return float(np.sum(up * clnn_forward(layer, seg)))

    gw, gb, gx, ga = clnn_backward(layer, seg, up)
    pairs = [(layer.weights, gw), (layer.bias, gb), (seg, gx)]
    if ga is not None:
        pairs.append((layer.alpha, ga))
    worst = 0.0
    for arr, analytic in pairs:
        flat, aflat = arr.reshape(-1), analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = objective()
            flat[i] = orig - h
            minus = objective()
            flat[i] = orig
            num = (plus - minus) / (2 * h)
            err = abs(num - aflat[i]) / max(abs(num), abs(aflat[i]), 1e-6)
            worst = max(worst, err)
    return worst


@pytest.mark.parametrize("masked", [False, True])
def test_backward_matches_finite_differences(masked):
    mask = build_mask(MaskSpec(4, 1, 8, 5)) if masked else None
    layer = random_layer(11, l=8, e=5, n=1, mask=mask)
    seg = np.random.default_rng(12).normal(size=(8, 5))
    up = np.random.default_rng(13).normal(size=(5, 3))
    assert _fd_check(layer, seg, up) < 1e-5


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 8), st.integers(1, 2))
def test_backward_matches_finite_differences_random_sizes(seed, l, e, n):
    layer = random_layer(seed, l=l, e=e, n=n, transfer="sigmoid")
    rng = np.random.default_rng(seed + 1)
    seg = rng.normal(size=(l, 2 * n + 3))
    up = rng.normal(size=(e, 3))
    assert _fd_check(layer, seg, up) < 1e-5


def test_prelu():
    assert np.array_equal(prelu([2.0, -2.0], [0.25, 0.25]), [2.0, -0.5])
    x = np.array([-3.0, -0.5, 0.0, 1.5])
    assert np.array_equal(prelu(x, np.zeros(4)), np.maximum(x, 0))
    assert np.array_equal(prelu(x, np.ones(4)), x)
    with pytest.raises(ValueError):
        prelu([1.0, 2.0], [0.25])


def test_softmax():
    np.testing.assert_allclose(softmax(np.full(4, 3.3)), np.full(4, 0.25), rtol=0, atol=1e-15)
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(softmax(x), softmax(x + 17), rtol=0, atol=1e-15)
    np.testing.assert_allclose(softmax([0.0, np.log(3.0)]), [0.25, 0.75], rtol=0, atol=1e-15)
    big = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(big))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_is_simplex_point(values):
    p = softmax(np.array(values))
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12


def test_global_mean_pool():
    assert np.array_equal(global_mean_pool([[1.0], [2.0]]), [1.0, 2.0])
    assert np.array_equal(global_mean_pool([[1, 3], [2, 4]]), [2.0, 3.0])
    with pytest.raises(ValueError):
        global_mean_pool(np.zeros((2, 0)))


@given(st.permutations(range(6)))
def test_global_mean_pool_permutation_invariant(perm):
    m = np.arange(18.0).reshape(3, 6) ** 1.5
    np.testing.assert_allclose(global_mean_pool(m[:, list(perm)]), global_mean_pool(m),
                               rtol=1e-15, atol=0)


def test_dense_forward():
    x = np.array([1.0, 2.0])
    ident = DenseLayer(2, 2, transfer="linear", weights=np.eye(2))
    assert np.array_equal(dense_forward(ident, x), x)
    zero = DenseLayer(2, 3, transfer="prelu", bias=[1.0, -2.0, 0.0])
    assert np.array_equal(dense_forward(zero, x), [1.0, -0.5, 0.0])
    layer = DenseLayer(2, 2, transfer="linear", weights=[[1, 0], [0, 1]], bias=[1, 1])
    assert np.array_equal(dense_forward(layer, [1.0, 2.0]), [2.0, 3.0])
    with pytest.raises(ValueError):
        dense_forward(layer, [1.0, 2.0, 3.0])


def test_dropout_mask():
    assert np.array_equal(dropout_mask(SeededRng(0), 0.0, 5), np.ones(5))
    draws = dropout_mask(SeededRng(1), 0.5, 100_000)
    assert set(np.unique(draws)) == {0.0, 2.0}
    assert abs(draws.mean() - 1.0) < 0.01
    assert np.array_equal(dropout_mask(SeededRng(9), 0.3, 50), dropout_mask(SeededRng(9), 0.3, 50))
    with pytest.raises(ValueError):
        dropout_mask(SeededRng(0), 1.0, 3)


def test_initialised_weights_respect_mask_and_scale():
    mask = build_mask(MaskSpec(5, 3, 10, 6))
    layer = ClnnLayer.initialized(2, 10, 6, SeededRng(0), mask=mask)
    assert np.all(layer.weights[:, mask.entries == 0] == 0.0)
    assert np.abs(layer.weights).max() <= np.sqrt(6.0 / 16)
    assert np.array_equal(layer.alpha, np.full(6, 0.25))
