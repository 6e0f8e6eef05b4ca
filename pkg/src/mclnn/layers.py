"""Conditional layers and the auxiliary layers stacked around them.

Batched arrays inside this module are laid out as ``(batch, frames, features)``.
The single-segment helpers ``clnn_forward``/``clnn_backward`` take and return
``features x frames`` matrices, matching the feature-file convention.
"""

import numpy as np

from .mask import BinaryMask
from .numerics import DTYPE, mean_over_columns

TRANSFERS = ("prelu", "sigmoid", "linear")
PRELU_INIT = 0.25


def prelu(x, alpha):
    x = np.asarray(x, dtype=DTYPE)
    alpha = np.asarray(alpha, dtype=DTYPE)
    if alpha.shape[-1:] != x.shape[-1:]:
        raise ValueError(f"alpha length {alpha.shape} does not match input {x.shape}")
    return np.where(x > 0, x, alpha * x)


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x):
    """Softmax over the last axis, shifted by the max for stability."""
    x = np.asarray(x, dtype=DTYPE)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def global_mean_pool(frames):
    """Average a ``features x frames`` matrix over time."""
    return mean_over_columns(frames)


def dropout_mask(rng, rate, size):
    """Inverted-dropout scaling: 0 with probability ``rate``, else ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(size, dtype=DTYPE)
    keep = rng.random(size) >= rate
    return keep.astype(DTYPE) / (1.0 - rate)


def _check_transfer(transfer):
    if transfer not in TRANSFERS:
        raise ValueError(f"unknown transfer {transfer!r}; expected one of {TRANSFERS}")


def _activate(pre, transfer, alpha):
    if transfer == "prelu":
        return np.where(pre > 0, pre, alpha * pre)
    if transfer == "sigmoid":
        return sigmoid(pre)
    return pre


def _activate_backward(pre, out, dout, transfer, alpha):
    """Return (grad wrt pre-activation, grad wrt alpha or None)."""
    if transfer == "prelu":
        neg = pre <= 0
        dpre = np.where(neg, alpha * dout, dout)
        axes = tuple(range(pre.ndim - 1))
        dalpha = np.where(neg, pre * dout, 0.0).sum(axis=axes)
        return dpre, dalpha
    if transfer == "sigmoid":
        return dout * out * (1.0 - out), None
    return dout, None


def _fan_uniform(rng, fan_in, fan_out, size):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size)


class ClnnLayer:
    """Conditional layer over a window of ``2n+1`` frames.

    Each output frame ``t`` is ``f(b + sum_u x[t+u] @ W[u])`` for
    ``u = -n..n``. With a mask the layer is masked: every ``W[u]`` is
    multiplied element-wise by the same binary mask before use.

    Parameters
    ----------
    order : int
        Frames considered on each side of the centre frame (n >= 1).
    in_len, out_len : int
        Feature length ``l`` and number of hidden nodes ``e``.
    mask : BinaryMask or None
        ``l x e`` mask; ``None`` gives a plain conditional layer.
    transfer : {'prelu', 'sigmoid', 'linear'}
    weights : ndarray of shape (2n+1, l, e), optional
        ``weights[u + n]`` multiplies the frame at offset ``u``.
    bias : ndarray of shape (e,), optional
    alpha : ndarray of shape (e,), optional
        PReLU slopes, only used with ``transfer='prelu'``.
    """

    kind = "clnn"

    def __init__(self, order, in_len, out_len, mask=None, transfer="prelu",
                 weights=None, bias=None, alpha=None):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if in_len < 1 or out_len < 1:
            raise ValueError("in_len and out_len must be positive")
        _check_transfer(transfer)
        self.order = int(order)
        self.in_len = int(in_len)
        self.out_len = int(out_len)
        self.transfer = transfer
        if mask is not None:
            if not isinstance(mask, BinaryMask):
                raise TypeError("mask must be a BinaryMask")
            if mask.shape != (self.in_len, self.out_len):
                raise ValueError(
                    f"mask shape {mask.shape} does not match layer "
                    f"({self.in_len}, {self.out_len})"
                )
        self.mask = mask

        shape = (self.width, self.in_len, self.out_len)
        self.weights = (np.zeros(shape, dtype=DTYPE) if weights is None
                        else np.array(weights, dtype=DTYPE))
        if self.weights.shape != shape:
            raise ValueError(f"weights must have shape {shape}, got {self.weights.shape}")
        self.bias = (np.zeros(self.out_len, dtype=DTYPE) if bias is None
                     else np.array(bias, dtype=DTYPE).reshape(self.out_len))
        self.alpha = None
        if transfer == "prelu":
            self.alpha = (np.full(self.out_len, PRELU_INIT, dtype=DTYPE) if alpha is None
                          else np.array(alpha, dtype=DTYPE).reshape(self.out_len))

    @classmethod
    def initialized(cls, order, in_len, out_len, rng, mask=None, transfer="prelu"):
        layer = cls(order, in_len, out_len, mask=mask, transfer=transfer)
        layer.weights[...] = _fan_uniform(rng, in_len, out_len, layer.weights.shape)
        if mask is not None:
            # start with masked positions at exactly zero
            layer.weights *= mask.entries
        return layer

    @property
    def width(self):
        return 2 * self.order + 1

    @property
    def masked(self):
        return self.mask is not None

    def frames_out(self, frames_in):
        return frames_in - 2 * self.order

    def effective_weights(self):
        if self.mask is None:
            return self.weights
        return self.weights * self.mask.entries

    def params(self):
        out = {"weights": self.weights, "bias": self.bias}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out

    def forward(self, h):
        """``h``: (batch, frames, in_len) -> (batch, frames - 2n, out_len)."""
        if h.ndim != 3 or h.shape[2] != self.in_len:
            raise ValueError(f"expected (batch, frames, {self.in_len}) input, got {h.shape}")
        n_out = self.frames_out(h.shape[1])
        if n_out < 1:
            raise ValueError(
                f"input has {h.shape[1]} frames; order {self.order} needs at least {self.width}"
            )
        w = self.effective_weights()
        pre = np.broadcast_to(self.bias, (h.shape[0], n_out, self.out_len)).copy()
        for u in range(self.width):
            pre += h[:, u:u + n_out, :] @ w[u]
        out = _activate(pre, self.transfer, self.alpha)
        return out, (h, pre, out, w)

    def backward(self, dout, cache):
        """Return (param grads, grad wrt input)."""
        h, pre, out, w = cache
        if dout.shape != out.shape:
            raise ValueError(f"upstream gradient shape {dout.shape} != output {out.shape}")
        dpre, dalpha = _activate_backward(pre, out, dout, self.transfer, self.alpha)
        n_out = pre.shape[1]
        flat_dpre = dpre.reshape(-1, self.out_len)
        dw = np.empty_like(self.weights)
        dh = np.zeros_like(h)
        for u in range(self.width):
            window = h[:, u:u + n_out, :]
            dw[u] = window.reshape(-1, self.in_len).T @ flat_dpre
            dh[:, u:u + n_out, :] += dpre @ w[u].T
        if self.mask is not None:
            dw *= self.mask.entries
        grads = {"weights": dw, "bias": dpre.sum(axis=(0, 1))}
        if dalpha is not None:
            grads["alpha"] = dalpha
        return grads, dh

    def header(self):
        spec = self.mask.spec if self.mask is not None else None
        return {
            "type": "mclnn" if spec is not None else "clnn",
            "n": self.order,
            "l": self.in_len,
            "e": self.out_len,
            "mask": None if spec is None else {"bw": spec.bandwidth, "ov": spec.overlap},
            "transfer": self.transfer,
        }


class DenseLayer:
    """Fully connected layer ``f(x @ W + b)``."""

    kind = "dense"

    def __init__(self, in_len, out_len, transfer="prelu", weights=None, bias=None, alpha=None):
        _check_transfer(transfer)
        self.in_len = int(in_len)
        self.out_len = int(out_len)
        self.transfer = transfer
        shape = (self.in_len, self.out_len)
        self.weights = (np.zeros(shape, dtype=DTYPE) if weights is None
                        else np.array(weights, dtype=DTYPE))
        if self.weights.shape != shape:
            raise ValueError(f"weights must have shape {shape}, got {self.weights.shape}")
        self.bias = (np.zeros(self.out_len, dtype=DTYPE) if bias is None
                     else np.array(bias, dtype=DTYPE).reshape(self.out_len))
        self.alpha = None
        if transfer == "prelu":
            self.alpha = (np.full(self.out_len, PRELU_INIT, dtype=DTYPE) if alpha is None
                          else np.array(alpha, dtype=DTYPE).reshape(self.out_len))

    @classmethod
    def initialized(cls, in_len, out_len, rng, transfer="prelu"):
        layer = cls(in_len, out_len, transfer=transfer)
        layer.weights[...] = _fan_uniform(rng, in_len, out_len, layer.weights.shape)
        return layer

    def params(self):
        out = {"weights": self.weights, "bias": self.bias}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out

    def forward(self, x):
        if x.shape[-1] != self.in_len:
            raise ValueError(f"expected input length {self.in_len}, got {x.shape[-1]}")
        pre = x @ self.weights + self.bias
        out = _activate(pre, self.transfer, self.alpha)
        return out, (x, pre, out)

    def backward(self, dout, cache):
        x, pre, out = cache
        dpre, dalpha = _activate_backward(pre, out, dout, self.transfer, self.alpha)
        grads = {"weights": x.T @ dpre, "bias": dpre.sum(axis=0)}
        if dalpha is not None:
            grads["alpha"] = dalpha
        return grads, dpre @ self.weights.T

    def header(self):
        return {"type": "dense", "in": self.in_len, "out": self.out_len,
                "transfer": self.transfer}


def _as_segment(segment, layer):
    seg = np.asarray(segment, dtype=DTYPE)
    if seg.ndim != 2 or seg.shape[0] != layer.in_len:
        raise ValueError(f"segment must have {layer.in_len} rows, got shape {seg.shape}")
    if seg.shape[1] < layer.width:
        raise ValueError(
            f"segment has {seg.shape[1]} frames; order {layer.order} needs at least {layer.width}"
        )
    return seg


def clnn_forward(layer, segment):
    """Apply ``layer`` to one ``l x T`` segment, giving ``e x (T - 2n)``."""
    seg = _as_segment(segment, layer)
    out, _ = layer.forward(seg.T[None])
    return out[0].T


def clnn_backward(layer, segment, upstream_grad):
    """Gradients of ``sum(upstream_grad * clnn_forward(layer, segment))``.

    Returns ``(grad_weights, grad_bias, grad_input, grad_alpha)`` where
    ``grad_input`` is ``l x T`` and ``grad_alpha`` is ``None`` unless the
    layer uses PReLU.
    """
    seg = _as_segment(segment, layer)
    _, cache = layer.forward(seg.T[None])
    up = np.asarray(upstream_grad, dtype=DTYPE)
    expected = (layer.out_len, layer.frames_out(seg.shape[1]))
    if up.shape != expected:
        raise ValueError(f"upstream gradient must have shape {expected}, got {up.shape}")
    grads, dh = layer.backward(up.T[None], cache)
    return grads["weights"], grads["bias"], dh[0].T, grads.get("alpha")


def dense_forward(layer, x):
    out, _ = layer.forward(np.asarray(x, dtype=DTYPE))
    return out
