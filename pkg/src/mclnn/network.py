"""Stacked conditional layers, mean pooling, dense layers and softmax output."""

from dataclasses import asdict, dataclass
import json
import struct

import numpy as np

from .layers import ClnnLayer, DenseLayer, dropout_mask, softmax
from .mask import MaskSpec, build_mask
from .numerics import DTYPE, SeededRng

MAGIC = b"MCLN"
FORMAT_VERSION = 1


class SegmentWidthError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One conditional layer: ``type`` is ``'clnn'`` or ``'mclnn'``."""

    nodes: int
    order: int
    type: str = "mclnn"
    bandwidth: int = None
    overlap: int = None

    def __post_init__(self):
        if self.type not in ("clnn", "mclnn"):
            raise ValueError(f"layer type must be 'clnn' or 'mclnn', got {self.type!r}")
        if self.nodes < 1:
            raise ValueError(f"nodes must be positive, got {self.nodes}")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if self.type == "mclnn" and (self.bandwidth is None or self.overlap is None):
            raise ValueError("an mclnn layer needs both bandwidth and overlap")

    @property
    def window(self):
        return 2 * self.order + 1


@dataclass(frozen=True)
class ModelConfig:
    feature_len: int
    classes: int
    layers: tuple
    dense: tuple = (100, 100)
    extra_frames: int = 1
    transfer: str = "prelu"

    def __post_init__(self):
        layers = tuple(s if isinstance(s, LayerSpec) else LayerSpec(**s) for s in self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "dense", tuple(int(w) for w in self.dense))
        if not layers:
            raise ValueError("at least one conditional layer is required")
        if self.feature_len < 1:
            raise ValueError("feature_len must be positive")
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.extra_frames < 1:
            raise ValueError(f"extra_frames must be >= 1, got {self.extra_frames}")
        if any(w < 1 for w in self.dense):
            raise ValueError("dense widths must be positive")

    @property
    def segment_width(self):
        """Frames per input segment: each layer eats 2n, ``extra_frames`` remain."""
        return sum(2 * s.order for s in self.layers) + self.extra_frames

    def describe_width(self):
        terms = " + ".join(f"2*{s.order}" for s in self.layers)
        return f"q = {terms} + {self.extra_frames} = {self.segment_width}"

    def check_segment_width(self, found):
        if found != self.segment_width:
            raise SegmentWidthError(
                f"segment width q={found}, model requires {self.segment_width} "
                f"({self.describe_width()})"
            )

    def to_dict(self):
        d = asdict(self)
        d["layers"] = [asdict(s) for s in self.layers]
        d["dense"] = list(self.dense)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Network:
    """Conditional layers -> mean pool over remaining frames -> dense -> softmax.

    Inputs are batches of segments shaped ``(batch, features, frames)``.
    """

    def __init__(self, config, clnn_layers, dense_layers, output_layer):
        self.config = config
        self.clnn_layers = list(clnn_layers)
        self.dense_layers = list(dense_layers)
        self.output_layer = output_layer

    @classmethod
    def from_config(cls, config, seed=0, initialize=True):
        rng = SeededRng(seed, stream=0)
        clnn_layers = []
        in_len = config.feature_len
        for spec in config.layers:
            mask = None
            if spec.type == "mclnn":
                mask = build_mask(MaskSpec(spec.bandwidth, spec.overlap, in_len, spec.nodes))
            if initialize:
                layer = ClnnLayer.initialized(spec.order, in_len, spec.nodes, rng,
                                              mask=mask, transfer=config.transfer)
            else:
                layer = ClnnLayer(spec.order, in_len, spec.nodes, mask=mask,
                                  transfer=config.transfer)
            clnn_layers.append(layer)
            in_len = spec.nodes
        dense_layers = []
        for width in config.dense:
            if initialize:
                dense_layers.append(DenseLayer.initialized(in_len, width, rng, config.transfer))
            else:
                dense_layers.append(DenseLayer(in_len, width, config.transfer))
            in_len = width
        if initialize:
            output = DenseLayer.initialized(in_len, config.classes, rng, transfer="linear")
        else:
            output = DenseLayer(in_len, config.classes, transfer="linear")
        return cls(config, clnn_layers, dense_layers, output)

    @property
    def hidden_layers(self):
        return self.clnn_layers + self.dense_layers

    def named_layers(self):
        for i, layer in enumerate(self.clnn_layers):
            yield f"clnn{i}", layer
        for i, layer in enumerate(self.dense_layers):
            yield f"dense{i}", layer
        yield "output", self.output_layer

    def params(self):
        """Ordered mapping ``'<layer>.<param>' -> array`` (arrays are live views)."""
        out = {}
        for name, layer in self.named_layers():
            for pname, arr in layer.params().items():
                out[f"{name}.{pname}"] = arr
        return out

    def n_params(self):
        return sum(a.size for a in self.params().values())

    def _check_input(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.config.feature_len:
            raise ValueError(
                f"expected segments of shape (batch, {self.config.feature_len}, q), got {x.shape}"
            )
        self.config.check_segment_width(x.shape[2])
        return x

    def forward(self, x, dropout=None, rng=None):
        """Return ``(logits, probabilities, cache)``.

        ``dropout`` is a sequence of rates, one per hidden layer (conditional
        layers first, then dense); ``None`` means inference mode.
        """
        x = self._check_input(x)
        rates = self._dropout_rates(dropout)
        caches = []
        h = np.ascontiguousarray(x.transpose(0, 2, 1))
        for layer, rate in zip(self.clnn_layers, rates):
            h, cache = layer.forward(h)
            h, drop = self._dropout(h, rate, rng)
            caches.append((cache, drop))
        pooled_frames = h.shape[1]
        h = h.mean(axis=1)
        for layer, rate in zip(self.dense_layers, rates[len(self.clnn_layers):]):
            h, cache = layer.forward(h)
            h, drop = self._dropout(h, rate, rng)
            caches.append((cache, drop))
        logits, out_cache = self.output_layer.forward(h)
        return logits, softmax(logits), (caches, pooled_frames, out_cache)

    def _dropout_rates(self, dropout):
        n_hidden = len(self.hidden_layers)
        if dropout is None:
            return [0.0] * n_hidden
        rates = [float(r) for r in dropout]
        if len(rates) != n_hidden:
            raise ValueError(f"need {n_hidden} dropout rates, got {len(rates)}")
        return rates

    @staticmethod
    def _dropout(h, rate, rng):
        if rate == 0.0:
            return h, None
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        drop = dropout_mask(rng, rate, h.shape)
        return h * drop, drop

    def backward(self, cache, dlogits):
        """Backpropagate ``dlogits`` (batch, classes); return (grads, grad wrt input)."""
        caches, pooled_frames, out_cache = cache
        grads = {}
        g, dh = self.output_layer.backward(dlogits, out_cache)
        grads.update({f"output.{k}": v for k, v in g.items()})
        n_clnn = len(self.clnn_layers)
        for i in range(len(self.dense_layers) - 1, -1, -1):
            layer_cache, drop = caches[n_clnn + i]
            if drop is not None:
                dh = dh * drop
            g, dh = self.dense_layers[i].backward(dh, layer_cache)
            grads.update({f"dense{i}.{k}": v for k, v in g.items()})
        dh = np.repeat(dh[:, None, :] / pooled_frames, pooled_frames, axis=1)
        for i in range(n_clnn - 1, -1, -1):
            layer_cache, drop = caches[i]
            if drop is not None:
                dh = dh * drop
            g, dh = self.clnn_layers[i].backward(dh, layer_cache)
            grads.update({f"clnn{i}.{k}": v for k, v in g.items()})
        ordered = {name: grads[name] for name in self.params()}
        return ordered, dh.transpose(0, 2, 1)

    def predict_proba(self, x, batch_size=256):
        x = self._check_input(x)
        out = [self.forward(x[i:i + batch_size])[1] for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def copy_params(self):
        return {k: v.copy() for k, v in self.params().items()}

    def set_params(self, values):
        for name, arr in self.params().items():
            arr[...] = values[name]

    def header(self):
        return {
            "model": self.config.to_dict(),
            "layers": [layer.header() for _, layer in self.named_layers()],
        }


def save_network(network, path):
    """Write ``MCLN`` | u16 version | u32 header length | JSON header | float64 params.

    Masks are not stored; they are rebuilt from the header on load.
    """
    header = json.dumps(network.header(), sort_keys=True).encode("utf-8")
    params = [np.ascontiguousarray(a, dtype="<f8") for a in network.params().values()]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
        fh.write(header)
        for a in params:
            fh.write(a.tobytes(order="C"))


def load_network(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic {blob[:4]!r})")
    if len(blob) < 10:
        raise ValueError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<HI", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    header = json.loads(blob[10:10 + hlen].decode("utf-8"))
    config = ModelConfig.from_dict(header["model"])
    network = Network.from_config(config, initialize=False)
    if header["layers"] != [layer.header() for _, layer in network.named_layers()]:
        raise ValueError(f"{path}: layer table inconsistent with model config")
    expected = network.n_params()
    if len(blob) - 10 - hlen != 8 * expected:
        found = (len(blob) - 10 - hlen) / 8
        raise ValueError(f"{path}: expected {expected} parameters, found {found:g}")
    payload = np.frombuffer(blob, dtype="<f8", offset=10 + hlen)
    if payload.size != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {payload.size}")
    pos = 0
    for arr in network.params().values():
        arr[...] = payload[pos:pos + arr.size].reshape(arr.shape)
        pos += arr.size
    return network
