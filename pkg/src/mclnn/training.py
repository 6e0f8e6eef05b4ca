"""Cross-entropy objective, ADAM, the training loop and a gradient auditor."""

from dataclasses import asdict, dataclass, field
import io
import logging

import numpy as np

from .numerics import DTYPE, SeededRng

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
METRICS_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


def cross_entropy(pred, target_class):
    """Loss ``-ln p[target]`` and its gradient w.r.t. the pre-softmax logits."""
    pred = np.asarray(pred, dtype=DTYPE)
    if not 0 <= target_class < pred.shape[-1]:
        raise IndexError(f"target class {target_class} out of range for {pred.shape[-1]} classes")
    loss = -np.log(max(pred[target_class], PROB_FLOOR))
    grad = pred.copy()
    grad[target_class] -= 1.0
    return float(loss), grad


def batch_cross_entropy(probs, y):
    """Mean loss over a batch and the matching logit gradient."""
    y = np.asarray(y)
    n, c = probs.shape
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {y.shape}")
    if y.min() < 0 or y.max() >= c:
        raise IndexError(f"labels must lie in [0, {c})")
    rows = np.arange(n)
    loss = -np.log(np.maximum(probs[rows, y], PROB_FLOOR)).mean()
    grad = probs.copy()
    grad[rows, y] -= 1.0
    return float(loss), grad / n


def loss_and_grads(network, x, y, dropout=None, rng=None):
    _, probs, cache = network.forward(x, dropout=dropout, rng=rng)
    loss, dlogits = batch_cross_entropy(probs, y)
    grads, _ = network.backward(cache, dlogits)
    return loss, grads


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Update ``params`` in place with bias-corrected ADAM; returns ``(params, state)``."""
    if params.keys() != grads.keys():
        raise ValueError("params and grads must have the same keys")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    clnn_dropout: object = 0.0
    dense_dropout: object = 0.5
    patience: int = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 when given")

    def dropout_rates(self, network):
        def expand(value, count, what):
            if np.isscalar(value):
                return [float(value)] * count
            rates = [float(r) for r in value]
            if len(rates) != count:
                raise ValueError(f"{what} needs {count} rates, got {len(rates)}")
            return rates

        rates = (expand(self.clnn_dropout, len(network.clnn_layers), "clnn_dropout")
                 + expand(self.dense_dropout, len(network.dense_layers), "dense_dropout"))
        for r in rates:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rate must be in [0, 1), got {r}")
        return rates

    def to_dict(self):
        d = asdict(self)
        for key in ("clnn_dropout", "dense_dropout"):
            if not np.isscalar(d[key]):
                d[key] = [float(r) for r in d[key]]
        return d


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float = float("nan")
    val_acc: float = float("nan")

    def csv_row(self):
        return (f"{self.epoch},{self.train_loss!r},{self.train_acc!r},"
                f"{self.val_loss!r},{self.val_acc!r}")


def metrics_csv(history):
    buf = io.StringIO()
    buf.write(METRICS_HEADER + "\n")
    for m in history:
        buf.write(m.csv_row() + "\n")
    return buf.getvalue()


def evaluate(network, x, y, batch_size=256):
    """Mean cross-entropy and accuracy in inference mode."""
    probs = network.predict_proba(x, batch_size=batch_size)
    loss, _ = batch_cross_entropy(probs, y)
    acc = float(np.mean(probs.argmax(axis=1) == y))
    return loss, acc


def train(network, x, y, x_val=None, y_val=None, config=None, callback=None):
    """Fit ``network`` on segments ``x`` (N, l, q) with labels ``y``.

    Every epoch shuffles with the seeded stream, takes ADAM steps on
    mini-batches, then scores train and validation sets in inference mode.
    With a validation set the parameters of the best epoch (highest
    validation accuracy, ties to lower validation loss) are restored at the
    end; without one the final parameters are kept.

    Returns ``(network, history)``.
    """
    config = config or TrainConfig()
    x = np.asarray(x, dtype=DTYPE)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 3 or len(x) == 0:
        raise ValueError("training set is empty")
    network.config.check_segment_width(x.shape[2])
    if len(y) != len(x):
        raise ValueError(f"{len(x)} segments but {len(y)} labels")
    if y.min() < 0 or y.max() >= network.config.classes:
        raise ValueError(f"labels must lie in [0, {network.config.classes})")
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        x_val = np.asarray(x_val, dtype=DTYPE)
        y_val = np.asarray(y_val, dtype=np.int64)
        network.config.check_segment_width(x_val.shape[2])

    rates = config.dropout_rates(network)
    shuffle_rng = SeededRng(config.seed, stream=1)
    dropout_rng = SeededRng(config.seed, stream=2)
    state = AdamState(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    params = network.params()

    history = []
    best = None
    best_key = None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = loss_and_grads(network, x[idx], y[idx], dropout=rates, rng=dropout_rng)
            adam_step(params, grads, state)

        train_loss, train_acc = evaluate(network, x, y)
        metrics = EpochMetrics(epoch, train_loss, train_acc)
        if has_val:
            metrics.val_loss, metrics.val_acc = evaluate(network, x_val, y_val)
        history.append(metrics)
        logger.debug(metrics.csv_row())
        if callback is not None:
            callback(metrics)

        if not has_val:
            continue
        key = (metrics.val_acc, -metrics.val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best = network.copy_params()
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                logger.info("early stop at epoch %d", epoch)
                break

    if best is not None:
        network.set_params(best)
    return network, history


@dataclass
class GradientReport:
    max_rel_error: dict
    tolerance: float
    n_checked: int
    masked_nonzero: int = 0

    @property
    def failed(self):
        return [k for k, v in self.max_rel_error.items() if not v < self.tolerance]

    @property
    def ok(self):
        return not self.failed and self.masked_nonzero == 0

    @property
    def worst(self):
        return max(self.max_rel_error.values())


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries meaningful."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(network, x, y, step=1e-5, tolerance=1e-5, floor=1e-6, include_input=True):
    """Compare backprop gradients with central differences, dropout disabled.

    Returns a :class:`GradientReport` with the worst relative error per
    parameter block (and for the input when ``include_input``), plus a count
    of masked weight positions where either gradient is non-zero.
    """
    x = np.array(x, dtype=DTYPE)
    if x.ndim == 2:
        x = x[None]
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))

    def loss_at(inp):
        _, probs, _ = network.forward(inp)
        return batch_cross_entropy(probs, y)[0]

    _, probs, cache = network.forward(x)
    _, dlogits = batch_cross_entropy(probs, y)
    analytic, dx = network.backward(cache, dlogits)

    blocks = dict(network.params())
    if include_input:
        blocks["input"] = x
        analytic = dict(analytic, input=dx)

    report = {}
    numeric_all = {}
    checked = 0
    for name, arr in blocks.items():
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_at(x)
            flat[i] = orig - step
            minus = loss_at(x)
            flat[i] = orig
            nflat[i] = (plus - minus) / (2.0 * step)
        checked += flat.size
        numeric_all[name] = numeric
        report[name] = float(relative_error(analytic[name], numeric, floor).max())

    masked_nonzero = 0
    for i, layer in enumerate(network.clnn_layers):
        if layer.mask is None:
            continue
        off = layer.mask.entries == 0
        key = f"clnn{i}.weights"
        a = analytic[key][:, off]
        n = numeric_all[key][:, off]
        masked_nonzero += int(np.count_nonzero(a) + np.count_nonzero(n))
    return GradientReport(report, tolerance, checked, masked_nonzero)
