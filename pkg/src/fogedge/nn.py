"""A small 1-D CNN framework: exact backprop, Adam, weighted cross-entropy.

Everything here is plain numpy in float64. The network is a fixed sequence
of layers (valid-padding stride-1 convolutions, non-overlapping max
pooling, inverted dropout, dense) with a 2-way softmax head. Backward
passes are hand-derived and checked against finite differences in the
test suite, so the training path has no framework dependency.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .binio import Reader, Writer
from .windows import EmptyClass, NormStats, WindowSet

KIND_CONV = 0
KIND_POOL = 1
KIND_DENSE = 2
KIND_DROPOUT = 3

FLOAT_MAGIC = b"FOGF"
FLOAT_VERSION = 1

PROB_CLAMP = 1e-12


class ShapeMismatch(ValueError):
    pass


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(0 if rng is None else rng))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Conv1D:
    """Valid-padding stride-1 convolution over (batch, time, channels)."""

    kind = KIND_CONV

    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: str | None = "relu"):
        self.weights = np.asarray(weights, dtype=np.float64)  # (K, C_in, F)
        self.bias = np.asarray(bias, dtype=np.float64)        # (F,)
        if self.weights.ndim != 3 or self.bias.shape != (self.weights.shape[2],):
            raise ShapeMismatch("conv weights must be (K, C_in, F) with bias (F,)")
        if activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.activation = activation

    @property
    def kernel(self) -> int:
        return self.weights.shape[0]

    def out_shape(self, in_shape):
        length, channels = in_shape
        k, c_in, f = self.weights.shape
        if channels != c_in:
            raise ShapeMismatch(f"conv expects {c_in} channels, got {channels}")
        if length < k:
            raise ShapeMismatch(f"input length {length} shorter than kernel {k}")
        return (length - k + 1, f)

    def forward(self, x, training=False, rng=None):
        k = self.kernel
        win = np.lib.stride_tricks.sliding_window_view(x, k, axis=1)  # (B, L_out, C, K)
        pre = np.tensordot(win, self.weights, axes=((3, 2), (0, 1))) + self.bias
        out = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        return out, (x, pre)

    def backward(self, dout, cache):
        x, pre = cache
        k = self.kernel
        dpre = dout * (pre > 0.0) if self.activation == "relu" else dout
        win = np.lib.stride_tricks.sliding_window_view(x, k, axis=1)
        # dW[k,c,f] = sum_{b,t} x[b,t+k,c] * dpre[b,t,f]
        dw = np.tensordot(win, dpre, axes=((0, 1), (0, 1))).transpose(1, 0, 2)
        db = dpre.sum(axis=(0, 1))
        # dx via full correlation with the kernel flipped along its taps
        pad = ((0, 0), (k - 1, k - 1), (0, 0))
        dpre_pad = np.pad(dpre, pad)
        win_d = np.lib.stride_tricks.sliding_window_view(dpre_pad, k, axis=1)  # (B, L, F, K)
        dx = np.tensordot(win_d, self.weights[::-1], axes=((3, 2), (0, 2)))
        return dx, [dw, db]

    @property
    def params(self):
        return [self.weights, self.bias]


class MaxPool1D:
    """Non-overlapping max pooling; a trailing partial window is dropped."""

    kind = KIND_POOL

    def __init__(self, pool: int):
        if pool < 1:
            raise ValueError("pool width must be >= 1")
        self.pool = int(pool)

    def out_shape(self, in_shape):
        length, channels = in_shape
        if length < self.pool:
            raise ShapeMismatch(f"input length {length} shorter than pool {self.pool}")
        return (length // self.pool, channels)

    def forward(self, x, training=False, rng=None):
        b, length, c = x.shape
        n = length // self.pool
        trimmed = x[:, : n * self.pool].reshape(b, n, self.pool, c)
        # argmax keeps the first maximum, which makes backward deterministic
        idx = trimmed.argmax(axis=2)
        out = np.take_along_axis(trimmed, idx[:, :, None, :], axis=2)[:, :, 0, :]
        return out, (x.shape, idx)

    def backward(self, dout, cache):
        x_shape, idx = cache
        b, length, c = x_shape
        n = length // self.pool
        dtr = np.zeros((b, n, self.pool, c), dtype=dout.dtype)
        np.put_along_axis(dtr, idx[:, :, None, :], dout[:, :, None, :], axis=2)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        dx[:, : n * self.pool] = dtr.reshape(b, n * self.pool, c)
        return dx, []

    @property
    def params(self):
        return []


class Dropout:
    """Inverted dropout: active only in training, identity at inference."""

    kind = KIND_DROPOUT

    def __init__(self, rate: float):
        if not (0.0 <= rate < 1.0):
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = float(rate)

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            return x, None
        keep = _as_rng(rng).random(x.shape) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        return x * keep * scale, keep

    def backward(self, dout, cache):
        if cache is None:
            return dout, []
        return dout * cache * (1.0 / (1.0 - self.rate)), []

    @property
    def params(self):
        return []


class Dense:
    """Fully connected layer; flattens its input row-major (time-major)."""

    kind = KIND_DENSE

    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: str | None = None):
        self.weights = np.asarray(weights, dtype=np.float64)  # (D_in, D_out)
        self.bias = np.asarray(bias, dtype=np.float64)        # (D_out,)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatch("dense weights must be (D_in, D_out) with bias (D_out,)")
        if activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.activation = activation

    def out_shape(self, in_shape):
        d_in = int(np.prod(in_shape))
        if d_in != self.weights.shape[0]:
            raise ShapeMismatch(
                f"dense expects {self.weights.shape[0]} inputs, got {d_in}"
            )
        return (self.weights.shape[1],)

    def forward(self, x, training=False, rng=None):
        flat = x.reshape(x.shape[0], -1)
        pre = flat @ self.weights + self.bias
        out = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        return out, (x.shape, flat, pre)

    def backward(self, dout, cache):
        x_shape, flat, pre = cache
        dpre = dout * (pre > 0.0) if self.activation == "relu" else dout
        dw = flat.T @ dpre
        db = dpre.sum(axis=0)
        dx = (dpre @ self.weights.T).reshape(x_shape)
        return dx, [dw, db]

    @property
    def params(self):
        return [self.weights, self.bias]


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

DEFAULT_ARCHITECTURE = (
    {"kind": "conv1d", "filters": 16, "kernel": 5},
    {"kind": "maxpool", "pool": 2},
    {"kind": "conv1d", "filters": 32, "kernel": 5},
    {"kind": "maxpool", "pool": 2},
    {"kind": "conv1d", "filters": 32, "kernel": 3},
    {"kind": "maxpool", "pool": 2},
    {"kind": "dropout", "rate": 0.3},
    {"kind": "dense", "units": 2},
)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Model:
    """A layer sequence ending in a 2-way softmax head."""

    def __init__(self, layers, input_shape=(129, 3), frozen: bool = False):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.frozen = frozen
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        if shape != (2,):
            raise ShapeMismatch(f"model must end in 2 logits, ends in {shape}")

    def forward(self, x, training: bool = False, rng=None):
        """Run the network; returns (probabilities (B, 2), cache).

        ``rng`` seeds the dropout masks when training; inference ignores it
        (inverted dropout needs no rescaling at inference).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(
                f"batch shape {x.shape[1:]} does not match input {self.input_shape}"
            )
        gen = _as_rng(rng) if training else None
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, training=training, rng=gen)
            caches.append(cache)
        probs = softmax(x)
        return probs, (caches, x, probs)

    def backward(self, cache, labels, class_weights):
        """Gradients of the weighted cross-entropy w.r.t. every parameter.

        Returns a flat list aligned with ``parameters()``.
        """
        caches, logits, probs = cache
        labels = np.asarray(labels, dtype=np.int64)
        w = np.asarray(class_weights, dtype=np.float64)
        b = len(labels)
        one_hot = np.zeros_like(probs)
        one_hot[np.arange(b), labels] = 1.0
        # d/dlogits of mean_i w[y_i] * (-log p_i[y_i])
        dout = (probs - one_hot) * w[labels][:, None] / b
        grads_rev = []
        for layer, layer_cache in zip(reversed(self.layers), reversed(caches)):
            dout, grads = layer.backward(dout, layer_cache)
            grads_rev.extend(reversed(grads))
        return list(reversed(grads_rev))

    def predict(self, x) -> np.ndarray:
        probs, _ = self.forward(x, training=False)
        return probs.argmax(axis=1)

    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def snapshot(self):
        return [p.copy() for p in self.parameters()]

    def restore(self, snap) -> None:
        for p, s in zip(self.parameters(), snap):
            p[...] = s

    def clone(self) -> "Model":
        return copy.deepcopy(self)


def build_model(
    architecture=DEFAULT_ARCHITECTURE,
    input_shape=(129, 3),
    seed: int = 42,
) -> Model:
    """Instantiate a model from layer descriptors.

    Weights use seeded uniform He-style fan-in scaling (limit
    sqrt(6/fan_in)); biases start at zero.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    shape = tuple(input_shape)
    for desc in architecture:
        kind = desc["kind"]
        if kind == "conv1d":
            k, f = int(desc["kernel"]), int(desc["filters"])
            c_in = shape[1]
            limit = np.sqrt(6.0 / (k * c_in))
            weights = rng.uniform(-limit, limit, size=(k, c_in, f))
            layer = Conv1D(weights, np.zeros(f), activation=desc.get("activation", "relu"))
        elif kind == "maxpool":
            layer = MaxPool1D(int(desc["pool"]))
        elif kind == "dropout":
            layer = Dropout(float(desc["rate"]))
        elif kind == "dense":
            d_in = int(np.prod(shape))
            d_out = int(desc["units"])
            limit = np.sqrt(6.0 / d_in)
            weights = rng.uniform(-limit, limit, size=(d_in, d_out))
            layer = Dense(weights, np.zeros(d_out), activation=desc.get("activation"))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        shape = layer.out_shape(shape)
        layers.append(layer)
    return Model(layers, input_shape=input_shape)


# ---------------------------------------------------------------------------
# loss, optimizer, training
# ---------------------------------------------------------------------------


def weighted_cross_entropy(probs, labels, class_weights=(1.0, 1.0), reduce: str = "mean"):
    """Mean over the batch of w[y_i] * (-log p_i[y_i]).

    Probabilities are clamped to [1e-12, 1 - 1e-12] before the log, so a
    perfect prediction scores ~0 instead of -log(0).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)
    p = np.clip(probs[np.arange(len(labels)), labels], PROB_CLAMP, 1.0 - PROB_CLAMP)
    losses = -w[labels] * np.log(p)
    if reduce == "none":
        return losses
    return float(losses.mean())


def class_weights_from(train_set: WindowSet) -> np.ndarray:
    """Balanced weights w_c = N_total / (2 * N_c)."""
    counts = np.array([train_set.count_nofog, train_set.count_fog], dtype=np.float64)
    if np.any(counts == 0):
        raise EmptyClass(f"need both classes, got no-FoG={counts[0]:g}, FoG={counts[1]:g}")
    return counts.sum() / (2.0 * counts)


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.lr = float(learning_rate)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(epsilon)
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1**self.t)
            v_hat = self.v[i] / (1.0 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class EarlyStopper:
    """Stop when validation loss has not improved for `patience` epochs."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = int(patience)
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    class_weights: tuple[float, float] = (1.0, 1.0)
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")


def train(model: Model, train_set: WindowSet, val_set: WindowSet, config: TrainConfig):
    """Mini-batch training with early stopping on validation loss.

    Shuffling and dropout masks come from one generator seeded by
    ``config.seed``, so identical configs reproduce identical weights.
    Returns (model, history); the model carries the weights of the
    best-validation-loss epoch.
    """
    if model.frozen:
        raise ValueError("cannot train a frozen model")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    weights = np.asarray(config.class_weights, dtype=np.float64)
    optimizer = Adam(
        model.parameters(), config.learning_rate, config.beta1, config.beta2, config.epsilon
    )
    stopper = EarlyStopper(config.patience)
    history = {"train_loss": [], "train_acc": [], "val_loss": [], "val_acc": []}
    best_snap = None
    x_all, y_all = train_set.values, train_set.labels
    n = len(train_set)
    stopped_epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            probs, cache = model.forward(xb, training=True, rng=rng)
            loss_sum += weighted_cross_entropy(probs, yb, weights) * len(idx)
            correct += int((probs.argmax(axis=1) == yb).sum())
            grads = model.backward(cache, yb, weights)
            optimizer.step(grads)
        val_report = evaluate(model, val_set, class_weights=weights)
        history["train_loss"].append(loss_sum / n)
        history["train_acc"].append(correct / n)
        history["val_loss"].append(val_report.loss)
        history["val_acc"].append(val_report.accuracy_overall)
        if stopper.update(epoch, val_report.loss):
            best_snap = model.snapshot()
        stopped_epoch = epoch
        if stopper.should_stop:
            break
    if best_snap is not None:
        model.restore(best_snap)
    history["best_epoch"] = stopper.best_epoch
    history["stopped_epoch"] = stopped_epoch
    return model, history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    tn: int
    fp: int
    fn: int
    tp: int
    accuracy_overall: float
    accuracy_per_class: np.ndarray  # (2,): recall of class 0, class 1
    loss: float

    @property
    def confusion(self):
        return [[self.tn, self.fp], [self.fn, self.tp]]


def report_from_predictions(predictions, labels, loss: float = 0.0) -> EvalReport:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    tn = int(((predictions == 0) & (labels == 0)).sum())
    fp = int(((predictions == 1) & (labels == 0)).sum())
    fn = int(((predictions == 0) & (labels == 1)).sum())
    tp = int(((predictions == 1) & (labels == 1)).sum())
    total = len(labels)
    per_class = np.array(
        [
            tn / (tn + fp) if (tn + fp) else np.nan,
            tp / (tp + fn) if (tp + fn) else np.nan,
        ]
    )
    overall = (tn + tp) / total if total else np.nan
    return EvalReport(tn, fp, fn, tp, overall, per_class, loss)


def evaluate(
    model: Model,
    ws: WindowSet,
    class_weights=(1.0, 1.0),
    batch_size: int = 512,
) -> EvalReport:
    """Confusion matrix, overall and per-class accuracy, mean loss."""
    predictions = np.zeros(len(ws), dtype=np.int64)
    loss_sum = 0.0
    for lo in range(0, len(ws), batch_size):
        xb = ws.values[lo : lo + batch_size]
        yb = ws.labels[lo : lo + batch_size]
        probs, _ = model.forward(xb, training=False)
        predictions[lo : lo + len(xb)] = probs.argmax(axis=1)
        loss_sum += weighted_cross_entropy(probs, yb, class_weights) * len(xb)
    loss = loss_sum / len(ws) if len(ws) else 0.0
    return report_from_predictions(predictions, ws.labels, loss)


# ---------------------------------------------------------------------------
# float model file: magic "FOGF", u32 version, input shape (u32 x2),
# z-score stats (6 x f32), u32 n_layers, then per layer a kind byte and its
# descriptor + float32 blobs. Weights are stored float32; training keeps
# float64, so save/load rounds to float32 once.
# ---------------------------------------------------------------------------


def save_float_model(model: Model, stats: NormStats, path) -> None:
    w = Writer()
    w.magic(FLOAT_MAGIC)
    w.u32(FLOAT_VERSION)
    w.u32(model.input_shape[0])
    w.u32(model.input_shape[1])
    w.f32s(stats.mean)
    w.f32s(stats.std)
    w.u32(len(model.layers))
    for layer in model.layers:
        w.u8(layer.kind)
        if isinstance(layer, Conv1D):
            k, c_in, f = layer.weights.shape
            w.u32(k), w.u32(c_in), w.u32(f)
            w.u8(1 if layer.activation == "relu" else 0)
            w.f32s(layer.weights.reshape(-1))
            w.f32s(layer.bias)
        elif isinstance(layer, MaxPool1D):
            w.u32(layer.pool)
        elif isinstance(layer, Dropout):
            w.f32(layer.rate)
        elif isinstance(layer, Dense):
            d_in, d_out = layer.weights.shape
            w.u32(d_in), w.u32(d_out)
            w.u8(1 if layer.activation == "relu" else 0)
            w.f32s(layer.weights.reshape(-1))
            w.f32s(layer.bias)
        else:
            raise ValueError(f"cannot serialize layer {layer!r}")
    from pathlib import Path

    Path(path).write_bytes(w.getvalue())


def load_float_model(path) -> tuple[Model, NormStats]:
    from pathlib import Path

    r = Reader(Path(path).read_bytes(), where=str(path))
    r.expect_magic(FLOAT_MAGIC)
    r.expect_version(FLOAT_VERSION)
    input_shape = (r.u32(), r.u32())
    stats = NormStats(mean=r.f32s(3).astype(np.float64), std=r.f32s(3).astype(np.float64))
    n_layers = r.u32()
    layers = []
    for _ in range(n_layers):
        kind = r.u8()
        if kind == KIND_CONV:
            k, c_in, f = r.u32(), r.u32(), r.u32()
            act = "relu" if r.u8() else None
            weights = r.f32s(k * c_in * f).astype(np.float64).reshape(k, c_in, f)
            bias = r.f32s(f).astype(np.float64)
            layers.append(Conv1D(weights, bias, activation=act))
        elif kind == KIND_POOL:
            layers.append(MaxPool1D(r.u32()))
        elif kind == KIND_DROPOUT:
            layers.append(Dropout(r.f32()))
        elif kind == KIND_DENSE:
            d_in, d_out = r.u32(), r.u32()
            act = "relu" if r.u8() else None
            weights = r.f32s(d_in * d_out).astype(np.float64).reshape(d_in, d_out)
            bias = r.f32s(d_out).astype(np.float64)
            layers.append(Dense(weights, bias, activation=act))
        else:
            raise ValueError(f"{path}: unknown layer kind {kind}")
    return Model(layers, input_shape=input_shape), stats
