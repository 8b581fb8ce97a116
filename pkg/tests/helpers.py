"""Synthetic data generators and oracles shared across the test suite."""

from __future__ import annotations

import numpy as np

from fogedge import nn, windows


def make_mixture_set(n0, n1, seed, amplitude=1.0, noise=1.0, period=20.0, tag="S01"):
    """Class 0: gaussian noise. Class 1: a sine carrier plus the same noise.

    Amplitude 1.0 leaves genuinely borderline windows, so the quantization
    agreement gate is exercised near the decision boundary instead of far
    from it (trained accuracy lands near 98%, not 100%).
    """
    r = np.random.Generator(np.random.PCG64(seed))
    t = np.arange(windows.WINDOW_LEN)
    vals, labels = [], []
    for _ in range(n0):
        vals.append(r.normal(0.0, noise, size=(windows.WINDOW_LEN, 3)))
        labels.append(0)
    for _ in range(n1):
        phase = r.uniform(0.0, 2.0 * np.pi)
        carrier = amplitude * np.sin(2.0 * np.pi * t / period + phase)
        vals.append(carrier[:, None] + r.normal(0.0, noise, size=(windows.WINDOW_LEN, 3)))
        labels.append(1)
    origins = [(tag, "R01", 0, i * windows.HOP) for i in range(n0 + n1)]
    return windows.WindowSet(np.array(vals), np.array(labels, dtype=np.int64), origins)


def make_imbalanced_set(n0, n1, seed, offset=0.25):
    """Overlapping classes: a small constant offset on gaussian noise.

    Subtle enough that an unweighted model mostly predicts the majority."""
    r = np.random.Generator(np.random.PCG64(seed))
    vals = [r.normal(0.0, 1.0, size=(windows.WINDOW_LEN, 3)) for _ in range(n0)]
    vals += [offset + r.normal(0.0, 1.0, size=(windows.WINDOW_LEN, 3)) for _ in range(n1)]
    labels = np.array([0] * n0 + [1] * n1, dtype=np.int64)
    origins = [("S01", "R01", 0, i) for i in range(n0 + n1)]
    return windows.WindowSet(np.array(vals), labels, origins)


def make_overfit_set(seed=0, n_per_class=16):
    """Trivially separable: near-zero noise vs a unit-amplitude sine."""
    r = np.random.Generator(np.random.PCG64(seed))
    t = np.arange(windows.WINDOW_LEN)
    vals, labels = [], []
    for _ in range(n_per_class):
        vals.append(r.normal(0.0, 0.01, size=(windows.WINDOW_LEN, 3)))
        labels.append(0)
    for _ in range(n_per_class):
        phase = r.uniform(0.0, 2.0 * np.pi)
        vals.append(np.sin(2.0 * np.pi * t / 20.0 + phase)[:, None] * np.ones(3))
        labels.append(1)
    origins = [("S01", "R01", 0, i) for i in range(2 * n_per_class)]
    return windows.WindowSet(np.array(vals), np.array(labels, dtype=np.int64), origins)


TINY_IMBALANCE_ARCH = (
    {"kind": "conv1d", "filters": 4, "kernel": 5},
    {"kind": "maxpool", "pool": 4},
    {"kind": "dense", "units": 2},
)


# ---------------------------------------------------------------------------
# gradient-check oracle: central finite differences over every parameter
# ---------------------------------------------------------------------------

GRADCHECK_TEMPLATES = (
    (
        {"kind": "conv1d", "filters": 2, "kernel": 3},
        {"kind": "maxpool", "pool": 2},
        {"kind": "dense", "units": 2},
    ),
    (
        {"kind": "conv1d", "filters": 3, "kernel": 3},
        {"kind": "conv1d", "filters": 2, "kernel": 2},
        {"kind": "dense", "units": 2},
    ),
    (
        {"kind": "conv1d", "filters": 2, "kernel": 3},
        {"kind": "maxpool", "pool": 2},
        {"kind": "dropout", "rate": 0.25},
        {"kind": "dense", "units": 2},
    ),
    (
        {"kind": "conv1d", "filters": 2, "kernel": 5},
        {"kind": "maxpool", "pool": 3},
        {"kind": "dense", "units": 2},
    ),
)


def training_loss(model, x, y, w, seed):
    probs, _ = model.forward(x, training=True, rng=seed)
    return nn.weighted_cross_entropy(probs, y, w)


def numerical_grads(model, x, y, w, seed, step=1e-5):
    grads = []
    for p in model.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            lp = training_loss(model, x, y, w, seed)
            p[idx] = orig - step
            lm = training_loss(model, x, y, w, seed)
            p[idx] = orig
            g[idx] = (lp - lm) / (2.0 * step)
        grads.append(g)
    return grads


def kink_margin(model, x, seed):
    """Distance of every ReLU pre-activation from 0 and every pooling
    window's top value from its runner-up.

    Finite differences are only valid when the 1e-5 parameter step cannot
    flip a kink, so models are drawn until this margin is comfortable."""
    gen = np.random.Generator(np.random.PCG64(seed))
    margin = np.inf
    h = x
    for layer in model.layers:
        if isinstance(layer, nn.MaxPool1D) and layer.pool > 1:
            b, length, c = h.shape
            n = length // layer.pool
            trimmed = h[:, : n * layer.pool].reshape(b, n, layer.pool, c)
            top2 = np.sort(trimmed, axis=2)[:, :, -2:, :]
            margin = min(margin, float((top2[:, :, 1, :] - top2[:, :, 0, :]).min()))
        out, cache = layer.forward(h, training=True, rng=gen)
        if isinstance(layer, nn.Conv1D) and layer.activation == "relu":
            margin = min(margin, float(np.abs(cache[1]).min()))
        if isinstance(layer, nn.Dense) and layer.activation == "relu":
            margin = min(margin, float(np.abs(cache[2]).min()))
        h = out
    return margin


def gradcheck_models(n_models, input_shape=(10, 2), batch=2, margin=1e-3):
    """Yield (model, x, y, w, seed) cases with safe kink margins."""
    produced = 0
    seed = 0
    while produced < n_models:
        arch = GRADCHECK_TEMPLATES[produced % len(GRADCHECK_TEMPLATES)]
        r = np.random.Generator(np.random.PCG64(9000 + seed))
        x = r.normal(0.0, 1.0, size=(batch, *input_shape))
        y = r.integers(0, 2, size=batch)
        w = np.array([1.3, 0.7])
        model = nn.build_model(arch, input_shape=input_shape, seed=seed)
        if kink_margin(model, x, seed) >= margin:
            yield model, x, y, w, seed
            produced += 1
        seed += 1


def max_relative_grad_error(model, x, y, w, seed):
    probs, cache = model.forward(x, training=True, rng=seed)
    analytic = model.backward(cache, y, w)
    numeric = numerical_grads(model, x, y, w, seed)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum.reduce([np.abs(a), np.abs(n), np.full_like(a, 1e-5)])
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
