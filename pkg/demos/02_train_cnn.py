#!/usr/bin/env python3
"""Train the 1-D CNN on a synthetic two-class task and inspect the run.

Class 0 windows are pure noise; class 1 windows carry a sine component.
Shows standardization, class weighting, early stopping, and the final
confusion matrix, all with the from-scratch numpy network.
"""

import numpy as np

from fogedge import nn, windows

rng = np.random.Generator(np.random.PCG64(3))
WINDOW = windows.WINDOW_LEN


def make_set(n0, n1, seed, amplitude=1.0):
    r = np.random.Generator(np.random.PCG64(seed))
    t = np.arange(WINDOW)
    values, labels = [], []
    for _ in range(n0):
        values.append(r.normal(0.0, 1.0, size=(WINDOW, 3)))
        labels.append(0)
    for _ in range(n1):
        phase = r.uniform(0, 2 * np.pi)
        carrier = amplitude * np.sin(2 * np.pi * t / 20.0 + phase)
        values.append(carrier[:, None] + r.normal(0.0, 1.0, size=(WINDOW, 3)))
        labels.append(1)
    origins = [("S01", "R01", 0, i) for i in range(n0 + n1)]
    return windows.WindowSet(np.array(values), np.array(labels), origins)


# imbalanced on purpose, as gait data usually is
train_raw = make_set(160, 40, seed=10)
val_raw = make_set(40, 10, seed=11)
test_raw = make_set(80, 20, seed=12)

# statistics come from the training split only and are reused everywhere
stats = windows.fit_stats(train_raw)
train_std = windows.apply_stats(train_raw, stats)
val_std = windows.apply_stats(val_raw, stats)
test_std = windows.apply_stats(test_raw, stats)
print(f"z-score stats: mean={stats.mean.round(3)}, std={stats.std.round(3)}")

weights = nn.class_weights_from(train_raw)
print(f"class weights from the 160:40 imbalance: {weights.round(3)}")

model = nn.build_model(seed=0)  # three convolutions, dropout, 2-way head
n_params = sum(p.size for p in model.parameters())
print(f"model has {n_params} parameters")

config = nn.TrainConfig(
    learning_rate=1e-3,
    batch_size=32,
    max_epochs=40,
    patience=5,
    class_weights=tuple(weights),
    seed=0,
)
model, history = nn.train(model, train_std, val_std, config)

print(f"\ntrained {history['stopped_epoch']} epochs, "
      f"best validation loss at epoch {history['best_epoch']}")
for e in range(0, history["stopped_epoch"], max(1, history["stopped_epoch"] // 8)):
    print(f"  epoch {e + 1:>3}: train loss {history['train_loss'][e]:.4f} "
          f"acc {history['train_acc'][e]:.3f} | "
          f"val loss {history['val_loss'][e]:.4f} acc {history['val_acc'][e]:.3f}")

report = nn.evaluate(model, test_std)
print(f"\nheld-out test: accuracy {report.accuracy_overall:.3f}, "
      f"per-class {report.accuracy_per_class.round(3)}")
print(f"confusion [[tn fp] [fn tp]] = {report.confusion}")
