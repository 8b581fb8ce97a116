#!/usr/bin/env python3
"""From trained float model to deployable int8 blob.

Covers freezing (dropout removed, bit-identical inference), range
calibration, affine int8 quantization, the packed binary format, and how
closely the integer engine tracks the float path.
"""

import numpy as np

from fogedge import export, nn, windows

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


train_raw = make_set(120, 120, seed=20)
test_raw = make_set(150, 150, seed=21)
stats = windows.fit_stats(train_raw)
train_std = windows.apply_stats(train_raw, stats)
test_std = windows.apply_stats(test_raw, stats)

model = nn.build_model(seed=1)
config = nn.TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=12, patience=12, seed=1)
model, _ = nn.train(model, train_std, train_std, config)

# --- freeze: drop training-only layers, keep inference bit-identical --------
frozen = export.freeze(model)
p_model, _ = model.forward(test_std.values[:16])
p_frozen, _ = frozen.forward(test_std.values[:16])
print(f"freeze removed {len(model.layers) - len(frozen.layers)} layer(s); "
      f"inference bit-identical: {np.array_equal(p_model, p_frozen)}")

# --- calibrate ranges on a seeded training sample ---------------------------
calib = export.calibrate(frozen, export.calibration_sample(train_std))
print(f"\ninput  quant params: scale={calib.input_qp.scale:.6f} "
      f"zero_point={calib.input_qp.zero_point}")
print(f"output quant params: scale={calib.output_qp.scale:.6f} "
      f"zero_point={calib.output_qp.zero_point}")

# --- pack under the 1 MB flash budget ---------------------------------------
blob = export.pack(frozen, calib, stats)
print(f"\npacked blob: {len(blob)} bytes "
      f"({100.0 * len(blob) / export.FLASH_MODEL_BUDGET:.2f}% of the flash budget)")
packed = export.unpack(blob)
print(f"round trip byte-stable: {export.serialize(packed) == blob}")

# --- scalar quantization in one picture --------------------------------------
qp = export.affine_params(-1.0, 1.0)
xs = np.array([-1.0, -0.5, 0.0, 0.25, 1.0])
qs = export.quantize(xs, qp)
back = export.dequantize(qs, qp)
print(f"\nquantize [-1, 1] with scale={qp.scale:.6f} zp={qp.zero_point}:")
for x, q, b in zip(xs, qs, back):
    print(f"  {x:+.3f} -> {int(q):+4d} -> {b:+.4f} (err {abs(b - x):.4f} <= scale/2)")

# --- integer engine vs float path --------------------------------------------
float_labels = frozen.predict(test_std.values)
agree = 0
flips = []
for i in range(len(test_raw)):
    label, prob = export.classify_window(packed, test_raw.values[i])
    agree += label == float_labels[i]
    if label != float_labels[i]:
        flips.append(i)
print(f"\nint8 vs float label agreement: {agree}/{len(test_raw)} "
      f"({100.0 * agree / len(test_raw):.1f}%)")
if flips:
    print(f"disagreements sit near the decision boundary: windows {flips[:6]}")

quant_acc = np.mean(
    [export.classify_window(packed, test_raw.values[i])[0] == test_raw.labels[i]
     for i in range(len(test_raw))]
)
float_acc = np.mean(float_labels == test_raw.labels)
print(f"task accuracy: float {float_acc:.3f}, int8 {quant_acc:.3f}")
