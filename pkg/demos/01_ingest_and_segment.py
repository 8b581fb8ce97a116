#!/usr/bin/env python3
"""Walk the data path: raw sensor log -> cleaned series -> labeled windows.

Synthesizes a small Daphnet-style recording (11 space-separated columns:
time, ankle/thigh/trunk accelerations in mg, annotation), then shows how
cleaning strips out-of-experiment samples and how the sliding window
segmentation labels each 2-second window.
"""

import tempfile
from pathlib import Path

import numpy as np

from fogedge import ingest, windows

rng = np.random.Generator(np.random.PCG64(1))

# --- synthesize a raw recording --------------------------------------------
# 30 s of idle (annotation 0), 60 s walking (1), 45 s freezing (2), 30 s idle.
# Samples arrive every 15 ms (~64 Hz, so 129 samples span about 2 s).
lines = []
t = 0
for annotation, seconds in ((0, 30), (1, 60), (2, 45), (0, 30)):
    for _ in range(int(seconds * 1000 / 15)):
        t += 15
        if annotation == 2:
            thigh = (600 * np.sin(2 * np.pi * t / 300.0) + rng.integers(-60, 60, 3)).astype(int)
        else:
            thigh = rng.integers(-60, 60, 3)
        ankle = rng.integers(-40, 40, 3)
        trunk = rng.integers(-40, 40, 3)
        lines.append(" ".join(str(v) for v in (t, *ankle, *thigh, *trunk, annotation)))

workdir = Path(tempfile.mkdtemp(prefix="fogedge_demo_"))
raw_path = workdir / "S01R01.txt"
raw_path.write_text("\n".join(lines) + "\n")
print(f"synthesized {len(lines)} samples -> {raw_path}")

# --- parse + clean ----------------------------------------------------------
recording = ingest.parse_file(raw_path)
print(f"parsed subject={recording.subject_id} trial={recording.trial_id}, "
      f"{len(recording.records)} records")

series_list = ingest.clean(recording)  # thigh channel by default
print(f"after cleaning: {len(series_list)} contiguous series "
      f"(annotation-0 stretches removed)")
for s in series_list:
    print(f"  segment {s.segment_index}: {len(s)} samples, "
          f"annotations {sorted(set(s.annotations.tolist()))}")

# --- segment into windows ---------------------------------------------------
corpus = windows.segment_all(series_list)
print(f"\nsegmented into {len(corpus)} windows of 129 samples (hop 64)")
print(f"  no-FoG windows: {corpus.count_nofog}")
print(f"  FoG windows   : {corpus.count_fog}")
w = corpus[0]
print(f"  first window: origin={w.origin}, label={w.label}, values {w.values.shape}")

# --- persist and reload -----------------------------------------------------
bin_path = workdir / "windows.bin"
windows.save_window_set(corpus, bin_path)
reloaded = windows.load_window_set(bin_path)
print(f"\nwrote {bin_path} ({bin_path.stat().st_size} bytes) "
      f"and reloaded {len(reloaded)} windows")
assert reloaded.origins == corpus.origins

# --- the usual split --------------------------------------------------------
train, val, test = windows.split(corpus, (0.7, 0.15, 0.15), seed=42)
train = windows.oversample_minority(train, target_ratio=1.0, seed=42)
print(f"stratified split + training-only oversampling: "
      f"train {len(train)} ({train.count_nofog}/{train.count_fog}), "
      f"val {len(val)}, test {len(test)}")
