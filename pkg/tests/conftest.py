"""Session-scoped fixtures: one trained model reused by the export, device,
host and acceptance tests so the suite trains only once."""

from __future__ import annotations

import numpy as np
import pytest

from fogedge import export, nn, windows
from helpers import make_mixture_set


@pytest.fixture(scope="session")
def bundle():
    train_raw = make_mixture_set(100, 100, seed=11)
    val_raw = make_mixture_set(30, 30, seed=12)
    test_raw = make_mixture_set(250, 250, seed=13, tag="S02")

    stats = windows.fit_stats(train_raw)
    train_std = windows.apply_stats(train_raw, stats)
    val_std = windows.apply_stats(val_raw, stats)
    test_std = windows.apply_stats(test_raw, stats)

    model = nn.build_model(seed=0)
    config = nn.TrainConfig(
        learning_rate=1e-3, batch_size=32, max_epochs=10, patience=10, seed=0
    )
    model, history = nn.train(model, train_std, val_std, config)

    frozen = export.freeze(model)
    calib = export.calibrate(frozen, export.calibration_sample(train_std))
    blob = export.pack(frozen, calib, stats)
    packed = export.unpack(blob)

    return {
        "train_raw": train_raw,
        "val_raw": val_raw,
        "test_raw": test_raw,
        "stats": stats,
        "train_std": train_std,
        "val_std": val_std,
        "test_std": test_std,
        "model": model,
        "history": history,
        "config": config,
        "frozen": frozen,
        "calib": calib,
        "blob": blob,
        "packed": packed,
    }
