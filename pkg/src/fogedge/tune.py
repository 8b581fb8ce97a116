"""Exhaustive grid search over the four training hyperparameters.

Cells are trained with a shared seed and ranked by validation accuracy;
ties prefer the smaller deployable blob, then the lower learning rate,
then declaration order. A failing cell is recorded and skipped rather
than aborting the sweep.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .export import freeze, packed_size_bytes
from .nn import Model, TrainConfig, build_model, evaluate, train
from .windows import WindowSet

logger = logging.getLogger(__name__)

DEFAULT_GRID = {
    "filters": [8, 16, 32],
    "learning_rates": [1e-2, 1e-3, 1e-4],
    "epochs": [50],
    "batch_sizes": [32, 64],
}


@dataclass
class Grid:
    filters: list[int]
    learning_rates: list[float]
    epochs: list[int]
    batch_sizes: list[int]

    def __post_init__(self) -> None:
        for name in ("filters", "learning_rates", "epochs", "batch_sizes"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"grid axis {name} is empty")
            if any(v <= 0 for v in values):
                raise ValueError(f"grid axis {name} has non-positive values")

    @classmethod
    def from_dict(cls, raw: dict) -> "Grid":
        merged = {**DEFAULT_GRID, **raw}
        return cls(
            filters=[int(v) for v in merged["filters"]],
            learning_rates=[float(v) for v in merged["learning_rates"]],
            epochs=[int(v) for v in merged["epochs"]],
            batch_sizes=[int(v) for v in merged["batch_sizes"]],
        )

    def size(self) -> int:
        return (
            len(self.filters)
            * len(self.learning_rates)
            * len(self.epochs)
            * len(self.batch_sizes)
        )


def architecture_for(filters: int, dropout: float = 0.3) -> tuple:
    """Scale the stock three-conv architecture by its first filter count;
    the deeper convolutions use twice as many filters."""
    return (
        {"kind": "conv1d", "filters": filters, "kernel": 5},
        {"kind": "maxpool", "pool": 2},
        {"kind": "conv1d", "filters": 2 * filters, "kernel": 5},
        {"kind": "maxpool", "pool": 2},
        {"kind": "conv1d", "filters": 2 * filters, "kernel": 3},
        {"kind": "maxpool", "pool": 2},
        {"kind": "dropout", "rate": dropout},
        {"kind": "dense", "units": 2},
    )


@dataclass
class TuneCell:
    filters: int
    learning_rate: float
    epochs: int
    batch_size: int
    status: str = "ok"
    val_accuracy: float = 0.0
    val_loss: float = 0.0
    model_size_bytes: int = 0
    error: str = ""

    def config_dict(self) -> dict:
        return {
            "filters": self.filters,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }


@dataclass
class TuneResult:
    table: list[TuneCell]
    best: TuneCell | None

    def to_dict(self) -> dict:
        return {
            "table": [asdict(c) for c in self.table],
            "best": self.best.config_dict() if self.best else None,
        }


def _better(candidate: TuneCell, incumbent: TuneCell) -> bool:
    if candidate.val_accuracy != incumbent.val_accuracy:
        return candidate.val_accuracy > incumbent.val_accuracy
    if candidate.model_size_bytes != incumbent.model_size_bytes:
        return candidate.model_size_bytes < incumbent.model_size_bytes
    if candidate.learning_rate != incumbent.learning_rate:
        return candidate.learning_rate < incumbent.learning_rate
    return False  # earlier declaration wins


def grid_search(
    grid: Grid,
    train_set: WindowSet,
    val_set: WindowSet,
    base_config: TrainConfig,
    seed: int = 42,
    dropout: float = 0.3,
    input_shape=(129, 3),
) -> TuneResult:
    """Train one model per grid cell (Cartesian order) and rank them."""
    table: list[TuneCell] = []
    best: TuneCell | None = None
    for filters in grid.filters:
        for lr in grid.learning_rates:
            for epochs in grid.epochs:
                for batch_size in grid.batch_sizes:
                    cell = TuneCell(filters, lr, epochs, batch_size)
                    try:
                        model = build_model(
                            architecture_for(filters, dropout), input_shape, seed=seed
                        )
                        config = replace(
                            base_config,
                            learning_rate=lr,
                            max_epochs=epochs,
                            batch_size=batch_size,
                            seed=seed,
                        )
                        model, _ = train(model, train_set, val_set, config)
                        rep = evaluate(model, val_set, class_weights=config.class_weights)
                        cell.val_accuracy = rep.accuracy_overall
                        cell.val_loss = rep.loss
                        cell.model_size_bytes = packed_size_bytes(freeze(model))
                    except Exception as exc:  # keep sweeping on a bad cell
                        cell.status = "failed"
                        cell.error = str(exc)
                        logger.warning("grid cell %s failed: %s", cell.config_dict(), exc)
                    table.append(cell)
                    if cell.status == "ok" and (best is None or _better(cell, best)):
                        best = cell
    return TuneResult(table=table, best=best)


def save_tune_report(result: TuneResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n")
