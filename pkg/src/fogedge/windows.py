"""Fixed-length window extraction, labeling, rebalancing and splits.

A window is 129 consecutive samples of one cleaned series (about 2 s of
data), three axes per sample. Consecutive windows overlap by moving the
start only ``hop`` samples forward (64 by default, about 1 s). A window
is labeled freeze (1) when a strict majority of its samples carry the
freeze annotation; 129 being odd, ties cannot occur.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import Reader, Writer
from .ingest import CleanSeries

WINDOW_LEN = 129
HOP = 64
N_AXES = 3

MAGIC = b"FOGW"
VERSION = 1


class EmptyClass(ValueError):
    """An operation that needs both classes found one of them empty."""


class DegenerateAxis(ValueError):
    """An axis has zero variance; z-scoring it would divide by zero."""


class InvalidFractions(ValueError):
    """Split fractions must all be positive and sum to 1."""


Origin = tuple[str, str, int, int]  # (subject, trial, segment, start sample)


@dataclass(frozen=True)
class Window:
    values: np.ndarray  # (window_len, 3) float64
    label: int          # 0 = no freeze, 1 = freeze
    origin: Origin


@dataclass
class WindowSet:
    """A labeled window corpus, stored as contiguous arrays."""

    values: np.ndarray          # (n, window_len, 3) float64
    labels: np.ndarray          # (n,) int64
    origins: list[Origin]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.labels) or len(self.labels) != len(self.origins):
            raise ValueError("values, labels and origins must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Window:
        return Window(self.values[i], int(self.labels[i]), self.origins[i])

    @property
    def count_fog(self) -> int:
        return int((self.labels == 1).sum())

    @property
    def count_nofog(self) -> int:
        return int((self.labels == 0).sum())

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(
            values=self.values[idx].copy(),
            labels=self.labels[idx].copy(),
            origins=[self.origins[i] for i in idx],
        )

    @classmethod
    def from_windows(cls, windows: list[Window]) -> "WindowSet":
        if not windows:
            return cls.empty()
        return cls(
            values=np.stack([w.values for w in windows]).astype(np.float64),
            labels=np.array([w.label for w in windows], dtype=np.int64),
            origins=[w.origin for w in windows],
        )

    @classmethod
    def empty(cls, window_len: int = WINDOW_LEN) -> "WindowSet":
        return cls(
            values=np.zeros((0, window_len, N_AXES), dtype=np.float64),
            labels=np.zeros((0,), dtype=np.int64),
            origins=[],
        )

    @classmethod
    def concat(cls, sets: list["WindowSet"]) -> "WindowSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(
            values=np.concatenate([s.values for s in sets]),
            labels=np.concatenate([s.labels for s in sets]),
            origins=[o for s in sets for o in s.origins],
        )


@dataclass(frozen=True)
class NormStats:
    """Per-axis z-score statistics, fit on training windows only."""

    mean: np.ndarray  # (3,)
    std: np.ndarray   # (3,)


def label_window(annotations: np.ndarray) -> int:
    """1 (freeze) iff strictly more than half the samples are annotated 2."""
    annotations = np.asarray(annotations)
    return int(2 * int((annotations == 2).sum()) > len(annotations))


def segment(
    series: CleanSeries, window_len: int = WINDOW_LEN, hop: int = HOP
) -> list[Window]:
    """Slice one series into windows starting at 0, hop, 2*hop, ...

    Only full windows are produced (start + window_len <= len(series)), so
    windows never span series boundaries. A series shorter than one window
    yields no windows.
    """
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    if not (0 < hop <= window_len):
        raise ValueError("hop must be in (0, window_len]")
    n = len(series)
    out: list[Window] = []
    for start in range(0, n - window_len + 1, hop):
        out.append(
            Window(
                values=series.values[start : start + window_len].astype(np.float64),
                label=label_window(series.annotations[start : start + window_len]),
                origin=(series.subject_id, series.trial_id, series.segment_index, start),
            )
        )
    return out


def segment_all(
    series_list: list[CleanSeries], window_len: int = WINDOW_LEN, hop: int = HOP
) -> WindowSet:
    """Segment many series; corpus order is sorted by origin ids."""
    ordered = sorted(series_list, key=lambda s: (s.subject_id, s.trial_id, s.segment_index))
    windows: list[Window] = []
    for series in ordered:
        windows.extend(segment(series, window_len, hop))
    return WindowSet.from_windows(windows)


def oversample_minority(
    ws: WindowSet, target_ratio: float = 1.0, seed: int = 0
) -> WindowSet:
    """Duplicate random minority windows until
    count_minority >= target_ratio * count_majority.

    Originals are all retained; every duplicate is bit-identical to some
    original. Deterministic for a fixed seed.
    """
    if not (0.0 < target_ratio <= 1.0):
        raise ValueError("target_ratio must be in (0, 1]")
    n_fog, n_nofog = ws.count_fog, ws.count_nofog
    if n_fog == 0 or n_nofog == 0:
        raise EmptyClass(f"both classes required, got no-FoG={n_nofog}, FoG={n_fog}")
    minority = 1 if n_fog < n_nofog else 0
    n_min, n_maj = min(n_fog, n_nofog), max(n_fog, n_nofog)
    # tolerate float dust so e.g. ratio 0.3 of 10 wants 3, not 4
    target = math.ceil(target_ratio * n_maj - 1e-9)
    n_add = target - n_min
    if n_add <= 0:
        return ws
    rng = np.random.Generator(np.random.PCG64(seed))
    pool = np.flatnonzero(ws.labels == minority)
    picks = pool[rng.integers(0, len(pool), size=n_add)]
    return WindowSet(
        values=np.concatenate([ws.values, ws.values[picks]]),
        labels=np.concatenate([ws.labels, ws.labels[picks]]),
        origins=ws.origins + [ws.origins[i] for i in picks],
    )


def fit_stats(train: WindowSet) -> NormStats:
    """Per-axis mean/std over every sample of the training windows."""
    if len(train) == 0:
        raise ValueError("cannot fit statistics on an empty set")
    flat = train.values.reshape(-1, N_AXES)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    if np.any(std == 0.0):
        bad = int(np.flatnonzero(std == 0.0)[0])
        raise DegenerateAxis(f"axis {bad} has zero variance")
    return NormStats(mean=mean, std=std)


def apply_stats(ws: WindowSet, stats: NormStats) -> WindowSet:
    """Z-score every value: (x - mean) / std, per axis."""
    return WindowSet(
        values=(ws.values - stats.mean) / stats.std,
        labels=ws.labels.copy(),
        origins=list(ws.origins),
    )


def split(
    ws: WindowSet, fractions: tuple[float, float, float], seed: int = 0
) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Stratified train/val/test split; disjoint, union = input.

    Oversampling belongs AFTER this, on the training split only, so no
    duplicate can leak across splits.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0.0 for f in fractions):
        raise InvalidFractions(f"fractions must all be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidFractions(f"fractions must sum to 1, got {sum(fractions)}")
    f_train, f_val, _ = fractions
    rng = np.random.Generator(np.random.PCG64(seed))
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in (0, 1):
        idx = np.flatnonzero(ws.labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        cut1 = math.floor(f_train * n)
        cut2 = math.floor((f_train + f_val) * n)
        parts[0].append(idx[:cut1])
        parts[1].append(idx[cut1:cut2])
        parts[2].append(idx[cut2:])
    out = []
    for chunks in parts:
        idx = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        out.append(ws.subset(np.sort(idx)))
    return out[0], out[1], out[2]


# ---------------------------------------------------------------------------
# windows.bin: magic "FOGW", u32 version, u32 count, then per window
# u32 label, origin as 3 u32 + u32 start, window_len*3 float32 values in
# time-major order (t0x, t0y, t0z, t1x, ...). Subject/trial ids are short
# ASCII strings packed NUL-padded into the origin u32s.
# ---------------------------------------------------------------------------


def _encode_id(text: str) -> int:
    data = text.encode("ascii")
    if len(data) > 4:
        raise ValueError(f"id {text!r} longer than 4 bytes; cannot pack into u32")
    return int.from_bytes(data.ljust(4, b"\0"), "little")


def _decode_id(v: int) -> str:
    return v.to_bytes(4, "little").rstrip(b"\0").decode("ascii")


def save_window_set(ws: WindowSet, path: str | Path, window_len: int | None = None) -> None:
    window_len = window_len or (ws.values.shape[1] if len(ws) else WINDOW_LEN)
    w = Writer()
    w.magic(MAGIC)
    w.u32(VERSION)
    w.u32(len(ws))
    for i in range(len(ws)):
        subject, trial, seg, start = ws.origins[i]
        w.u32(int(ws.labels[i]))
        w.u32(_encode_id(subject))
        w.u32(_encode_id(trial))
        w.u32(int(seg))
        w.u32(int(start))
        w.f32s(ws.values[i].reshape(-1))
    Path(path).write_bytes(w.getvalue())


def load_window_set(path: str | Path, window_len: int = WINDOW_LEN) -> WindowSet:
    r = Reader(Path(path).read_bytes(), where=str(path))
    r.expect_magic(MAGIC)
    r.expect_version(VERSION)
    count = r.u32()
    values = np.zeros((count, window_len, N_AXES), dtype=np.float64)
    labels = np.zeros(count, dtype=np.int64)
    origins: list[Origin] = []
    for i in range(count):
        labels[i] = r.u32()
        subject = _decode_id(r.u32())
        trial = _decode_id(r.u32())
        seg = r.u32()
        start = r.u32()
        origins.append((subject, trial, seg, start))
        values[i] = r.f32s(window_len * N_AXES).astype(np.float64).reshape(window_len, N_AXES)
    return WindowSet(values=values, labels=labels, origins=origins)


@dataclass
class CorpusMeta:
    """Sidecar describing how one windows.bin is partitioned."""

    n_train: int
    n_val: int
    n_test: int
    window_len: int = WINDOW_LEN
    hop: int = HOP
    seed: int = 0
    ratio: float = 1.0
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)


def meta_path(bin_path: str | Path) -> Path:
    return Path(str(bin_path) + ".meta.json")


def save_corpus(
    path: str | Path,
    train: WindowSet,
    val: WindowSet,
    test: WindowSet,
    meta: CorpusMeta,
) -> None:
    """Write train+val+test concatenated (raw values) plus a meta sidecar."""
    combined = WindowSet.concat([train, val, test])
    save_window_set(combined, path, window_len=meta.window_len)
    meta_path(path).write_text(
        json.dumps(
            {
                "version": VERSION,
                "counts": {"train": meta.n_train, "val": meta.n_val, "test": meta.n_test},
                "window_len": meta.window_len,
                "hop": meta.hop,
                "seed": meta.seed,
                "ratio": meta.ratio,
                "fractions": list(meta.fractions),
            },
            indent=2,
        )
        + "\n"
    )


def load_corpus(path: str | Path) -> tuple[WindowSet, WindowSet, WindowSet, CorpusMeta]:
    """Load a windows.bin written by save_corpus, re-slicing by the sidecar."""
    mp = meta_path(path)
    if not mp.exists():
        raise FileNotFoundError(
            f"{mp} missing; this windows file has no train/val/test partition"
        )
    raw = json.loads(mp.read_text())
    meta = CorpusMeta(
        n_train=raw["counts"]["train"],
        n_val=raw["counts"]["val"],
        n_test=raw["counts"]["test"],
        window_len=raw.get("window_len", WINDOW_LEN),
        hop=raw.get("hop", HOP),
        seed=raw.get("seed", 0),
        ratio=raw.get("ratio", 1.0),
        fractions=tuple(raw.get("fractions", (0.7, 0.15, 0.15))),
    )
    ws = load_window_set(path, window_len=meta.window_len)
    if len(ws) != meta.n_train + meta.n_val + meta.n_test:
        raise ValueError(f"{path}: window count disagrees with {mp}")
    a, b = meta.n_train, meta.n_train + meta.n_val
    return (
        ws.subset(np.arange(0, a)),
        ws.subset(np.arange(a, b)),
        ws.subset(np.arange(b, len(ws))),
        meta,
    )


def load_split(path: str | Path, which: str = "test") -> WindowSet:
    """Load one named split; 'all' returns the whole file (meta optional)."""
    if which == "all" or not meta_path(path).exists():
        return load_window_set(path)
    train, val, test, _ = load_corpus(path)
    try:
        return {"train": train, "val": val, "test": test}[which]
    except KeyError:
        raise ValueError(f"unknown split {which!r}") from None
