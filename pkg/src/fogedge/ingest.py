"""Parsing and cleaning of tri-axial accelerometer recordings.

Input files are plain text, one sample per line, 11 numeric columns:

    time(ms)  ankle x y z  thigh x y z  trunk x y z  annotation

Accelerations are integer milli-g; the annotation is 0 (out of experiment
or not walking), 1 (walking, no freeze) or 2 (freeze). Space- and
comma-separated variants are accepted. Cleaning removes annotation-0
samples (plus optional per-trial time-range exclusions) and splits the
remainder into maximal contiguous runs, so no downstream window ever spans
a discontinuity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np


class Channel(Enum):
    ANKLE = "ankle"
    THIGH = "thigh"
    TRUNK = "trunk"


class FileFormat(Enum):
    DAPHNET_TEXT = "daphnet"  # whitespace-separated
    CSV = "csv"               # comma-separated, same column order


N_COLUMNS = 11
CLEAN_CSV_HEADER = "time_ms,x,y,z,annotation"


class MalformedLine(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NonMonotonicTime(ValueError):
    def __init__(self, line_no: int, time_ms: int, prev_ms: int):
        super().__init__(
            f"line {line_no}: time {time_ms} ms not after previous {prev_ms} ms"
        )
        self.line_no = line_no


@dataclass(frozen=True)
class RawRecord:
    """One timestamped sample from all three sensors."""

    time_ms: int
    ankle: tuple[int, int, int]
    thigh: tuple[int, int, int]
    trunk: tuple[int, int, int]
    annotation: int

    def vector(self, channel: Channel) -> tuple[int, int, int]:
        return getattr(self, channel.value)


@dataclass
class Recording:
    """All samples of one trial file, with the sensor channel to keep.

    ``select_channel`` is a projection: downstream consumers (``clean``)
    only ever see the axes of ``channel``.
    """

    subject_id: str
    trial_id: str
    records: list[RawRecord] = field(default_factory=list)
    channel: Channel = Channel.THIGH


@dataclass
class CleanSeries:
    """One maximal contiguous run of in-experiment samples, one channel."""

    subject_id: str
    trial_id: str
    segment_index: int
    times_ms: np.ndarray    # (n,) int64
    values: np.ndarray      # (n, 3) int64, acceleration in mg
    annotations: np.ndarray  # (n,) uint8, each 1 or 2

    def __len__(self) -> int:
        return len(self.times_ms)


def _ids_from_stem(stem: str) -> tuple[str, str]:
    m = re.match(r"^([A-Za-z]+\d+)([A-Za-z]+\d+)$", stem)
    if m:
        return m.group(1), m.group(2)
    return stem, "R0"


def _parse_int_field(token: str, line_no: int, what: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise MalformedLine(line_no, f"non-numeric {what} {token!r}") from None
    if not np.isfinite(value) or value != int(value):
        raise MalformedLine(line_no, f"{what} {token!r} is not an integer")
    return int(value)


def parse_file(path: str | Path, fmt: FileFormat | None = None) -> Recording:
    """Read one trial file into a Recording, one RawRecord per line.

    ``fmt=None`` sniffs the delimiter from the first non-empty line.
    Raises MalformedLine on a wrong field count, a non-numeric token, or
    an annotation outside {0, 1, 2}; NonMonotonicTime when timestamps do
    not strictly increase.
    """
    path = Path(path)
    subject_id, trial_id = _ids_from_stem(path.stem)
    rec = Recording(subject_id=subject_id, trial_id=trial_id)
    prev_ms = None
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if fmt is None:
                fmt = FileFormat.CSV if "," in line else FileFormat.DAPHNET_TEXT
            tokens = line.split(",") if fmt is FileFormat.CSV else line.split()
            tokens = [t.strip() for t in tokens]
            if len(tokens) != N_COLUMNS:
                raise MalformedLine(
                    line_no, f"expected {N_COLUMNS} fields, got {len(tokens)}"
                )
            fields = [
                _parse_int_field(tok, line_no, f"field {i}")
                for i, tok in enumerate(tokens)
            ]
            annotation = fields[10]
            if annotation not in (0, 1, 2):
                raise MalformedLine(line_no, f"annotation {annotation} not in {{0,1,2}}")
            time_ms = fields[0]
            if prev_ms is not None and time_ms <= prev_ms:
                raise NonMonotonicTime(line_no, time_ms, prev_ms)
            prev_ms = time_ms
            rec.records.append(
                RawRecord(
                    time_ms=time_ms,
                    ankle=(fields[1], fields[2], fields[3]),
                    thigh=(fields[4], fields[5], fields[6]),
                    trunk=(fields[7], fields[8], fields[9]),
                    annotation=annotation,
                )
            )
    return rec


def select_channel(rec: Recording, channel: Channel = Channel.THIGH) -> Recording:
    """Project the recording onto one sensor's 3 axes. Idempotent."""
    return replace(rec, channel=channel)


def clean(
    rec: Recording,
    exclude: list[tuple[int, int]] | None = None,
) -> list[CleanSeries]:
    """Drop out-of-experiment samples and split into contiguous runs.

    A sample is dropped when its annotation is 0 or its time falls in one
    of the half-open ``[start_ms, end_ms)`` exclusion ranges. Each maximal
    run of surviving samples becomes one CleanSeries carrying only the
    selected channel. Runs shorter than a window are still returned;
    segmentation drops them later.
    """
    exclude = exclude or []

    def keep(r: RawRecord) -> bool:
        if r.annotation == 0:
            return False
        return not any(start <= r.time_ms < end for start, end in exclude)

    series: list[CleanSeries] = []
    run: list[RawRecord] = []

    def flush() -> None:
        if not run:
            return
        series.append(
            CleanSeries(
                subject_id=rec.subject_id,
                trial_id=rec.trial_id,
                segment_index=len(series),
                times_ms=np.array([r.time_ms for r in run], dtype=np.int64),
                values=np.array([r.vector(rec.channel) for r in run], dtype=np.int64),
                annotations=np.array([r.annotation for r in run], dtype=np.uint8),
            )
        )
        run.clear()

    for r in rec.records:
        if keep(r):
            run.append(r)
        else:
            flush()
    flush()
    return series


def write_recording_csv(rec: Recording, path: str | Path) -> None:
    """Write the full 11-column comma-separated form; parse_file reads it
    back bit-identically."""
    with open(path, "w", encoding="ascii") as fh:
        for r in rec.records:
            row = (r.time_ms, *r.ankle, *r.thigh, *r.trunk, r.annotation)
            fh.write(",".join(str(v) for v in row) + "\n")


def clean_series_filename(series: CleanSeries) -> str:
    return f"{series.subject_id}_{series.trial_id}_{series.segment_index}.csv"


def write_clean_series_csv(series: CleanSeries, out_dir: str | Path) -> Path:
    """Write one cleaned series as `<subject>_<trial>_<segment>.csv`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / clean_series_filename(series)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(CLEAN_CSV_HEADER + "\n")
        for t, (x, y, z), a in zip(series.times_ms, series.values, series.annotations):
            fh.write(f"{t},{x},{y},{z},{a}\n")
    return path


def read_clean_series_csv(path: str | Path) -> CleanSeries:
    """Read back a file produced by write_clean_series_csv."""
    path = Path(path)
    parts = path.stem.rsplit("_", 2)
    if len(parts) != 3:
        raise MalformedLine(0, f"cannot parse ids from filename {path.name!r}")
    subject_id, trial_id, seg = parts
    times, values, annotations = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != CLEAN_CSV_HEADER:
            raise MalformedLine(1, f"bad header {header!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            if len(tokens) != 5:
                raise MalformedLine(line_no, f"expected 5 fields, got {len(tokens)}")
            fields = [
                _parse_int_field(tok, line_no, f"field {i}")
                for i, tok in enumerate(tokens)
            ]
            if fields[4] not in (1, 2):
                raise MalformedLine(line_no, f"annotation {fields[4]} not in {{1,2}}")
            times.append(fields[0])
            values.append(fields[1:4])
            annotations.append(fields[4])
    return CleanSeries(
        subject_id=subject_id,
        trial_id=trial_id,
        segment_index=int(seg),
        times_ms=np.array(times, dtype=np.int64),
        values=np.array(values, dtype=np.int64).reshape(-1, 3),
        annotations=np.array(annotations, dtype=np.uint8),
    )


def ingest_dir(
    in_dir: str | Path,
    out_dir: str | Path,
    channel: Channel = Channel.THIGH,
    exclude_map: dict[str, list[tuple[int, int]]] | None = None,
) -> list[Path]:
    """Parse every .txt/.csv file in ``in_dir`` and write cleaned series.

    ``exclude_map`` keys are "<subject>_<trial>"; values are lists of
    [start_ms, end_ms) ranges to drop in addition to annotation-0 samples.
    Files are processed in sorted order so output is deterministic.
    """
    in_dir = Path(in_dir)
    exclude_map = exclude_map or {}
    written: list[Path] = []
    paths = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in (".txt", ".csv"))
    for path in paths:
        rec = select_channel(parse_file(path), channel)
        ranges = exclude_map.get(f"{rec.subject_id}_{rec.trial_id}", [])
        ranges = [(int(a), int(b)) for a, b in ranges]
        for series in clean(rec, exclude=ranges):
            written.append(write_clean_series_csv(series, out_dir))
    return written
