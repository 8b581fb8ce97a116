import numpy as np
import pytest

from fogedge import windows
from fogedge.binio import BadMagic, BadVersion, UnexpectedEOF
from fogedge.ingest import CleanSeries
from fogedge.windows import (
    DegenerateAxis,
    EmptyClass,
    InvalidFractions,
    NormStats,
    WindowSet,
    apply_stats,
    fit_stats,
    label_window,
    oversample_minority,
    segment,
    split,
)
from helpers import make_mixture_set


def make_series(n, seed=0, freeze_from=None):
    """A clean series of n samples; annotations flip to 2 from freeze_from on."""
    rng = np.random.Generator(np.random.PCG64(seed))
    annotations = np.ones(n, dtype=np.uint8)
    if freeze_from is not None:
        annotations[freeze_from:] = 2
    return CleanSeries(
        subject_id="S01",
        trial_id="R01",
        segment_index=0,
        times_ms=np.arange(n, dtype=np.int64) * 15,
        values=rng.integers(-2000, 2000, size=(n, 3)),
        annotations=annotations,
    )


def brute_force_starts(n, window_len=129, hop=64):
    return [s for s in range(n) if s % hop == 0 and s + window_len <= n]


class TestSegment:
    def test_193_samples_two_windows(self):
        out = segment(make_series(193))
        assert len(out) == 2
        assert [w.origin[3] for w in out] == [0, 64]

    def test_shorter_than_window(self):
        assert segment(make_series(128)) == []

    def test_count_formula(self):
        for n in range(129, 2000, 37):
            got = len(segment(make_series(n, seed=n)))
            assert got == (n - 129) // 64 + 1 == len(brute_force_starts(n))

    def test_values_match_series_slices(self):
        rng = np.random.Generator(np.random.PCG64(3))
        for _ in range(10):
            n = int(rng.integers(0, 600))
            series = make_series(n, seed=n + 1)
            for w in segment(series):
                start = w.origin[3]
                assert np.array_equal(w.values, series.values[start : start + 129])

    def test_no_overlap_hop_partitions_prefix(self):
        series = make_series(400)
        out = segment(series, window_len=100, hop=100)
        joined = np.concatenate([w.values for w in out])
        assert np.array_equal(joined, series.values[: len(joined)])

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            segment(make_series(200), window_len=0)
        with pytest.raises(ValueError):
            segment(make_series(200), hop=130)


class TestLabelWindow:
    def test_unanimous(self):
        assert label_window(np.full(129, 2)) == 1
        assert label_window(np.full(129, 1)) == 0

    def test_majority_boundary(self):
        ann = np.ones(129)
        ann[:65] = 2
        assert label_window(ann) == 1
        ann = np.ones(129)
        ann[:64] = 2
        assert label_window(ann) == 0

    def test_through_segment(self):
        # freeze annotations start at sample 64: window 0 has 65 freeze
        # samples out of 129 (majority), window 1 is all freeze
        out = segment(make_series(193, freeze_from=64))
        assert [w.label for w in out] == [1, 1]
        out = segment(make_series(193, freeze_from=65))
        assert [w.label for w in out] == [0, 1]


class TestOversample:
    def test_balances_to_majority(self):
        ws = make_mixture_set(100, 20, seed=1)
        out = oversample_minority(ws, target_ratio=1.0, seed=7)
        assert (out.count_nofog, out.count_fog) == (100, 100)

    def test_balanced_input_unchanged(self):
        ws = make_mixture_set(50, 50, seed=2)
        out = oversample_minority(ws, target_ratio=1.0, seed=7)
        assert len(out) == len(ws)

    def test_half_ratio(self):
        ws = make_mixture_set(100, 20, seed=3)
        out = oversample_minority(ws, target_ratio=0.5, seed=7)
        assert (out.count_nofog, out.count_fog) == (100, 50)

    def test_originals_retained_and_duplicates_identical(self):
        ws = make_mixture_set(30, 10, seed=4)
        out = oversample_minority(ws, seed=7)
        assert np.array_equal(out.values[: len(ws)], ws.values)
        originals = {ws.origins[i] for i in range(len(ws))}
        for i in range(len(ws), len(out)):
            assert out.origins[i] in originals
            j = ws.origins.index(out.origins[i])
            assert np.array_equal(out.values[i], ws.values[j])

    def test_deterministic(self):
        ws = make_mixture_set(40, 10, seed=5)
        a = oversample_minority(ws, seed=9)
        b = oversample_minority(ws, seed=9)
        assert np.array_equal(a.values, b.values) and a.origins == b.origins

    def test_empty_class(self):
        ws = make_mixture_set(10, 0, seed=6)
        with pytest.raises(EmptyClass):
            oversample_minority(ws, seed=0)

    def test_bad_ratio(self):
        ws = make_mixture_set(10, 5, seed=6)
        with pytest.raises(ValueError):
            oversample_minority(ws, target_ratio=0.0, seed=0)


class TestStats:
    def test_degenerate_axis(self):
        ws = make_mixture_set(5, 5, seed=1)
        ws.values[:, :, 2] = 4.0
        with pytest.raises(DegenerateAxis):
            fit_stats(ws)

    def test_zscore_self(self):
        ws = make_mixture_set(20, 20, seed=2)
        stats = fit_stats(ws)
        out = apply_stats(ws, stats)
        flat = out.values.reshape(-1, 3)
        assert np.all(np.abs(flat.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(flat.std(axis=0) - 1.0) < 1e-9)

    def test_identity_stats(self):
        ws = make_mixture_set(5, 5, seed=3)
        out = apply_stats(ws, NormStats(mean=np.zeros(3), std=np.ones(3)))
        assert np.array_equal(out.values, ws.values)


class TestSplit:
    def test_stratified_counts(self):
        ws = make_mixture_set(80, 20, seed=1)
        train, val, test = split(ws, (0.6, 0.2, 0.2), seed=0)
        assert (len(train), len(val), len(test)) == (60, 20, 20)
        assert abs(train.count_fog - 12) <= 1
        assert abs(val.count_fog - 4) <= 1
        assert abs(test.count_fog - 4) <= 1

    def test_invalid_fractions(self):
        ws = make_mixture_set(10, 10, seed=2)
        with pytest.raises(InvalidFractions):
            split(ws, (1.0, 0.0, 0.0), seed=0)
        with pytest.raises(InvalidFractions):
            split(ws, (0.5, 0.2, 0.2), seed=0)

    def test_deterministic(self):
        ws = make_mixture_set(40, 20, seed=3)
        a = split(ws, (0.7, 0.15, 0.15), seed=5)
        b = split(ws, (0.7, 0.15, 0.15), seed=5)
        for x, y in zip(a, b):
            assert np.array_equal(x.values, y.values) and x.origins == y.origins

    def test_disjoint_union(self):
        ws = make_mixture_set(35, 25, seed=4)
        train, val, test = split(ws, (0.7, 0.15, 0.15), seed=1)
        all_origins = train.origins + val.origins + test.origins
        assert len(all_origins) == len(ws)
        assert set(all_origins) == set(ws.origins)
        assert not (set(train.origins) & set(val.origins))
        assert not (set(train.origins) & set(test.origins))
        assert not (set(val.origins) & set(test.origins))

    def test_no_leak_after_oversampling_train(self):
        ws = make_mixture_set(60, 15, seed=5)
        train, val, test = split(ws, (0.7, 0.15, 0.15), seed=2)
        train = oversample_minority(train, seed=2)
        assert not (set(train.origins) & set(val.origins))
        assert not (set(train.origins) & set(test.origins))


class TestWindowsFile:
    def test_round_trip(self, tmp_path):
        ws = make_mixture_set(6, 6, seed=7)
        # float32 storage: round-trip exactly representable values
        ws = WindowSet(ws.values.astype(np.float32).astype(np.float64), ws.labels, ws.origins)
        path = tmp_path / "windows.bin"
        windows.save_window_set(ws, path)
        back = windows.load_window_set(path)
        assert np.array_equal(back.values, ws.values)
        assert np.array_equal(back.labels, ws.labels)
        assert back.origins == ws.origins

    def test_magic_and_truncation(self, tmp_path):
        ws = make_mixture_set(3, 3, seed=8)
        path = tmp_path / "windows.bin"
        windows.save_window_set(ws, path)
        data = path.read_bytes()
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOPE" + data[4:])
        with pytest.raises(BadMagic):
            windows.load_window_set(bad)
        bad.write_bytes(data[: len(data) // 2])
        with pytest.raises(UnexpectedEOF):
            windows.load_window_set(bad)
        bad.write_bytes(data[:4] + b"\x02\x00\x00\x00" + data[8:])
        with pytest.raises(BadVersion):
            windows.load_window_set(bad)

    def test_corpus_round_trip(self, tmp_path):
        full = make_mixture_set(40, 20, seed=9)
        full = WindowSet(full.values.astype(np.float32).astype(np.float64), full.labels, full.origins)
        train, val, test = split(full, (0.7, 0.15, 0.15), seed=3)
        meta = windows.CorpusMeta(
            n_train=len(train), n_val=len(val), n_test=len(test), seed=3
        )
        path = tmp_path / "windows.bin"
        windows.save_corpus(path, train, val, test, meta)
        t2, v2, s2, m2 = windows.load_corpus(path)
        assert np.array_equal(t2.values, train.values)
        assert np.array_equal(v2.values, val.values)
        assert np.array_equal(s2.values, test.values)
        assert s2.origins == test.origins
        assert m2.seed == 3
        assert len(windows.load_split(path, "val")) == len(val)
        assert len(windows.load_split(path, "all")) == len(full)
