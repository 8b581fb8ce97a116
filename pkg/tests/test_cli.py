import json
import subprocess
import sys

import numpy as np
import pytest

from fogedge import cli, windows
from fogedge.micro import DeviceServer


def synthesize_raw_file(path, seed, n_blocks=4, block=1000):
    """Alternating walk/freeze blocks with a distinguishable freeze signal."""
    rng = np.random.Generator(np.random.PCG64(seed))
    lines = []
    t = 0
    sample = 0
    for b in range(n_blocks):
        ann = 1 if b % 2 == 0 else 2
        for _ in range(block):
            t += 15
            if ann == 1:
                thigh = rng.integers(-80, 80, 3)
            else:
                carrier = int(600 * np.sin(2 * np.pi * sample / 20.0))
                thigh = carrier + rng.integers(-80, 80, 3)
            ankle = rng.integers(-50, 50, 3)
            trunk = rng.integers(-50, 50, 3)
            lines.append(
                " ".join(str(v) for v in (t, *ankle, *thigh, *trunk, ann))
            )
            sample += 1
    # a little out-of-experiment data at both ends
    lines.insert(0, f"1 0 0 0 0 0 0 0 0 0 0")
    lines.append(f"{t + 15} 0 0 0 0 0 0 0 0 0 0")
    path.write_text("\n".join(lines) + "\n")


TINY_ARCH = [
    {"kind": "conv1d", "filters": 4, "kernel": 5},
    {"kind": "maxpool", "pool": 4},
    {"kind": "dense", "units": 2},
]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the whole CLI pipeline once; individual tests inspect artifacts."""
    root = tmp_path_factory.mktemp("pipeline")
    raw = root / "raw"
    clean = root / "clean"
    raw.mkdir()
    synthesize_raw_file(raw / "S01R01.txt", seed=1)
    synthesize_raw_file(raw / "S01R02.txt", seed=2)

    assert cli.main(["ingest", "--in", str(raw), "--out", str(clean)]) == 0

    bin_path = root / "windows.bin"
    assert (
        cli.main(
            ["segment", "--in", str(clean), "--out", str(bin_path), "--seed", "42"]
        )
        == 0
    )

    config_path = root / "train.json"
    config_path.write_text(
        json.dumps(
            {
                "learning_rate": 1e-3,
                "batch_size": 16,
                "max_epochs": 4,
                "patience": 4,
                "seed": 0,
                "architecture": TINY_ARCH,
            }
        )
    )
    fp_path = root / "model.fp.bin"
    train_report = root / "train_report.json"
    assert (
        cli.main(
            [
                "train",
                "--windows", str(bin_path),
                "--config", str(config_path),
                "--out", str(fp_path),
                "--report", str(train_report),
            ]
        )
        == 0
    )

    q_path = root / "model.q.bin"
    assert (
        cli.main(
            [
                "export",
                "--model", str(fp_path),
                "--windows", str(bin_path),
                "--out", str(q_path),
            ]
        )
        == 0
    )
    return {
        "root": root,
        "raw": raw,
        "clean": clean,
        "windows": bin_path,
        "config": config_path,
        "fp": fp_path,
        "q": q_path,
        "train_report": train_report,
    }


class TestPipelineArtifacts:
    def test_clean_csvs_written(self, pipeline):
        names = sorted(p.name for p in pipeline["clean"].glob("*.csv"))
        assert names[0] == "S01_R01_0.csv"
        assert len(names) >= 2

    def test_windows_bin_and_meta(self, pipeline):
        train, val, test, meta = windows.load_corpus(pipeline["windows"])
        assert meta.window_len == 129 and meta.hop == 64
        assert len(train) > 0 and len(val) > 0 and len(test) > 0
        assert train.count_fog > 0 and train.count_nofog > 0

    def test_train_report(self, pipeline):
        raw = json.loads(pipeline["train_report"].read_text())
        assert {"history", "class_weights", "val", "test"} <= set(raw)
        assert len(raw["history"]["train_loss"]) >= 1

    def test_packed_model_under_budget(self, pipeline):
        assert 0 < pipeline["q"].stat().st_size < 1_048_576


class TestEvaluateCommand:
    def test_float_model(self, pipeline, tmp_path):
        out = tmp_path / "eval_fp.json"
        rc = cli.main(
            [
                "evaluate",
                "--model", str(pipeline["fp"]),
                "--windows", str(pipeline["windows"]),
                "--out", str(out),
            ]
        )
        assert rc == 0
        payload = json.loads(out.read_text())
        assert set(payload) == {"confusion", "accuracy", "per_class", "latency_ms", "n_windows"}

    def test_packed_model(self, pipeline, tmp_path):
        out = tmp_path / "eval_q.json"
        rc = cli.main(
            [
                "evaluate",
                "--model", str(pipeline["q"]),
                "--windows", str(pipeline["windows"]),
                "--out", str(out),
            ]
        )
        assert rc == 0
        assert json.loads(out.read_text())["n_windows"] > 0


class TestStreamCommand:
    def test_in_process(self, pipeline, tmp_path):
        out = tmp_path / "stream.json"
        rc = cli.main(
            [
                "stream",
                "--model", str(pipeline["q"]),
                "--windows", str(pipeline["windows"]),
                "--out", str(out),
            ]
        )
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["n_windows"] == sum(sum(row) for row in payload["confusion"])

    def test_over_tcp(self, pipeline, tmp_path):
        server = DeviceServer(pipeline["q"].read_bytes()).start()
        try:
            out = tmp_path / "stream_tcp.json"
            rc = cli.main(
                [
                    "stream",
                    "--connect", f"{server.address[0]}:{server.address[1]}",
                    "--windows", str(pipeline["windows"]),
                    "--out", str(out),
                ]
            )
            assert rc == 0
            assert json.loads(out.read_text())["n_windows"] > 0
        finally:
            server.stop()

    def test_requires_endpoint(self, pipeline):
        rc = cli.main(["stream", "--windows", str(pipeline["windows"])])
        assert rc == 2


class TestEchoCheckCommand:
    def test_in_process(self, pipeline):
        rc = cli.main(["echo-check", "--model", str(pipeline["q"]), "--n", "50"])
        assert rc == 0


class TestTuneCommand:
    def test_tiny_grid(self, pipeline, tmp_path):
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(
            json.dumps(
                {"filters": [2], "learning_rates": [1e-2], "epochs": [2], "batch_sizes": [16]}
            )
        )
        out = tmp_path / "tune_report.json"
        rc = cli.main(
            [
                "tune",
                "--windows", str(pipeline["windows"]),
                "--grid", str(grid_path),
                "--out", str(out),
            ]
        )
        assert rc == 0
        raw = json.loads(out.read_text())
        assert len(raw["table"]) == 1 and raw["best"] is not None


class TestEntryPoint:
    def test_help_via_module(self):
        proc = subprocess.run(
            [sys.executable, "-m", "fogedge.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        for sub in ("ingest", "segment", "train", "tune", "export", "device", "stream", "echo-check", "evaluate"):
            assert sub in proc.stdout
