"""Command-line pipeline: ingest -> segment -> train -> export -> stream.

Each subcommand is a thin wrapper over the library. Artifacts flow as
files: cleaned CSVs, a windows.bin corpus (with a .meta.json sidecar
holding the split boundaries), a float model, a packed int8 model, and
JSON reports.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np

from . import export, host, micro, nn, tune, windows
from .ingest import Channel, ingest_dir, read_clean_series_csv


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def cmd_ingest(args) -> int:
    exclude_map = {}
    if args.exclude:
        exclude_map = {
            key: [tuple(r) for r in ranges]
            for key, ranges in _load_json(args.exclude).items()
        }
    written = ingest_dir(
        args.in_dir, args.out_dir, channel=Channel(args.channel), exclude_map=exclude_map
    )
    print(f"wrote {len(written)} cleaned series to {args.out_dir}")
    return 0


def cmd_segment(args) -> int:
    fractions = tuple(float(f) for f in args.split.split(","))
    in_dir = Path(args.in_dir)
    series = [read_clean_series_csv(p) for p in sorted(in_dir.glob("*.csv"))]
    corpus = windows.segment_all(series, window_len=args.window, hop=args.hop)
    if len(corpus) == 0:
        print("no windows produced; input series are shorter than one window", file=sys.stderr)
        return 1
    train_ws, val_ws, test_ws = windows.split(corpus, fractions, seed=args.seed)
    train_ws = windows.oversample_minority(train_ws, target_ratio=args.ratio, seed=args.seed)
    meta = windows.CorpusMeta(
        n_train=len(train_ws),
        n_val=len(val_ws),
        n_test=len(test_ws),
        window_len=args.window,
        hop=args.hop,
        seed=args.seed,
        ratio=args.ratio,
        fractions=fractions,
    )
    windows.save_corpus(args.out, train_ws, val_ws, test_ws, meta)
    print(
        f"{len(corpus)} windows segmented -> train {len(train_ws)} "
        f"(after oversampling), val {len(val_ws)}, test {len(test_ws)}"
    )
    print(f"wrote {args.out} and {windows.meta_path(args.out)}")
    return 0


def _train_config_from(raw: dict, class_weights) -> nn.TrainConfig:
    adam = raw.get("adam", {})
    return nn.TrainConfig(
        learning_rate=float(raw.get("learning_rate", 1e-3)),
        batch_size=int(raw.get("batch_size", 32)),
        max_epochs=int(raw.get("max_epochs", 50)),
        patience=int(raw.get("patience", 5)),
        class_weights=tuple(class_weights),
        seed=int(raw.get("seed", 42)),
        beta1=float(adam.get("beta1", 0.9)),
        beta2=float(adam.get("beta2", 0.999)),
        epsilon=float(adam.get("epsilon", 1e-8)),
    )


def cmd_train(args) -> int:
    train_ws, val_ws, test_ws, meta = windows.load_corpus(args.windows)
    raw = _load_json(args.config) if args.config else {}
    stats = windows.fit_stats(train_ws)
    train_std = windows.apply_stats(train_ws, stats)
    val_std = windows.apply_stats(val_ws, stats)
    test_std = windows.apply_stats(test_ws, stats)
    weights = nn.class_weights_from(train_ws)
    config = _train_config_from(raw, weights)
    architecture = raw.get("architecture")
    if architecture is None:
        dropout = float(raw.get("dropout", 0.3))
        architecture = [
            {**d, "rate": dropout} if d["kind"] == "dropout" else d
            for d in nn.DEFAULT_ARCHITECTURE
        ]
    input_shape = (meta.window_len, 3)
    model = nn.build_model(architecture, input_shape=input_shape, seed=config.seed)
    model, history = nn.train(model, train_std, val_std, config)
    nn.save_float_model(model, stats, args.out)
    val_rep = nn.evaluate(model, val_std)
    test_rep = nn.evaluate(model, test_std)
    if args.report:
        payload = {
            "history": history,
            "class_weights": [float(w) for w in weights],
            "val": host.report_payload(val_rep, n_windows=len(val_std)),
            "test": host.report_payload(test_rep, n_windows=len(test_std)),
        }
        Path(args.report).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"trained {history['stopped_epoch']} epochs (best {history['best_epoch']})")
    print(f"val accuracy {val_rep.accuracy_overall:.4f}, test accuracy {test_rep.accuracy_overall:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_tune(args) -> int:
    train_ws, val_ws, _, meta = windows.load_corpus(args.windows)
    stats = windows.fit_stats(train_ws)
    train_std = windows.apply_stats(train_ws, stats)
    val_std = windows.apply_stats(val_ws, stats)
    grid = tune.Grid.from_dict(_load_json(args.grid) if args.grid else {})
    weights = nn.class_weights_from(train_ws)
    base = nn.TrainConfig(class_weights=tuple(weights), seed=args.seed)
    result = tune.grid_search(
        grid, train_std, val_std, base, seed=args.seed, input_shape=(meta.window_len, 3)
    )
    tune.save_tune_report(result, args.out)
    if result.best is None:
        print("all grid cells failed", file=sys.stderr)
        return 1
    print(f"best cell: {result.best.config_dict()} "
          f"(val accuracy {result.best.val_accuracy:.4f})")
    print(f"wrote {args.out}")
    return 0


def cmd_export(args) -> int:
    model, stats = nn.load_float_model(args.model)
    train_ws, _, _, _ = windows.load_corpus(args.windows)
    train_std = windows.apply_stats(train_ws, stats)
    frozen = export.freeze(model)
    calib = export.calibrate(frozen, export.calibration_sample(train_std))
    blob = export.pack(frozen, calib, stats, budget=args.budget)
    export.save_packed(blob, args.out)
    print(f"packed model: {len(blob)} bytes (budget {args.budget})")
    print(f"wrote {args.out}")
    return 0


def cmd_device(args) -> int:
    model_bytes = Path(args.model).read_bytes()
    server = micro.DeviceServer(
        model_bytes,
        host=args.host,
        port=args.listen,
        flash_budget=args.flash_budget,
        ram_budget=args.ram_budget,
    )
    print(f"device listening on {server.address[0]}:{server.address[1]}")
    server.serve_forever()
    return 0


def _open_transport(args):
    if args.connect:
        hostname, port = args.connect.rsplit(":", 1)
        return host.TcpTransport(hostname, int(port), timeout=args.timeout)
    model_bytes = Path(args.model).read_bytes()
    return host.InProcessTransport(micro.Device(model_bytes))


def cmd_stream(args) -> int:
    ws = windows.load_split(args.windows, which=args.split)
    transport = _open_transport(args)
    try:
        host.open_session(transport, "classify", timeout=args.timeout)
        log = host.stream_windows(transport, ws, timeout=args.timeout)
    finally:
        transport.close()
    _, payload = host.report(log)
    if args.out:
        host.write_report(payload, args.out)
        print(f"wrote {args.out}")
    print(host.format_report(payload))
    return 0


def cmd_echo_check(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    values = rng.uniform(-1e6, 1e6, size=args.n).astype(np.float32)
    transport = _open_transport(args)
    try:
        host.open_session(transport, "echo", timeout=args.timeout)
        result = host.echo_check(transport, values, timeout=args.timeout)
    finally:
        transport.close()
    if result.passed:
        print(f"echo check PASS: {result.n_values} values incremented bit-exactly")
        return 0
    print(f"echo check FAIL: {result.n_failures} of {result.n_values} mismatched")
    for sent, expected, got in result.failures[:10]:
        print(f"  sent {sent!r} expected {expected!r} got {got!r}")
    return 1


def cmd_evaluate(args) -> int:
    ws = windows.load_split(args.windows, which=args.split)
    magic = Path(args.model).read_bytes()[:4]
    if magic == nn.FLOAT_MAGIC:
        model, stats = nn.load_float_model(args.model)
        std = windows.apply_stats(ws, windows.NormStats(stats.mean, stats.std))
        rep = nn.evaluate(model, std)
    else:
        packed = export.load_packed(args.model)
        predictions = np.array(
            [export.classify_window(packed, ws.values[i])[0] for i in range(len(ws))],
            dtype=np.int64,
        )
        rep = nn.report_from_predictions(predictions, ws.labels)
    payload = host.report_payload(rep, n_windows=len(ws))
    if args.out:
        host.write_report(payload, args.out)
        print(f"wrote {args.out}")
    print(host.format_report(payload))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fogedge",
        description="freezing-of-gait detection pipeline and device simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="clean raw recordings into per-segment CSVs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--channel", default="thigh", choices=[c.value for c in Channel])
    p.add_argument("--exclude", help="JSON of per-trial [start_ms, end_ms) exclusions")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("segment", help="window, split and oversample cleaned CSVs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=windows.WINDOW_LEN)
    p.add_argument("--hop", type=int, default=windows.HOP)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--split", default="0.7,0.15,0.15")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train the CNN on a windows corpus")
    p.add_argument("--windows", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="grid-search hyperparameters")
    p.add_argument("--windows", required=True)
    p.add_argument("--grid")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("export", help="freeze + quantize + pack a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=export.FLASH_MODEL_BUDGET)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("device", help="serve a packed model over TCP")
    p.add_argument("--model", required=True)
    p.add_argument("--listen", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--flash-budget", type=int, default=micro.DEFAULT_FLASH_BUDGET)
    p.add_argument("--ram-budget", type=int, default=micro.DEFAULT_RAM_BUDGET)
    p.set_defaults(func=cmd_device)

    p = sub.add_parser("stream", help="stream windows to a device and report")
    p.add_argument("--model", help="packed model for an in-process device")
    p.add_argument("--connect", help="host:port of a running device server")
    p.add_argument("--windows", required=True)
    p.add_argument("--out")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--timeout", type=float, default=host.DEFAULT_TIMEOUT)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("echo-check", help="verify the byte link end to end")
    p.add_argument("--model", help="packed model for an in-process device")
    p.add_argument("--connect", help="host:port of a running device server")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--timeout", type=float, default=host.DEFAULT_TIMEOUT)
    p.set_defaults(func=cmd_echo_check)

    p = sub.add_parser("evaluate", help="evaluate a float or packed model directly")
    p.add_argument("--model", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--out")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("stream", "echo-check") and not (args.model or args.connect):
        print("one of --model or --connect is required", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
