#!/usr/bin/env python3
"""Drive the simulated microcontroller byte by byte.

The device receives a packed model at init, answers a ready byte, and then
speaks a tiny serial protocol: an echo mode for link verification and a
classify mode that buffers 387 float32 values (one 2 s window), runs int8
inference on-device, and replies [label, confidence_byte]. The same bytes
work in-process and over TCP.
"""

import struct

import numpy as np

from fogedge import export, host, nn, windows
from fogedge.micro import Device, DeviceServer

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


# --- train + pack a model (same recipe as demo 03) ---------------------------
train_raw = make_set(120, 120, seed=30)
test_raw = make_set(40, 40, seed=31)
stats = windows.fit_stats(train_raw)
train_std = windows.apply_stats(train_raw, stats)
model = nn.build_model(seed=2)
config = nn.TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=10, patience=10, seed=2)
model, _ = nn.train(model, train_std, train_std, config)
frozen = export.freeze(model)
blob = export.pack(frozen, export.calibrate(frozen, export.calibration_sample(train_std)), stats)
print(f"packed model: {len(blob)} bytes")

# --- raw byte-level conversation ---------------------------------------------
device = Device(blob)
print(f"device ready byte: 0x{device.take_output()[0]:02X}")
device.push_byte(0x45)  # 'E' selects echo mode
reply = bytearray()
for b in struct.pack("<f", 41.0):
    reply += device.push_byte(b)
print(f"echo: sent 41.0, got {struct.unpack('<f', bytes(reply))[0]}")

# --- echo check + streaming through the host helpers -------------------------
transport = host.InProcessTransport(Device(blob))
host.open_session(transport, "echo")
echo = host.echo_check(transport, np.float32([1.0, -1.0, 2.5e7]))
print(f"echo check over {echo.n_values} values: {'pass' if echo.passed else 'FAIL'}")

transport = host.InProcessTransport(Device(blob))
host.open_session(transport, "classify")
log = host.stream_windows(transport, test_raw)
ev, payload = host.report(log)
print(f"\nstreamed {len(log)} windows (1548 bytes each, 2-byte replies)")
print(host.format_report(payload))

# --- the device accounts its own memory --------------------------------------
report = transport.device.memory_report()
print(f"\nflash: {report.flash_used} bytes ({report.flash_pct:.1f}% of budget)")
print(f"ram high water: {report.ram_high_water} bytes ({report.ram_pct:.1f}% of budget)")

# --- identical bytes over a real socket ---------------------------------------
server = DeviceServer(blob).start()
try:
    tcp = host.TcpTransport(*server.address)
    host.open_session(tcp, "classify")
    tcp_log = host.stream_windows(tcp, test_raw.subset(np.arange(10)))
    tcp.close()
    same = [(e.device_label, e.prob_uint8) for e in tcp_log.entries] == [
        (e.device_label, e.prob_uint8) for e in log.entries[:10]
    ]
    print(f"\nTCP transport replies identical to in-process: {same}")
finally:
    server.stop()
