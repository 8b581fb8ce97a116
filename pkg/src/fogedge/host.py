"""Host-side streaming: drive a device, collect replies, build reports.

Flow control is stop-and-wait: one window is in flight at a time, and the
host blocks (with a timeout) for the 2-byte reply before sending the next
window. Transports carry the identical byte stream whether the device is
in-process or behind a TCP socket.
"""

from __future__ import annotations

import json
import socket
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .micro import Device, MODE_CLASSIFY, MODE_ECHO, NAK_BYTE, READY_BYTE
from .nn import EvalReport, report_from_predictions
from .windows import WindowSet

DEFAULT_TIMEOUT = 5.0  # seconds per reply


class TransportTimeout(TimeoutError):
    pass


class ShortReply(ConnectionError):
    pass


class ProtocolError(ValueError):
    pass


class InProcessTransport:
    """Byte channel wrapping a Device directly; replies are synchronous."""

    def __init__(self, device: Device):
        self.device = device
        self._rx = bytearray(device.take_output())

    def send(self, data: bytes) -> None:
        for b in data:
            self._rx += self.device.push_byte(b)

    def recv(self, n: int, timeout: float = DEFAULT_TIMEOUT) -> bytes:
        # synchronous device: anything it will ever send is already here
        if len(self._rx) < n:
            raise TransportTimeout(f"wanted {n} bytes, device produced {len(self._rx)}")
        out = bytes(self._rx[:n])
        del self._rx[:n]
        return out

    def close(self) -> None:
        pass


class TcpTransport:
    """Byte channel over a localhost TCP connection to a device server."""

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        # small stop-and-wait frames: disable Nagle or every reply eats a
        # delayed-ACK round trip
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv(self, n: int, timeout: float = DEFAULT_TIMEOUT) -> bytes:
        deadline = time.monotonic() + timeout
        buf = bytearray()
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportTimeout(f"wanted {n} bytes, got {len(buf)} before timeout")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout:
                raise TransportTimeout(f"wanted {n} bytes, got {len(buf)} before timeout")
            if not chunk:
                raise ShortReply(f"connection closed after {len(buf)} of {n} bytes")
            buf += chunk
        return bytes(buf)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def open_session(transport, mode: str, timeout: float = DEFAULT_TIMEOUT) -> None:
    """Consume the ready byte and select echo or classify mode."""
    ready = transport.recv(1, timeout)
    if ready[0] != READY_BYTE:
        raise ProtocolError(f"expected ready byte 0x{READY_BYTE:02X}, got 0x{ready[0]:02X}")
    transport.send(bytes([MODE_ECHO if mode == "echo" else MODE_CLASSIFY]))


@dataclass
class EchoReport:
    n_values: int
    n_failures: int
    failures: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.n_failures == 0


def echo_check(transport, values, timeout: float = DEFAULT_TIMEOUT) -> EchoReport:
    """Send float32 values; pass iff every reply is value + 1.0 bit-exactly."""
    failures = []
    n = 0
    for v in values:
        v32 = np.float32(v)
        transport.send(struct.pack("<f", float(v32)))
        reply = transport.recv(4, timeout)
        expected = v32 + np.float32(1.0)
        if reply != struct.pack("<f", float(expected)):
            got = struct.unpack("<f", reply)[0]
            failures.append((float(v32), float(expected), float(got)))
        n += 1
    return EchoReport(n_values=n, n_failures=len(failures), failures=failures[:32])


@dataclass
class StreamEntry:
    origin: tuple
    true_label: int
    device_label: int
    prob_uint8: int
    round_trip_ms: float


@dataclass
class StreamLog:
    entries: list[StreamEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def stream_windows(transport, ws: WindowSet, timeout: float = DEFAULT_TIMEOUT) -> StreamLog:
    """Stream each window's raw float32 values and await the 2-byte reply.

    The device standardizes and quantizes on its side, so windows are sent
    exactly as segmented (unstandardized), time-major, little-endian.
    """
    log = StreamLog()
    for i in range(len(ws)):
        payload = ws.values[i].astype("<f4").tobytes()
        t0 = time.perf_counter()
        transport.send(payload)
        reply = transport.recv(2, timeout)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        log.entries.append(
            StreamEntry(
                origin=ws.origins[i],
                true_label=int(ws.labels[i]),
                device_label=reply[0],
                prob_uint8=reply[1],
                round_trip_ms=elapsed_ms,
            )
        )
    return log


def report(log: StreamLog) -> tuple[EvalReport, dict]:
    """Confusion matrix + latency percentiles for one streaming session."""
    predictions = np.array([e.device_label for e in log.entries], dtype=np.int64)
    labels = np.array([e.true_label for e in log.entries], dtype=np.int64)
    ev = report_from_predictions(predictions, labels)
    latencies = np.array([e.round_trip_ms for e in log.entries], dtype=np.float64)
    if len(latencies):
        lat = {
            "p50": float(np.percentile(latencies, 50)),
            "p95": float(np.percentile(latencies, 95)),
            "max": float(latencies.max()),
        }
    else:
        lat = {"p50": 0.0, "p95": 0.0, "max": 0.0}
    payload = report_payload(ev, n_windows=len(log.entries), latency_ms=lat)
    return ev, payload


def report_payload(ev: EvalReport, n_windows: int, latency_ms=None) -> dict:
    def _num(v):
        return float(v) if np.isfinite(v) else None  # class absent -> undefined

    return {
        "confusion": [[ev.tn, ev.fp], [ev.fn, ev.tp]],
        "accuracy": _num(ev.accuracy_overall),
        "per_class": [_num(ev.accuracy_per_class[0]), _num(ev.accuracy_per_class[1])],
        "latency_ms": latency_ms or {"p50": 0.0, "p95": 0.0, "max": 0.0},
        "n_windows": int(n_windows),
    }


def format_report(payload: dict) -> str:
    (tn, fp), (fn, tp) = payload["confusion"]
    lat = payload["latency_ms"]

    def fmt(v):
        return f"{v:.4f}" if v is not None else "n/a"

    lines = [
        f"windows evaluated : {payload['n_windows']}",
        f"overall accuracy  : {fmt(payload['accuracy'])}",
        f"no-FoG accuracy   : {fmt(payload['per_class'][0])}",
        f"FoG accuracy      : {fmt(payload['per_class'][1])}",
        "confusion matrix  :        pred 0   pred 1",
        f"           true 0 : {tn:>12d} {fp:>8d}",
        f"           true 1 : {fn:>12d} {tp:>8d}",
        f"latency ms        : p50 {lat['p50']:.2f}  p95 {lat['p95']:.2f}  max {lat['max']:.2f}",
    ]
    return "\n".join(lines)


def write_report(payload: dict, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
