"""A simulated memory-constrained device running the packed model.

The device owns a flash budget (holding the model blob plus a fixed
runtime cost) and a RAM arena from which every inference-time buffer is
allocated. Bytes arrive one at a time over a serial-style link:

    ready        device emits 0xA5 once after a successful init
    mode select  first byte: 0x45 echo, 0x43 classify, anything else
                 answers NAK 0x15 and leaves the mode unset
    echo         every 4 bytes form a little-endian float32; the device
                 replies with (value + 1.0) as 4 little-endian bytes
    classify     bytes fill a fixed float32 window buffer (read state);
                 when the 387th value lands the device processes the
                 window (standardize, quantize, int8 inference) and
                 replies [label, prob_uint8], then returns to reading

The protocol is strictly synchronous: every reply is produced by the
push_byte call that completed a frame.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from . import export

logger = logging.getLogger(__name__)

READY_BYTE = 0xA5
NAK_BYTE = 0x15
MODE_ECHO = 0x45
MODE_CLASSIFY = 0x43

DEFAULT_FLASH_BUDGET = 1_048_576
DEFAULT_RAM_BUDGET = 262_144

# Fixed flash cost of the simulated runtime (inference engine + protocol
# handler), charged on top of the model blob. Reported flash usage is
# therefore blob + runtime, mirroring how a real board reports the sketch.
RUNTIME_FLASH_BYTES = 86_352

# Static RAM claimed at init for the protocol state machine and stack.
STATIC_RAM_BYTES = 16_384


class FlashBudgetExceeded(ValueError):
    pass


class BadModel(ValueError):
    pass


class RamBudgetExceeded(RuntimeError):
    pass


class Arena:
    """Byte-counting allocator with a hard budget and a high-water mark."""

    def __init__(self, budget: int):
        self.budget = int(budget)
        self.used = 0
        self.high_water = 0

    def alloc(self, n: int) -> None:
        self.used += int(n)
        if self.used > self.budget:
            raise RamBudgetExceeded(
                f"arena needs {self.used} bytes, budget is {self.budget}"
            )
        self.high_water = max(self.high_water, self.used)

    def free(self, n: int) -> None:
        self.used -= int(n)
        assert self.used >= 0, "arena freed more than it allocated"


@dataclass
class MemoryReport:
    flash_used: int
    flash_pct: float
    ram_high_water: int
    ram_pct: float


class Device:
    """One simulated microcontroller instance."""

    def __init__(
        self,
        model_bytes: bytes,
        flash_budget: int = DEFAULT_FLASH_BUDGET,
        ram_budget: int = DEFAULT_RAM_BUDGET,
    ):
        try:
            self.model = export.unpack(model_bytes)
        except ValueError as exc:
            raise BadModel(f"model blob rejected: {exc}") from exc
        self.flash_budget = int(flash_budget)
        self.flash_used = len(model_bytes) + RUNTIME_FLASH_BYTES
        if self.flash_used > self.flash_budget:
            raise FlashBudgetExceeded(
                f"model + runtime need {self.flash_used} bytes of flash, "
                f"budget is {self.flash_budget}"
            )
        length, channels = self.model.input_shape
        self.frame_values = length * channels
        self.arena = Arena(ram_budget)
        self.arena.alloc(STATIC_RAM_BYTES)
        self._input_buffer = np.zeros(self.frame_values, dtype=np.float32)
        self.arena.alloc(self._input_buffer.nbytes)
        self.mode: str | None = None  # None until the mode byte arrives
        self.state = "read"
        self.fill_count = 0
        self._word = bytearray()
        self._pending = bytearray([READY_BYTE])

    def take_output(self) -> bytes:
        """Drain bytes the device has emitted but nobody has read yet."""
        out = bytes(self._pending)
        self._pending.clear()
        return out

    def push_byte(self, b: int) -> bytes:
        """Feed one byte; returns everything the device emits in response."""
        if not (0 <= b <= 255):
            raise ValueError(f"byte out of range: {b}")
        if self.mode is None:
            if b == MODE_ECHO:
                self.mode = "echo"
            elif b == MODE_CLASSIFY:
                self.mode = "classify"
            else:
                self._pending.append(NAK_BYTE)
            return self.take_output()
        self._word.append(b)
        if len(self._word) < 4:
            return self.take_output()
        value = np.frombuffer(bytes(self._word), dtype="<f4")[0]
        self._word.clear()
        if self.mode == "echo":
            reply = value + np.float32(1.0)  # float32 arithmetic, bit-exact
            self._pending += struct.pack("<f", float(reply))
        else:
            self._input_buffer[self.fill_count] = value
            self.fill_count += 1
            if self.fill_count == self.frame_values:
                self.state = "process"
                self._pending += self._process_window()
                self.fill_count = 0
                self.state = "read"
        return self.take_output()

    def _process_window(self) -> bytes:
        raw = self._input_buffer.reshape(self.model.input_shape)
        n_bad = int((~np.isfinite(raw)).sum())
        if n_bad:
            logger.warning("window contained %d non-finite values; clamped to 0", n_bad)
        # transient buffers: standardized float32 + quantized int8 window
        self.arena.alloc(self.frame_values * 4)
        std = export.standardize_for_input(self.model, raw)
        self.arena.alloc(self.frame_values)
        q = export.quantize(std, self.model.input_qp)
        label, prob = export.quantized_forward(self.model, q, arena=self.arena)
        self.arena.free(self.frame_values)
        self.arena.free(self.frame_values * 4)
        return bytes([label, prob])

    def memory_report(self) -> MemoryReport:
        return MemoryReport(
            flash_used=self.flash_used,
            flash_pct=100.0 * self.flash_used / self.flash_budget,
            ram_high_water=self.arena.high_water,
            ram_pct=100.0 * self.arena.high_water / self.arena.budget,
        )


class DeviceServer:
    """Serves the device byte protocol over localhost TCP.

    Each accepted connection talks to a fresh Device (like re-plugging a
    board); connections are handled one at a time because the device is
    strictly single-threaded.
    """

    def __init__(
        self,
        model_bytes: bytes,
        host: str = "127.0.0.1",
        port: int = 0,
        flash_budget: int = DEFAULT_FLASH_BUDGET,
        ram_budget: int = DEFAULT_RAM_BUDGET,
    ):
        Device(model_bytes, flash_budget, ram_budget)  # fail fast on a bad model
        self.model_bytes = model_bytes
        self.flash_budget = flash_budget
        self.ram_budget = ram_budget
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._sock.getsockname()[:2]
        return host, port

    def start(self) -> "DeviceServer":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def _run(self) -> None:
        # polling timeouts: a close() from stop() does not wake a blocked
        # accept()/recv() on all platforms
        self._sock.settimeout(0.1)
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with conn:
                try:
                    self._handle(conn)
                except (ConnectionError, OSError):
                    pass

    def _handle(self, conn: socket.socket) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.settimeout(0.1)
        device = Device(self.model_bytes, self.flash_budget, self.ram_budget)
        conn.sendall(device.take_output())
        while not self._stop.is_set():
            try:
                data = conn.recv(4096)
            except socket.timeout:
                continue
            if not data:
                return
            out = bytearray()
            for b in data:
                out += device.push_byte(b)
            if out:
                conn.sendall(bytes(out))

    def stop(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def serve_forever(self) -> None:
        self.start()
        assert self._thread is not None
        try:
            self._thread.join()
        except KeyboardInterrupt:
            self.stop()
