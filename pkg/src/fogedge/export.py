"""Freezing, post-training int8 quantization, and the deployable blob.

The packed file is a self-contained inference artifact: it carries the
z-score statistics, the affine quantization parameters for the input, the
output and every intermediate activation, int8 weights and int32 biases.
All rounding is half-away-from-zero so the host-side reference and the
simulated device agree bit-exactly.

Integer inference follows the usual int8 scheme: accumulate
(q_x - zero_in) * q_w into 32-bit integers, add the bias (pre-scaled by
input_scale * weight_scale), then requantize to the next tensor's
parameters with a fixed-point multiplier. ReLU and max pooling act
directly on the quantized values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import BadMagic, BadVersion, Reader, UnexpectedEOF, Writer  # noqa: F401
from .nn import KIND_CONV, KIND_DENSE, KIND_POOL, Conv1D, Dense, Dropout, MaxPool1D, Model, softmax
from .windows import NormStats, WindowSet

PACKED_MAGIC = b"FOGM"
PACKED_VERSION = 1

FLASH_MODEL_BUDGET = 1_048_576  # bytes

DEGENERATE_SCALE = 1e-6  # used when a calibrated tensor has zero range

CALIB_WINDOWS = 100
CALIB_SEED = 42


class SizeBudgetExceeded(ValueError):
    pass


class EmptyCalibrationSet(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar quantization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int  # in [-128, 127]


def round_half_away(x):
    """Round to nearest with halves away from zero (numpy rounds to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def affine_params(lo: float, hi: float) -> QuantParams:
    """Affine parameters mapping the observed [lo, hi] onto int8."""
    if hi < lo:
        raise ValueError("range must have hi >= lo")
    scale = (hi - lo) / 255.0 if hi > lo else DEGENERATE_SCALE
    zp = int(round_half_away(-128.0 - lo / scale))
    return QuantParams(scale=scale, zero_point=int(np.clip(zp, -128, 127)))


def symmetric_weight_params(weights: np.ndarray) -> QuantParams:
    peak = float(np.max(np.abs(weights))) if weights.size else 0.0
    scale = peak / 127.0 if peak > 0.0 else DEGENERATE_SCALE
    return QuantParams(scale=scale, zero_point=0)


def quantize(x, qp: QuantParams):
    """clamp(round(x / scale) + zero_point) onto int8."""
    q = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    q = np.clip(q, -128, 127)
    if np.isscalar(x) or np.ndim(x) == 0:
        return int(q)
    return q.astype(np.int8)


def dequantize(q, qp: QuantParams):
    v = (np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale
    if np.isscalar(q) or np.ndim(q) == 0:
        return float(v)
    return v


# ---------------------------------------------------------------------------
# freeze + calibrate
# ---------------------------------------------------------------------------


def freeze(model: Model) -> Model:
    """Strip training-only layers and mark weights constant.

    The frozen model computes exactly the same inference-mode function:
    dropout is identity outside training, and weights are copied verbatim.
    Freezing twice is the same as freezing once.
    """
    layers = []
    for layer in model.layers:
        if isinstance(layer, Dropout):
            continue
        if isinstance(layer, Conv1D):
            layers.append(Conv1D(layer.weights.copy(), layer.bias.copy(), layer.activation))
        elif isinstance(layer, Dense):
            layers.append(Dense(layer.weights.copy(), layer.bias.copy(), layer.activation))
        elif isinstance(layer, MaxPool1D):
            layers.append(MaxPool1D(layer.pool))
        else:
            raise ValueError(f"cannot freeze layer {layer!r}")
    return Model(layers, input_shape=model.input_shape, frozen=True)


@dataclass
class Calibration:
    input_qp: QuantParams
    layer_qps: list[QuantParams]  # output params of each frozen layer

    @property
    def output_qp(self) -> QuantParams:
        return self.layer_qps[-1]


def calibration_sample(train_set: WindowSet, n: int = CALIB_WINDOWS, seed: int = CALIB_SEED) -> WindowSet:
    """A seeded sample of the training split used to observe value ranges."""
    if len(train_set) <= n:
        return train_set
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.choice(len(train_set), size=n, replace=False)
    return train_set.subset(np.sort(idx))


def calibrate(frozen: Model, calib_set: WindowSet) -> Calibration:
    """Observe min/max of the input and every activation on the calibration
    windows (already standardized) and derive per-tensor affine parameters.

    Max pooling reuses its input's parameters so integer pooling is exact.
    A constant tensor falls back to a tiny fixed scale instead of failing.
    """
    if len(calib_set) == 0:
        raise EmptyCalibrationSet("calibration needs at least one window")
    if not frozen.frozen:
        raise ValueError("calibrate expects a frozen model")
    x = calib_set.values
    input_qp = affine_params(float(x.min()), float(x.max()))
    layer_qps: list[QuantParams] = []
    prev_qp = input_qp
    for layer in frozen.layers:
        x, _ = layer.forward(x, training=False)
        if isinstance(layer, MaxPool1D):
            qp = prev_qp
        else:
            qp = affine_params(float(x.min()), float(x.max()))
        layer_qps.append(qp)
        prev_qp = qp
    return Calibration(input_qp=input_qp, layer_qps=layer_qps)


# ---------------------------------------------------------------------------
# packed model
# ---------------------------------------------------------------------------


@dataclass
class QConv:
    kernel: int
    c_in: int
    filters: int
    out_qp: QuantParams
    weight_scale: float
    weights: np.ndarray  # (K, C_in, F) int8
    bias: np.ndarray     # (F,) int32, scaled by in_scale * weight_scale


@dataclass
class QPool:
    pool: int
    out_qp: QuantParams


@dataclass
class QDense:
    d_in: int
    d_out: int
    out_qp: QuantParams
    weight_scale: float
    weights: np.ndarray  # (D_in, D_out) int8
    bias: np.ndarray     # (D_out,) int32


@dataclass
class PackedModel:
    input_shape: tuple[int, int]
    stats: NormStats
    input_qp: QuantParams
    output_qp: QuantParams
    layers: list

    @property
    def total_size_bytes(self) -> int:
        return len(serialize(self))


def build_packed(frozen: Model, calib: Calibration, stats: NormStats) -> PackedModel:
    if not frozen.frozen:
        raise ValueError("pack expects a frozen model (no dropout, constant weights)")
    layers = []
    in_qp = calib.input_qp
    for layer, out_qp in zip(frozen.layers, calib.layer_qps):
        if isinstance(layer, Conv1D):
            if layer.activation != "relu":
                raise ValueError("packed convolutions must use ReLU")
            wqp = symmetric_weight_params(layer.weights)
            k, c_in, f = layer.weights.shape
            bias_scale = in_qp.scale * wqp.scale
            layers.append(
                QConv(
                    kernel=k,
                    c_in=c_in,
                    filters=f,
                    out_qp=out_qp,
                    weight_scale=wqp.scale,
                    weights=quantize(layer.weights, wqp),
                    bias=round_half_away(layer.bias / bias_scale).astype(np.int32),
                )
            )
        elif isinstance(layer, MaxPool1D):
            layers.append(QPool(pool=layer.pool, out_qp=out_qp))
        elif isinstance(layer, Dense):
            if layer.activation is not None:
                raise ValueError("the packed dense head must emit raw logits")
            wqp = symmetric_weight_params(layer.weights)
            d_in, d_out = layer.weights.shape
            bias_scale = in_qp.scale * wqp.scale
            layers.append(
                QDense(
                    d_in=d_in,
                    d_out=d_out,
                    out_qp=out_qp,
                    weight_scale=wqp.scale,
                    weights=quantize(layer.weights, wqp),
                    bias=round_half_away(layer.bias / bias_scale).astype(np.int32),
                )
            )
        else:
            raise ValueError(f"cannot pack layer {layer!r}")
        in_qp = out_qp
    return PackedModel(
        input_shape=frozen.input_shape,
        stats=stats,
        input_qp=calib.input_qp,
        output_qp=calib.output_qp,
        layers=layers,
    )


def _write_qp(w: Writer, qp: QuantParams) -> None:
    w.f32(qp.scale)
    w.i32(qp.zero_point)


def _read_qp(r: Reader) -> QuantParams:
    return QuantParams(scale=r.f32(), zero_point=r.i32())


def serialize(packed: PackedModel) -> bytes:
    w = Writer()
    w.magic(PACKED_MAGIC)
    w.u32(PACKED_VERSION)
    w.u32(len(packed.layers))
    w.u32(packed.input_shape[0])
    w.u32(packed.input_shape[1])
    w.f32s(packed.stats.mean)
    w.f32s(packed.stats.std)
    _write_qp(w, packed.input_qp)
    _write_qp(w, packed.output_qp)
    for layer in packed.layers:
        if isinstance(layer, QConv):
            w.u8(KIND_CONV)
            w.u32(layer.kernel), w.u32(layer.c_in), w.u32(layer.filters)
            _write_qp(w, layer.out_qp)
            w.f32(layer.weight_scale)
            w.i8s(layer.weights.reshape(-1))
            w.i32s(layer.bias)
        elif isinstance(layer, QPool):
            w.u8(KIND_POOL)
            w.u32(layer.pool)
            _write_qp(w, layer.out_qp)
        elif isinstance(layer, QDense):
            w.u8(KIND_DENSE)
            w.u32(layer.d_in), w.u32(layer.d_out)
            _write_qp(w, layer.out_qp)
            w.f32(layer.weight_scale)
            w.i8s(layer.weights.reshape(-1))
            w.i32s(layer.bias)
        else:
            raise ValueError(f"cannot serialize layer {layer!r}")
    return w.getvalue()


def unpack(data: bytes) -> PackedModel:
    r = Reader(data, where="packed model")
    r.expect_magic(PACKED_MAGIC)
    r.expect_version(PACKED_VERSION)
    n_layers = r.u32()
    input_shape = (r.u32(), r.u32())
    stats = NormStats(mean=r.f32s(3).astype(np.float64), std=r.f32s(3).astype(np.float64))
    input_qp = _read_qp(r)
    output_qp = _read_qp(r)
    layers = []
    for _ in range(n_layers):
        kind = r.u8()
        if kind == KIND_CONV:
            k, c_in, f = r.u32(), r.u32(), r.u32()
            out_qp = _read_qp(r)
            w_scale = r.f32()
            weights = r.i8s(k * c_in * f).reshape(k, c_in, f)
            bias = r.i32s(f)
            layers.append(QConv(k, c_in, f, out_qp, w_scale, weights, bias))
        elif kind == KIND_POOL:
            pool = r.u32()
            out_qp = _read_qp(r)
            layers.append(QPool(pool, out_qp))
        elif kind == KIND_DENSE:
            d_in, d_out = r.u32(), r.u32()
            out_qp = _read_qp(r)
            w_scale = r.f32()
            weights = r.i8s(d_in * d_out).reshape(d_in, d_out)
            bias = r.i32s(d_out)
            layers.append(QDense(d_in, d_out, out_qp, w_scale, weights, bias))
        else:
            raise BadMagic(f"packed model: unknown layer kind {kind}")
    return PackedModel(input_shape, stats, input_qp, output_qp, layers)


def pack(
    frozen: Model,
    calib: Calibration,
    stats: NormStats,
    budget: int = FLASH_MODEL_BUDGET,
) -> bytes:
    """Quantize and serialize; refuses to emit a blob at or over budget."""
    blob = serialize(build_packed(frozen, calib, stats))
    if len(blob) >= budget:
        raise SizeBudgetExceeded(f"packed model is {len(blob)} bytes, budget {budget}")
    return blob


def packed_size_bytes(model: Model) -> int:
    """Size the packed blob of a model without quantizing it.

    Depends only on layer shapes, so hyperparameter search can rank
    candidate architectures by deployable size.
    """
    total = 4 + 4 + 4 + 8 + 24 + 8 + 8  # magic, version, n_layers, shape, stats, 2 qps
    for layer in model.layers:
        if isinstance(layer, Conv1D):
            k, c_in, f = layer.weights.shape
            total += 1 + 12 + 8 + 4 + k * c_in * f + 4 * f
        elif isinstance(layer, MaxPool1D):
            total += 1 + 4 + 8
        elif isinstance(layer, Dense):
            d_in, d_out = layer.weights.shape
            total += 1 + 8 + 8 + 4 + d_in * d_out + 4 * d_out
        elif isinstance(layer, Dropout):
            continue  # frozen out before packing
        else:
            raise ValueError(f"cannot size layer {layer!r}")
    return total


# ---------------------------------------------------------------------------
# integer inference
# ---------------------------------------------------------------------------


def _quantize_multiplier(m: float) -> tuple[int, int]:
    """Express m as m0 * 2**-(31+shift) with m0 a 31-bit mantissa."""
    if m <= 0.0 or not np.isfinite(m):
        raise ValueError(f"multiplier must be positive and finite, got {m}")
    shift = 0
    while m < 0.5:
        m *= 2.0
        shift += 1
    while m >= 1.0:
        m /= 2.0
        shift -= 1
    m0 = int(round(m * (1 << 31)))
    if m0 == 1 << 31:
        m0 >>= 1
        shift -= 1
    return m0, shift


def _fixed_point_rescale(acc: np.ndarray, m0: int, shift: int) -> np.ndarray:
    """acc * m0 * 2**-(31+shift) rounded half away from zero, in integers."""
    total = 31 + shift
    t = acc.astype(np.int64) * m0
    if total <= 0:
        return t << (-total)
    if total >= 63:
        return np.zeros_like(t)
    offset = np.int64(1) << (total - 1)
    mag = np.abs(t)
    return np.sign(t) * ((mag + offset) >> total)


class _NullArena:
    def alloc(self, n: int) -> None:
        pass

    def free(self, n: int) -> None:
        pass


_HEAD_SCRATCH = 32  # two float64 logits + two probabilities


def quantized_forward(packed: PackedModel, window, arena=None):
    """Run the int8 engine on one already-quantized window.

    ``window`` is int8 with input_shape values (time-major). Returns
    (label, prob_uint8) where prob_uint8 = round(255 * p[label]). Pure
    integer arithmetic up to the final dequantized softmax, so identical
    bytes in always produce identical bytes out. When ``arena`` is given,
    every working buffer is allocated from and returned to it.
    """
    a = arena if arena is not None else _NullArena()
    length, channels = packed.input_shape
    x = np.asarray(window, dtype=np.int8).reshape(length, channels)
    cur_bytes = x.size  # int8 working copy
    a.alloc(cur_bytes)
    x = x.astype(np.int64)
    in_qp = packed.input_qp
    for layer in packed.layers:
        if isinstance(layer, QConv):
            l_out = x.shape[0] - layer.kernel + 1
            acc_bytes = l_out * layer.filters * 4  # int32 accumulators
            a.alloc(acc_bytes)
            xc = x - in_qp.zero_point
            win = np.lib.stride_tricks.sliding_window_view(xc, layer.kernel, axis=0)
            acc = np.tensordot(win, layer.weights.astype(np.int64), axes=((2, 1), (0, 1)))
            acc += layer.bias.astype(np.int64)
            a.free(cur_bytes)
            out_bytes = l_out * layer.filters
            a.alloc(out_bytes)
            m0, shift = _quantize_multiplier(
                in_qp.scale * layer.weight_scale / layer.out_qp.scale
            )
            q = _fixed_point_rescale(acc, m0, shift) + layer.out_qp.zero_point
            q = np.clip(q, -128, 127)
            q = np.maximum(q, layer.out_qp.zero_point)  # ReLU: real 0 sits at zero_point
            a.free(acc_bytes)
            x, cur_bytes, in_qp = q, out_bytes, layer.out_qp
        elif isinstance(layer, QPool):
            n = x.shape[0] // layer.pool
            out_bytes = n * x.shape[1]
            a.alloc(out_bytes)
            out = x[: n * layer.pool].reshape(n, layer.pool, -1).max(axis=1)
            a.free(cur_bytes)
            x, cur_bytes, in_qp = out, out_bytes, layer.out_qp
        elif isinstance(layer, QDense):
            flat = x.reshape(-1) - in_qp.zero_point
            acc_bytes = layer.d_out * 4
            a.alloc(acc_bytes)
            acc = flat @ layer.weights.astype(np.int64) + layer.bias.astype(np.int64)
            out_bytes = layer.d_out
            a.alloc(out_bytes)
            m0, shift = _quantize_multiplier(
                in_qp.scale * layer.weight_scale / layer.out_qp.scale
            )
            q = np.clip(_fixed_point_rescale(acc, m0, shift) + layer.out_qp.zero_point, -128, 127)
            a.free(cur_bytes)
            a.free(acc_bytes)
            x, cur_bytes, in_qp = q, out_bytes, layer.out_qp
        else:
            raise ValueError(f"cannot run layer {layer!r}")
    a.alloc(_HEAD_SCRATCH)
    logits = (x.astype(np.float64) - in_qp.zero_point) * in_qp.scale
    probs = softmax(logits[None])[0]
    label = int(probs.argmax())
    prob_uint8 = int(round_half_away(255.0 * probs[label]))
    a.free(_HEAD_SCRATCH)
    a.free(cur_bytes)
    return label, prob_uint8


def standardize_for_input(packed: PackedModel, raw_window) -> np.ndarray:
    """Z-score one raw window with the header stats, in float32.

    Non-finite inputs are clamped to zero before standardization; the
    device does the same, so host and device agree bit-exactly.
    """
    x = np.asarray(raw_window, dtype=np.float32)
    x = np.where(np.isfinite(x), x, np.float32(0.0))
    mean = packed.stats.mean.astype(np.float32)
    std = packed.stats.std.astype(np.float32)
    return (x.reshape(packed.input_shape) - mean) / std


def prepare_window(packed: PackedModel, raw_window) -> np.ndarray:
    """Standardize + quantize one raw window to the engine's int8 input."""
    return quantize(standardize_for_input(packed, raw_window), packed.input_qp)


def classify_window(packed: PackedModel, raw_window, arena=None):
    """Full device-side pipeline for one raw window."""
    return quantized_forward(packed, prepare_window(packed, raw_window), arena=arena)


def save_packed(blob: bytes, path) -> None:
    Path(path).write_bytes(blob)


def load_packed(path) -> PackedModel:
    return unpack(Path(path).read_bytes())
