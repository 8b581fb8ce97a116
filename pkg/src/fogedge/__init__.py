"""Freezing-of-gait detection, end to end.

Ingest tri-axial thigh acceleration logs, segment them into labeled 2 s
windows, train a small 1-D CNN (implemented from scratch in numpy),
quantize it to int8, pack it under a 1 MB flash budget, and run it inside
a simulated byte-streaming microcontroller.
"""

from .ingest import (
    Channel,
    CleanSeries,
    FileFormat,
    MalformedLine,
    NonMonotonicTime,
    RawRecord,
    Recording,
    clean,
    ingest_dir,
    parse_file,
    select_channel,
)
from .windows import (
    DegenerateAxis,
    EmptyClass,
    InvalidFractions,
    NormStats,
    Window,
    WindowSet,
    apply_stats,
    fit_stats,
    label_window,
    load_window_set,
    oversample_minority,
    save_window_set,
    segment,
    segment_all,
    split,
)
from .nn import (
    Adam,
    EvalReport,
    Model,
    TrainConfig,
    build_model,
    class_weights_from,
    evaluate,
    train,
    weighted_cross_entropy,
)
from .export import (
    PackedModel,
    QuantParams,
    SizeBudgetExceeded,
    calibrate,
    classify_window,
    dequantize,
    freeze,
    pack,
    quantize,
    quantized_forward,
    unpack,
)
from .micro import Arena, Device, DeviceServer, FlashBudgetExceeded, MemoryReport
from .host import (
    InProcessTransport,
    StreamLog,
    TcpTransport,
    echo_check,
    open_session,
    report,
    stream_windows,
)
from .tune import Grid, TuneResult, grid_search

__version__ = "0.1.0"
