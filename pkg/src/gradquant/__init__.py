"""Distribution-adaptive gradient quantization toolkit.

Solves quantization levels that adapt to the empirical gradient
distribution (recursive midpoint optimization for multi-level sets,
conditional-mean and symmetric-magnitude rules for binary sets), packs
the result into a bit-exact radix-coded wire format, and replays the
whole pipeline inside a synchronous parameter-server SGD simulator.
Brute-force oracles certify the solvers on small instances.
"""

__version__ = "0.1.0"

from .codec import (
    CodecError,
    RatioReport,
    UnsupportedSchemeError,
    WireMessage,
    decode,
    encode,
    ratio_report,
    symbols_per_word,
)
from .levels import (
    BinaryLevels,
    DegenerateIntervalError,
    LevelSet,
    bingrad_b_levels,
    bingrad_pb_level,
    evenly_spaced_levels,
    linear_cdf_levels,
    orq_levels,
    solve_for_scheme,
    solve_mid_level,
)
from .oracle import OracleResult, brute_force_binary_det, brute_force_rr_levels
from .quantize import (
    OutOfRangeError,
    QuantizedBucket,
    RngStream,
    dequantize,
    expected_rr_mse,
    quantization_mse,
    quantize_bingrad_b,
    quantize_bingrad_pb,
    random_round,
    scaled_signsgd,
)
from .sim import SimConfig, SimError, SimResult, StepMetrics, model_gradient, run_sim
from .tensorcore import (
    BucketStats,
    BucketView,
    GradientBuffer,
    bucketize,
    clip,
    stats,
)

__all__ = [
    "__version__",
    "GradientBuffer", "BucketView", "BucketStats", "bucketize", "stats", "clip",
    "LevelSet", "BinaryLevels", "DegenerateIntervalError",
    "solve_mid_level", "orq_levels", "bingrad_b_levels", "bingrad_pb_level",
    "evenly_spaced_levels", "linear_cdf_levels", "solve_for_scheme",
    "RngStream", "QuantizedBucket", "OutOfRangeError",
    "random_round", "quantize_bingrad_pb", "quantize_bingrad_b",
    "scaled_signsgd", "dequantize", "quantization_mse", "expected_rr_mse",
    "WireMessage", "RatioReport", "CodecError", "UnsupportedSchemeError",
    "encode", "decode", "ratio_report", "symbols_per_word",
    "OracleResult", "brute_force_rr_levels", "brute_force_binary_det",
    "SimConfig", "SimResult", "StepMetrics", "SimError", "run_sim",
    "model_gradient",
]
