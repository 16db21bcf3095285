"""Synchronous parameter-server SGD simulator.

Each step, every worker computes its minibatch gradient, solves the
quantization levels for its buckets, quantizes, and sends the encoded
bytes to the server. The server decodes all messages, averages the
dequantized gradients, and broadcasts the average back (full precision
by default, re-quantized when ``server_requantize`` is set). All
workers then apply the same update, so parameters stay bitwise
identical across workers.

Workers run as real threads and the server as the calling thread; they
exchange serialized frames over in-process channels (queues by default,
a loopback socket pair as an alternative). Every random choice is keyed
by (role, step, worker, bucket), so results do not depend on thread
scheduling. Minibatch indices are keyed by step only and then split
across workers, which makes the aggregate batch independent of the
worker count.
"""

from __future__ import annotations

import csv
import queue
import socket
import struct
import threading
from dataclasses import dataclass, fields

import numpy as np

from . import codec
from .levels import BINARY_SCHEMES, solve_for_scheme
from .models import make_model
from .quantize import (
    QuantizedBucket,
    RngStream,
    dequantize,
    quantize_with_scheme,
)
from .tensorcore import GradientBuffer, bucketize, clip

__all__ = [
    "SimConfig",
    "StepMetrics",
    "SimResult",
    "SimError",
    "run_sim",
    "model_gradient",
    "lr_at",
    "batch_for_step",
    "write_metrics_csv",
    "METRICS_COLUMNS",
]

SCHEMES = ("fp", "orq", "qsgd", "terngrad", "linear",
           "bingrad_b", "bingrad_pb", "signsgd")

# stream roles for key derivation
_ROLE_BATCH = 1
_ROLE_QUANT = 2
_ROLE_SERVER = 3


@dataclass(frozen=True)
class SimConfig:
    scheme: str = "fp"
    s: int = 3
    d: int = 2048
    workers: int = 1
    steps: int = 100
    batch_size: int = 32          # aggregate batch, split evenly across workers
    lr: float = 0.1
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 0.1
    warmup_epochs: int = 0
    momentum: float = 0.0
    clip: float | None = None
    bingrad_refine: int = 0
    seed: int = 0
    model: str = "quadratic"
    model_dim: int = 8
    n_samples: int = 256
    noise: float = 0.1
    separation: float = 2.0
    server_requantize: bool = False
    transport: str = "queue"

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme in ("orq", "qsgd", "linear") and self.s < 2:
            raise ValueError("need at least two levels")
        if self.workers < 1 or self.steps < 1 or self.d < 1:
            raise ValueError("workers, steps, and bucket size must be positive")
        if self.batch_size < 1 or self.batch_size > self.n_samples:
            raise ValueError("batch size must be in [1, n_samples]")
        if self.batch_size % self.workers != 0:
            raise ValueError("batch size must divide evenly across workers")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clipping factor must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.transport not in ("queue", "socket"):
            raise ValueError("transport must be 'queue' or 'socket'")


@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss: float
    quant_mse: float
    bits_per_element: float
    grad_norm: float
    clamp_events: int
    lr: float


@dataclass
class SimResult:
    metrics: list[StepMetrics]
    params: np.ndarray
    worker_params: list[np.ndarray]
    final_loss: float
    config: SimConfig


class SimError(RuntimeError):
    def __init__(self, step: int, message: str) -> None:
        super().__init__(f"step {step}: {message}")
        self.step = step


def lr_at(cfg: SimConfig, t: int) -> float:
    """Step decay with optional linear warm-up from a tenth of the base."""
    spe = max(1, cfg.n_samples // cfg.batch_size)
    epoch = t // spe
    if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
        frac = (t + 1) / (cfg.warmup_epochs * spe)
        return cfg.lr * (0.1 + 0.9 * frac)
    n_decays = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.lr * cfg.decay_factor**n_decays


def batch_for_step(cfg: SimConfig, n: int, t: int) -> np.ndarray:
    """Aggregate minibatch for step t; worker k takes its contiguous slice."""
    gen = RngStream(cfg.seed).derive(_ROLE_BATCH, t).generator
    return gen.choice(n, size=cfg.batch_size, replace=False)


def model_gradient(model, x: np.ndarray, idx: np.ndarray) -> GradientBuffer:
    """Analytic minibatch gradient as a 32-bit buffer."""
    return GradientBuffer(model.minibatch_grad(x, idx))


def _table_size(scheme: str, s: int) -> int:
    return 2 if scheme in BINARY_SCHEMES else s


def _compress(g64: np.ndarray, cfg: SimConfig, rng: RngStream) -> tuple[bytes, float, int]:
    """Quantize and encode one worker gradient; returns (frame, mse, clamps)."""
    buf = GradientBuffer(g64)
    views = bucketize(buf, cfg.d)
    buckets: list[QuantizedBucket] = []
    sq_err = 0.0
    clamps = 0
    for i, view in enumerate(views):
        vals = clip(view, cfg.clip) if cfg.clip is not None else view.values
        lv = solve_for_scheme(cfg.scheme, vals, cfg.s, refine_iters=cfg.bingrad_refine)
        q = quantize_with_scheme(cfg.scheme, vals, lv, rng.derive(i))
        buckets.append(q)
        diff = view.values.astype(np.float64) - dequantize(q).astype(np.float64)
        sq_err += float(diff @ diff)
        clamps += q.clamped
    msg = codec.encode(buckets, cfg.d, pad_to=_table_size(cfg.scheme, cfg.s))
    return msg.data, sq_err / len(buf), clamps


def _decode_gradient(raw: bytes) -> np.ndarray:
    if codec.peek_scheme(raw) == "fp":
        return codec.parse_fp_frame(raw)
    parts = [dequantize(b).astype(np.float64) for b in codec.decode(raw)]
    return np.concatenate(parts)


# Worker -> server frames: 1 status byte, then either an error string or
# metrics sidecar (mse float64, clamp count u32) followed by the wire message.
_REPORT = struct.Struct("<dI")


def _pack_report(raw: bytes, mse: float, clamps: int) -> bytes:
    return b"G" + _REPORT.pack(mse, clamps) + raw


def _unpack_report(frame: bytes) -> tuple[bytes, float, int]:
    if frame[:1] == b"E":
        raise RuntimeError(frame[1:].decode("utf-8", "replace"))
    if frame[:1] != b"G":
        raise RuntimeError("malformed worker frame")
    mse, clamps = _REPORT.unpack_from(frame, 1)
    return frame[1 + _REPORT.size :], mse, clamps


class _QueueChannel:
    """Unidirectional in-process byte channel."""

    def __init__(self) -> None:
        self._q: queue.Queue = queue.Queue()

    def send(self, data: bytes | None) -> None:
        self._q.put(data)

    def recv(self) -> bytes | None:
        return self._q.get()

    def close(self) -> None:
        pass


class _SocketChannel:
    """The same interface over a loopback socket pair, length-prefixed."""

    _SENTINEL = 0xFFFFFFFFFFFFFFFF

    def __init__(self) -> None:
        self._tx, self._rx = socket.socketpair()

    def send(self, data: bytes | None) -> None:
        if data is None:
            self._tx.sendall(struct.pack("<Q", self._SENTINEL))
        else:
            self._tx.sendall(struct.pack("<Q", len(data)) + data)

    def recv(self) -> bytes | None:
        size = struct.unpack("<Q", self._read(8))[0]
        if size == self._SENTINEL:
            return None
        return self._read(size)

    def _read(self, n: int) -> bytes:
        chunks = []
        while n > 0:
            chunk = self._rx.recv(min(n, 1 << 20))
            if not chunk:
                raise RuntimeError("channel closed unexpectedly")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        self._tx.close()
        self._rx.close()


def _make_channel(transport: str):
    return _SocketChannel() if transport == "socket" else _QueueChannel()


def _worker_loop(k: int, cfg: SimConfig, model, x0: np.ndarray,
                 up, down, out: list) -> None:
    root = RngStream(cfg.seed)
    per_worker = cfg.batch_size // cfg.workers
    x = x0.copy()
    velocity = np.zeros_like(x)
    try:
        for t in range(cfg.steps):
            idx = batch_for_step(cfg, model.n_samples, t)
            idx_k = idx[k * per_worker : (k + 1) * per_worker]
            g = model.minibatch_grad(x, idx_k)
            if cfg.scheme == "fp":
                frame, mse, clamps = codec.fp_frame(g, cfg.d), 0.0, 0
            else:
                frame, mse, clamps = _compress(g, cfg, root.derive(_ROLE_QUANT, k, t))
            up.send(_pack_report(frame, mse, clamps))
            braw = down.recv()
            if braw is None:
                return
            g_avg = _decode_gradient(braw)
            velocity = cfg.momentum * velocity + g_avg
            x = x - lr_at(cfg, t) * velocity
        out[k] = x
    except Exception as exc:  # noqa: BLE001 - forwarded to the server loop
        try:
            up.send(b"E" + repr(exc).encode())
        except Exception:
            pass


def run_sim(cfg: SimConfig) -> SimResult:
    """Run the synchronous training loop; see the module docstring."""
    cfg.validate()
    model = make_model(cfg.model, dim=cfg.model_dim, n_samples=cfg.n_samples,
                       noise=cfg.noise, separation=cfg.separation, seed=cfg.seed)
    x0 = model.init_params()
    root = RngStream(cfg.seed)
    ups = [_make_channel(cfg.transport) for _ in range(cfg.workers)]
    downs = [_make_channel(cfg.transport) for _ in range(cfg.workers)]
    worker_params: list = [None] * cfg.workers
    threads = [
        threading.Thread(
            target=_worker_loop,
            args=(k, cfg, model, x0, ups[k], downs[k], worker_params),
            daemon=True,
        )
        for k in range(cfg.workers)
    ]
    for th in threads:
        th.start()

    x = x0.copy()
    velocity = np.zeros_like(x)
    metrics: list[StepMetrics] = []

    def _abort(step: int, message: str):
        for ch in downs:
            ch.send(None)
        for ch in ups:  # unblock any worker stuck mid-send on a socket
            ch.close()
        for th in threads:
            th.join()
        raise SimError(step, message)

    try:
        for t in range(cfg.steps):
            loss = model.loss(x)
            if not np.isfinite(loss):
                _abort(t, "non-finite training loss")
            reports = []
            for k in range(cfg.workers):
                frame = ups[k].recv()
                try:
                    reports.append(_unpack_report(frame))
                except RuntimeError as exc:
                    _abort(t, f"worker {k} failed: {exc}")
            try:
                grads = [_decode_gradient(raw) for raw, _, _ in reports]
            except codec.CodecError as exc:
                _abort(t, f"decode failure: {exc}")
            g_avg = np.mean(grads, axis=0)
            if cfg.server_requantize and cfg.scheme != "fp":
                try:
                    braw, _, _ = _compress(g_avg, cfg, root.derive(_ROLE_SERVER, t))
                except ValueError as exc:
                    _abort(t, f"server re-quantization failed: {exc}")
                g_apply = _decode_gradient(braw)
            else:
                braw = codec.fp_frame(g_avg, cfg.d)
                g_apply = g_avg
            for ch in downs:
                ch.send(braw)
            lr = lr_at(cfg, t)
            velocity = cfg.momentum * velocity + g_apply
            x = x - lr * velocity
            metrics.append(
                StepMetrics(
                    step=t,
                    loss=loss,
                    quant_mse=float(np.mean([m for _, m, _ in reports])),
                    bits_per_element=float(
                        np.mean([len(raw) * 8 for raw, _, _ in reports])
                    ) / len(x0),
                    grad_norm=float(np.linalg.norm(g_apply)),
                    clamp_events=int(sum(c for _, _, c in reports)),
                    lr=lr,
                )
            )
        for th in threads:
            th.join()
    finally:
        for ch in ups + downs:
            ch.close()
    return SimResult(
        metrics=metrics,
        params=x,
        worker_params=[p for p in worker_params],
        final_loss=float(model.loss(x)),
        config=cfg,
    )


METRICS_COLUMNS = ["step", "loss", "quant_mse", "bits_per_element",
                   "grad_norm", "clamp_events", "lr"]
METRICS_SCHEMA_VERSION = 1


def write_metrics_csv(path, metrics: list[StepMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for m in metrics:
            writer.writerow([
                m.step, repr(m.loss), repr(m.quant_mse),
                repr(m.bits_per_element), repr(m.grad_norm),
                m.clamp_events, repr(m.lr),
            ])


def config_to_dict(cfg: SimConfig) -> dict:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        out[f.name] = value
    return out
