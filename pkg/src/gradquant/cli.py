"""Command-line front end.

Subcommands:

* ``levels``: solve and print a level set for a file or synthetic input.
* ``bench``: quantization-error / compression benchmark grid, CSV out.
* ``train``: run the parameter-server simulator from a config file.
* ``codec-check``: wire-format roundtrip and ratio self-test.

Every command writes a run manifest (flat ``key=value`` text) with the
fully resolved configuration; feeding a train manifest back through
``--config`` reproduces the run bit for bit. Underscore-prefixed
manifest keys are metadata and are ignored on re-parse.

The default output directory is ``$GRADQUANT_OUTDIR`` or ``./runs``.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__, codec
from .levels import MidpointSolve, evenly_spaced_levels, orq_depth_for, orq_levels, solve_for_scheme
from .quantize import (
    RngStream,
    dequantize,
    expected_rr_mse,
    quantization_mse,
    quantize_with_scheme,
    wire_table,
)
from .sim import (METRICS_SCHEMA_VERSION, SCHEMES, SimConfig, SimError,
                  config_to_dict, run_sim, write_metrics_csv)
from .synth import DISTRIBUTIONS, sample
from .tensorcore import GradientBuffer, bucketize, stats

_SCHEME_ALIASES = {"ternary": "terngrad", "full": "fp"}
RANDOM_ROUND_SCHEMES = ("orq", "qsgd", "terngrad", "linear")


def _normalize_scheme(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    key = _SCHEME_ALIASES.get(key, key)
    if key not in SCHEMES:
        raise argparse.ArgumentTypeError(
            f"unknown scheme {name!r} (choose from: {', '.join(SCHEMES)})"
        )
    return key


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive number")
    return value


def _outdir(path: str | None) -> str:
    out = path or os.environ.get("GRADQUANT_OUTDIR") or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def write_manifest(path: str, command: str, config: dict,
                   csv_schema: int | None = None) -> None:
    """Flat key=value manifest; sufficient to reproduce the run."""
    lines = [f"_command={command}", f"_artifact_version={__version__}",
             f"_timestamp={time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    if csv_schema is not None:
        lines.append(f"_csv_schema={csv_schema}")
    for key in sorted(config):
        value = config[key]
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_values(path: str) -> np.ndarray:
    """Gradient values from a raw ``.f32`` file or a text file (one per line)."""
    if path.endswith(".f32"):
        data = np.fromfile(path, dtype="<f4")
        if data.size == 0:
            raise SystemExit(f"{path}: no values")
        return data.astype(np.float64)
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise SystemExit(f"{path}:{lineno}: not a number: {text!r}")
    if not values:
        raise SystemExit(f"{path}: no values")
    return np.asarray(values, dtype=np.float64)


def _load_input(args) -> np.ndarray:
    if args.file:
        return read_values(args.file)
    rng = np.random.default_rng(args.seed)
    return sample(args.dist, args.n, rng)


# ---------------------------------------------------------------- levels

def cmd_levels(args) -> int:
    values = _load_input(args)
    scheme = args.scheme
    if scheme == "fp":
        raise SystemExit("the fp scheme has no levels to solve")
    if scheme == "orq":
        orq_depth_for(args.s)  # reject s != 2**K + 1 early, by name
    if args.clip is not None:
        sigma = stats(values).std
        if sigma == 0.0:
            print("warning: zero-variance input, clipping maps everything to 0",
                  file=sys.stderr)
        bound = args.clip * sigma
        values = np.sign(values) * np.minimum(np.abs(values), bound)

    trace: list[MidpointSolve] = []
    if scheme == "orq":
        lv = orq_levels(values, orq_depth_for(args.s), trace=trace)
    else:
        lv = solve_for_scheme(scheme, values, args.s)

    table = wire_table(lv)
    residuals = {round(rec.solved, 12): rec.residual for rec in trace}
    print(f"scheme={scheme} levels={table.size} n={values.size}")
    for i, level in enumerate(table.astype(np.float64)):
        note = ""
        key = round(level, 12)
        if key in residuals:
            note = f"  residual={residuals[key]:.6g}"
        print(f"  level[{i}] = {level:.9g}{note}")

    rng = RngStream(args.seed)
    q = quantize_with_scheme(scheme, values, lv, rng.derive(0))
    mse = (expected_rr_mse(values, table) if scheme in RANDOM_ROUND_SCHEMES
           else quantization_mse(values, q))
    base_s = args.s if scheme in ("orq", "qsgd", "linear") else 3
    baseline = evenly_spaced_levels(float(np.abs(values).max()), base_s)
    base_mse = expected_rr_mse(values, wire_table(baseline))
    print(f"mse={mse:.6g}  evenly_spaced_mse={base_mse:.6g}")

    out = _outdir(args.out)
    write_manifest(os.path.join(out, "levels-manifest.txt"), "levels", {
        "file": args.file or "", "dist": args.dist, "n": args.n,
        "scheme": scheme, "s": args.s, "seed": args.seed,
        "clip": args.clip if args.clip is not None else "",
    })
    return 0


# ----------------------------------------------------------------- bench

def bench_rows(schemes, dists, bucket_sizes, s_values, n, seed, trials):
    """One row per (scheme, s, distribution, bucket size), trials averaged."""
    rows = []
    data = {
        (dist, trial): sample(dist, n, np.random.default_rng([seed, trial, i]))
        for i, dist in enumerate(dists)
        for trial in range(trials)
    }
    for scheme in schemes:
        for s in s_values if scheme in ("orq", "qsgd", "linear") else [_nominal_s(scheme)]:
            for dist in dists:
                for d in bucket_sizes:
                    mses, bits, ratios, theo = [], [], [], []
                    for trial in range(trials):
                        buf = GradientBuffer(data[(dist, trial)])
                        root = RngStream(seed).derive(hash_ints(trial, d, s))
                        mse, msg = _bench_one(scheme, s, buf, d, root)
                        mses.append(mse)
                        report = codec.ratio_report(msg)
                        bits.append(report.bits_per_element)
                        ratios.append(report.achieved_ratio)
                        theo.append(report.theoretical_ratio)
                    rows.append({
                        "scheme": scheme, "s": s, "dist": dist, "d": d,
                        "seed": seed,
                        "mse": float(np.mean(mses)),
                        "bits_per_element": float(np.mean(bits)),
                        "achieved_ratio": float(np.mean(ratios)),
                        "theoretical_ratio": float(np.mean(theo)),
                    })
    return rows


def hash_ints(*parts: int) -> int:
    out = 0
    for p in parts:
        out = (out * 1_000_003 + int(p)) & 0xFFFFFFFF
    return out


def _nominal_s(scheme: str) -> int:
    return 3 if scheme == "terngrad" else 2


def _bench_one(scheme, s, buf, d, root):
    views = bucketize(buf, d)
    buckets = []
    sq_err = 0.0
    for i, view in enumerate(views):
        lv = solve_for_scheme(scheme, view.values, s)
        q = quantize_with_scheme(scheme, view.values, lv, root.derive(i))
        buckets.append(q)
        if scheme in RANDOM_ROUND_SCHEMES:
            sq_err += expected_rr_mse(view.values, q.table) * view.length
        else:
            sq_err += quantization_mse(view.values, q) * view.length
    nominal = 2 if scheme in ("bingrad_b", "bingrad_pb", "signsgd") else s
    msg = codec.encode(buckets, d, pad_to=nominal)
    return sq_err / len(buf), msg


def cmd_bench(args) -> int:
    out = _outdir(args.out)
    schemes = [_normalize_scheme(s) for s in args.schemes]
    rows = bench_rows(schemes, args.dists, args.bucket_sizes, args.s_values,
                      args.n, args.seed, args.trials)
    path = os.path.join(out, "bench.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scheme", "s", "dist", "d", "seed", "mse",
                         "bits_per_element", "achieved_ratio",
                         "theoretical_ratio"])
        for row in rows:
            writer.writerow([row["scheme"], row["s"], row["dist"], row["d"],
                             row["seed"], repr(row["mse"]),
                             repr(row["bits_per_element"]),
                             repr(row["achieved_ratio"]),
                             repr(row["theoretical_ratio"])])
    write_manifest(os.path.join(out, "bench-manifest.txt"), "bench", {
        "schemes": ",".join(schemes), "dists": ",".join(args.dists),
        "bucket_sizes": ",".join(map(str, args.bucket_sizes)),
        "s_values": ",".join(map(str, args.s_values)),
        "n": args.n, "seed": args.seed, "trials": args.trials,
    }, csv_schema=1)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


# ----------------------------------------------------------------- train

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise SystemExit(f"{path}:{lineno}: expected key=value")
            key, _, value = text.partition("=")
            key = key.strip()
            if key.startswith("_"):
                continue  # manifest metadata
            out[key] = value.strip()
    return out


def build_sim_config(raw: dict[str, str]) -> SimConfig:
    known = {f.name: f for f in fields(SimConfig)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise SystemExit(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, text in raw.items():
        if text == "" and key == "clip":
            continue
        kind = known[key].type
        if key == "scheme":
            kwargs[key] = _normalize_scheme(text)
        elif key == "decay_epochs":
            kwargs[key] = tuple(int(v) for v in text.split(",") if v.strip())
        elif key == "clip":
            kwargs[key] = None if text.lower() in ("none", "") else float(text)
        elif kind == "bool" or key == "server_requantize":
            low = text.lower()
            if low in _BOOL_TRUE:
                kwargs[key] = True
            elif low in _BOOL_FALSE:
                kwargs[key] = False
            else:
                raise SystemExit(f"config key {key}: not a boolean: {text!r}")
        elif kind == "int":
            kwargs[key] = int(text)
        elif kind == "float":
            kwargs[key] = float(text)
        else:
            kwargs[key] = text
    return SimConfig(**kwargs)


def cmd_train(args) -> int:
    raw = parse_config_file(args.config) if args.config else {}
    for override in args.set or []:
        if "=" not in override:
            raise SystemExit(f"--set expects key=value, got {override!r}")
        key, _, value = override.partition("=")
        raw[key.strip()] = value.strip()
    if args.scheme is not None:
        raw["scheme"] = args.scheme
    if args.clip is not None:
        raw["clip"] = str(args.clip)
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    if args.workers is not None:
        raw["workers"] = str(args.workers)
    if args.steps is not None:
        raw["steps"] = str(args.steps)
    cfg = build_sim_config(raw)
    try:
        cfg.validate()
    except ValueError as exc:
        raise SystemExit(f"invalid config: {exc}")

    out = _outdir(args.out)
    try:
        result = run_sim(cfg)
    except SimError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 1
    metrics_path = os.path.join(out, "metrics.csv")
    write_metrics_csv(metrics_path, result.metrics)
    write_manifest(os.path.join(out, "train-manifest.txt"), "train",
                   config_to_dict(cfg), csv_schema=METRICS_SCHEMA_VERSION)
    last = result.metrics[-1]
    print(f"wrote {metrics_path}")
    print(f"steps={cfg.steps} final_loss={result.final_loss!r} "
          f"last_step_loss={last.loss!r} bits_per_element={last.bits_per_element:.3f}")
    return 0


# ----------------------------------------------------------- codec-check

def cmd_codec_check(args) -> int:
    failures = 0
    rng = np.random.default_rng(20240)
    for s in (2, 3, 5, 9):
        for total in (1, 2047, 2048, 20487):
            d = 2048
            buckets = _random_buckets(rng, total, d, s)
            msg = codec.encode(buckets, d)
            decoded = codec.decode(msg)
            ok = len(decoded) == len(buckets) and all(
                np.array_equal(a.indices, b.indices)
                and np.array_equal(a.table, b.table)
                for a, b in zip(buckets, decoded)
            )
            status = "PASS" if ok else "FAIL"
            if not ok:
                failures += 1
            print(f"roundtrip s={s} D={total}: {status}")
        report = codec.ratio_report(codec.encode(_random_buckets(rng, 65536, 2048, s), 2048))
        within = report.achieved_ratio <= report.theoretical_ratio
        print(f"ratio s={s}: achieved=x{report.achieved_ratio:.2f} "
              f"theoretical=x{report.theoretical_ratio:.2f} "
              f"bits/elem={report.bits_per_element:.3f} "
              f"{'PASS' if within else 'FAIL'}")
        if not within:
            failures += 1
    out = _outdir(args.out)
    write_manifest(os.path.join(out, "codec-check-manifest.txt"),
                   "codec-check", {"seed": 20240})
    print("codec-check:", "PASS" if failures == 0 else f"FAIL ({failures})")
    return 0 if failures == 0 else 1


def _random_buckets(rng, total, d, s):
    from .levels import LevelSet
    from .quantize import QuantizedBucket

    buckets = []
    start = 0
    while start < total:
        length = min(d, total - start)
        levels = np.unique(
            np.sort(rng.normal(0, 1, s)).astype(np.float32)
        ).astype(np.float64)
        while levels.size < s:  # regenerate on the (unlikely) float32 collision
            levels = np.unique(rng.normal(0, 1, s).astype(np.float32)).astype(np.float64)
        lv = LevelSet(np.sort(levels), "qsgd")
        indices = rng.integers(0, s, size=length).astype(np.uint16)
        table = lv.levels.astype(np.float32)
        buckets.append(QuantizedBucket(indices, lv, length, table))
        start += length
    return buckets


# ------------------------------------------------------------------ main

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradquant",
        description="Adaptive gradient quantization toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_levels = sub.add_parser("levels", help="solve and print a level set")
    src = p_levels.add_mutually_exclusive_group()
    src.add_argument("--file", help=".f32 raw floats or text, one value per line")
    src.add_argument("--dist", choices=sorted(DISTRIBUTIONS), default="gaussian")
    p_levels.add_argument("--n", type=int, default=100_000)
    p_levels.add_argument("--scheme", type=_normalize_scheme, required=True)
    p_levels.add_argument("--s", type=int, default=3)
    p_levels.add_argument("--seed", type=int, default=0)
    p_levels.add_argument("--clip", type=_positive_float, default=None)
    p_levels.add_argument("--out", default=None)
    p_levels.set_defaults(func=cmd_levels)

    p_bench = sub.add_parser("bench", help="quantization error benchmark grid")
    p_bench.add_argument("--schemes", nargs="+",
                         default=["orq", "qsgd", "linear"])
    p_bench.add_argument("--dists", nargs="+", choices=sorted(DISTRIBUTIONS),
                         default=["gaussian", "laplace", "mixture"])
    p_bench.add_argument("--bucket-sizes", dest="bucket_sizes", type=int,
                         nargs="+", default=[2048])
    p_bench.add_argument("--s-values", dest="s_values", type=int, nargs="+",
                         default=[3, 5, 9])
    p_bench.add_argument("--n", type=int, default=100_000)
    p_bench.add_argument("--trials", type=int, default=3)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_train = sub.add_parser("train", help="run the training simulator")
    p_train.add_argument("--config", help="flat key=value config file")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config key (repeatable)")
    p_train.add_argument("--scheme", type=_normalize_scheme, default=None)
    p_train.add_argument("--clip", type=_positive_float, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--workers", type=int, default=None)
    p_train.add_argument("--steps", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.set_defaults(func=cmd_train)

    p_codec = sub.add_parser("codec-check", help="wire format self-test")
    p_codec.add_argument("--out", default=None)
    p_codec.set_defaults(func=cmd_codec_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
