"""Command-line front end.

Subcommands: ``decompose`` (run one method on a tensor file), ``synth``
(generate a noisy low-TT-rank dense tensor), ``sampler-selftest`` (empirical
check of the chain sampler against a brute-force oracle) and ``fit`` (score a
stored TT against a tensor).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 self-test
failure.  The environment variable ``TT_THREADS`` caps BLAS worker threads
when set before the process imports numpy (the package honors it on import).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from .als import AlsConfig, rtt_als, tt_als
from .io import FormatError, parse_frostt, read_dtb, read_ttb, write_dtb, write_ttb
from .sampler import build_chain_sampler, chain_sample_left, empirical_histogram
from .synth import synth_dense
from .tensors import DenseTensor, fit
from .ttcore import (
    StateError,
    chain_matrix,
    random_left_orthonormal_chain,
    tt_random,
)
from .ttsvd import SvdConfig, rtt_svd, tt_svd

METHODS = ("tt-svd", "rtt-svd", "tt-als", "rtt-als")
INITS = ("random", "tt-svd", "rtt-svd")
SELFTEST_ORACLE_CAP = 1_000_000


class ConfigError(ValueError):
    """Invalid combination of command-line options."""


@dataclass
class RunConfig:
    input: str
    format: str
    method: str
    rank: int | None = None
    ranks: list[int] | None = None
    sweeps: int = 10
    samples: int | None = None
    seed: int = 0
    init: str | None = None
    dims: list[int] | None = None
    trace: str | None = None
    output: str | None = None

    def validate(self) -> None:
        if self.format not in ("frostt", "dtb"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.rank is None and self.ranks is None:
            raise ConfigError("one of --rank or --ranks is required")
        if self.method == "rtt-als" and self.samples is None:
            raise ConfigError("--samples is required for rtt-als")
        if self.format == "frostt" and self.method in ("tt-svd", "rtt-svd"):
            raise ConfigError(f"{self.method} requires a dense input")
        if self.init is not None:
            if self.init not in INITS:
                raise ConfigError(f"unknown init {self.init!r}")
            if self.format == "frostt" and self.init in ("tt-svd", "rtt-svd"):
                raise ConfigError(f"init {self.init} requires a dense input")
        if self.sweeps < 1:
            raise ConfigError("--sweeps must be at least 1")


@dataclass
class RunSummary:
    final_fit: float
    total_seconds: float
    per_sweep_seconds: float
    method: str
    ranks: list[int]
    samples: int | None
    seed: int
    input_digest: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_input(cfg: RunConfig):
    if cfg.format == "dtb":
        return read_dtb(cfg.input)
    return parse_frostt(cfg.input, dims=cfg.dims)


def _resolve_ranks(cfg: RunConfig, order: int) -> list[int]:
    if cfg.ranks is not None:
        if len(cfg.ranks) != order - 1:
            raise ConfigError(
                f"--ranks needs {order - 1} values for an order-{order} tensor"
            )
        return [int(r) for r in cfg.ranks]
    return [int(cfg.rank)] * (order - 1)


def _default_init(cfg: RunConfig) -> str:
    if cfg.init is not None:
        return cfg.init
    if cfg.format == "frostt":
        return "random"
    if cfg.method == "rtt-als":
        return "rtt-svd"
    if cfg.method == "tt-als":
        return "tt-svd"
    return "random"


def run(cfg: RunConfig) -> RunSummary:
    """Execute one decomposition pipeline: parse, initialize, run, write.

    Reported timings exclude parsing and fit evaluation; the trace file is
    appended and flushed as each record is produced.
    """
    cfg.validate()
    x = _load_input(cfg)
    ranks = _resolve_ranks(cfg, x.ndim)

    trace_fh = None
    if cfg.trace is not None:
        trace_fh = open(cfg.trace, "w")
        trace_fh.write("sweep,time_s,fit\n")
        trace_fh.flush()

    def on_record(rec):
        if trace_fh is not None:
            trace_fh.write(f"{rec.sweep},{rec.time_s:.9f},{rec.fit:.17g}\n")
            trace_fh.flush()

    try:
        start = time.perf_counter()
        if cfg.method in ("tt-svd", "rtt-svd"):
            if cfg.method == "tt-svd":
                tt = tt_svd(x, ranks)
            else:
                tt = rtt_svd(x, ranks, SvdConfig(seed=cfg.seed))
            elapsed = time.perf_counter() - start
            final = fit(tt, x)
            on_record(type("R", (), {"sweep": 0, "time_s": elapsed, "fit": final}))
            summary = RunSummary(
                final_fit=final,
                total_seconds=elapsed,
                per_sweep_seconds=elapsed,
                method=cfg.method,
                ranks=ranks,
                samples=None,
                seed=cfg.seed,
                input_digest=_digest(cfg.input),
            )
        else:
            init = _default_init(cfg)
            if init == "random":
                tt0 = tt_random(x.dims, ranks, cfg.seed)
            elif init == "tt-svd":
                tt0 = tt_svd(x, ranks)
            else:
                tt0 = rtt_svd(x, ranks, SvdConfig(seed=cfg.seed))
            init_seconds = time.perf_counter() - start
            als_cfg = AlsConfig(
                sweeps=cfg.sweeps,
                samples=cfg.samples if cfg.samples is not None else 1,
                seed=cfg.seed,
            )
            driver = rtt_als if cfg.method == "rtt-als" else tt_als
            tt, trace = driver(x, tt0, als_cfg, on_record=on_record)
            sweeps_run = max(trace.records[-1].sweep, 1)
            work = trace.records[-1].time_s
            summary = RunSummary(
                final_fit=trace.final_fit,
                total_seconds=init_seconds + work,
                per_sweep_seconds=work / sweeps_run,
                method=cfg.method,
                ranks=ranks,
                samples=cfg.samples,
                seed=cfg.seed,
                input_digest=_digest(cfg.input),
            )
    finally:
        if trace_fh is not None:
            trace_fh.close()

    if cfg.output is not None:
        write_ttb(tt, cfg.output)
    return summary


def sampler_selftest(
    dims, ranks, draws: int, seed: int = 0, threshold: float = 0.02
) -> tuple[str, bool]:
    """Draw from a random orthonormal chain and compare the empirical
    distribution against brute-force squared row norms.

    Returns (report text, passed).  The oracle materializes the chain matrix,
    so the product of mode sizes is capped.
    """
    total = int(np.prod(dims, dtype=np.int64))
    if total > SELFTEST_ORACLE_CAP:
        raise ConfigError(
            f"self-test oracle needs prod(dims) <= {SELFTEST_ORACLE_CAP}, got {total}"
        )
    if draws <= 0:
        return "no draws requested; nothing to test", False
    cores = random_left_orthonormal_chain(dims, ranks, seed)
    cs = build_chain_sampler(cores)
    rng = np.random.default_rng(seed)
    sample = chain_sample_left(cs, len(cores), draws, rng)
    empirical = empirical_histogram(sample, dims)
    mat = chain_matrix(cores)
    exact = (mat**2).sum(axis=1) / mat.shape[1]
    tv = 0.5 * float(np.abs(empirical - exact).sum())
    support = exact > 0
    expected_counts = exact[support] * draws
    observed = empirical[support] * draws
    lines = [
        f"dims={tuple(dims)} ranks={tuple(ranks)} draws={draws} seed={seed}",
        f"total-variation distance: {tv:.6f} (threshold {threshold})",
        f"chi-square: {float(((observed - expected_counts) ** 2 / expected_counts).sum()):.3f} "
        f"over {int(support.sum())} support cells",
    ]
    passed = tv <= threshold
    lines.append("PASS" if passed else "FAIL")
    return "\n".join(lines), passed


def _add_decompose(sub):
    p = sub.add_parser("decompose", help="decompose a tensor file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=("frostt", "dtb"))
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--rank", type=int)
    p.add_argument("--ranks", type=int, nargs="+")
    p.add_argument("--sweeps", type=int, default=10)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=INITS)
    p.add_argument("--dims", type=int, nargs="+", help="mode sizes for frostt input")
    p.add_argument("--trace", help="write a sweep,time_s,fit CSV here")
    p.add_argument("--output", help="write the result as a .ttb file here")


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a noisy low-TT-rank dense tensor")
    p.add_argument("--dims", type=int, nargs="+", required=True)
    p.add_argument("--rank", type=int)
    p.add_argument("--ranks", type=int, nargs="+")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)


def _add_selftest(sub):
    p = sub.add_parser("sampler-selftest", help="validate the chain sampler")
    p.add_argument("--dims", type=int, nargs="+", required=True)
    p.add_argument("--ranks", type=int, nargs="+", required=True,
                   help="chain ranks R_1..R_N (final rank need not be 1)")
    p.add_argument("--draws", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.02)


def _add_fit(sub):
    p = sub.add_parser("fit", help="fit of a stored TT against a tensor file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="dtb", choices=("frostt", "dtb"))
    p.add_argument("--tt", required=True, help=".ttb file with the TT cores")
    p.add_argument("--dims", type=int, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tt", description="tensor-train decomposition toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_decompose(sub)
    _add_synth(sub)
    _add_selftest(sub)
    _add_fit(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "decompose":
            cfg = RunConfig(
                input=args.input, format=args.format, method=args.method,
                rank=args.rank, ranks=args.ranks, sweeps=args.sweeps,
                samples=args.samples, seed=args.seed, init=args.init,
                dims=args.dims, trace=args.trace, output=args.output,
            )
            print(run(cfg).to_json())
            return 0
        if args.command == "synth":
            if args.rank is None and args.ranks is None:
                raise ConfigError("one of --rank or --ranks is required")
            ranks = args.ranks if args.ranks is not None else [args.rank] * (
                len(args.dims) - 1
            )
            x = synth_dense(args.dims, ranks, args.noise, args.seed)
            write_dtb(x, args.output)
            print(json.dumps({"dims": list(x.dims), "output": args.output}))
            return 0
        if args.command == "sampler-selftest":
            report, passed = sampler_selftest(
                args.dims, args.ranks, args.draws, args.seed, args.threshold
            )
            print(report)
            return 0 if passed else 4
        if args.command == "fit":
            if args.format == "dtb":
                x = read_dtb(args.input)
            else:
                x = parse_frostt(args.input, dims=args.dims)
            tt = read_ttb(args.tt)
            print(json.dumps({"fit": fit(tt, x)}))
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, IndexError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
