"""Command line: pretrain, compress, decompress, inspect, bench.

Exit codes: 0 success, 2 format/usage error, 3 checksum or determinism
mismatch, 4 I/O error.
"""
from __future__ import annotations

import argparse
import glob
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .adapt import AdaptationSchedule, OptimizerConfig, OptimizerKind, fit
from .container import (
    ChecksumError,
    Coder,
    ContainerError,
    describe,
    merge_containers,
    read_container,
    split_container,
    write_container,
)
from .models import (
    CheckpointChecksumError,
    CheckpointError,
    ContextModelParams,
    ToyVaeParams,
    checkpoint_bytes,
    load_checkpoint,
    loss_bits,
)
from .pipeline import OsoaConfig, OsoaError, osoa_decode, osoa_encode

EXIT_OK, EXIT_FORMAT, EXIT_CHECKSUM, EXIT_IO = 0, 2, 3, 4


def _atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _optimizer(args) -> OptimizerConfig:
    kind = OptimizerKind.SGD if args.optimizer == "sgd" else OptimizerKind.ADAMAX
    return OptimizerConfig(kind, args.lr)


def _read_symbols(path: str, alphabet_size: int) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8).astype(np.int64)
    if len(data) and data.max() >= alphabet_size:
        raise OsoaError(f"{path}: byte {int(data.max())} outside the declared alphabet of {alphabet_size}")
    return data


def cmd_pretrain(args) -> int:
    corpus = _read_symbols(args.corpus, args.alphabet_size)
    if len(corpus) == 0:
        raise OsoaError("empty corpus")
    if args.model == "vae":
        rng = np.random.default_rng(args.seed)
        a, z = args.alphabet_size, args.latent_size
        params = ToyVaeParams(0.1 * rng.standard_normal(z), 0.1 * rng.standard_normal((z, a)),
                              0.1 * rng.standard_normal((a, z)))
    else:
        params = ContextModelParams.zeros(args.alphabet_size, 0 if args.model == "order0" else 1)
    params, _ = fit(params, corpus, args.epochs, args.batch_size, _optimizer(args), seed=args.seed)
    _atomic_write(args.output, checkpoint_bytes(params))
    print(f"training bpd {loss_bits(params, corpus):.6f}")
    return EXIT_OK


def cmd_compress(args) -> int:
    params = load_checkpoint(args.checkpoint)
    data = _read_symbols(args.input, params.alphabet_size)
    config = OsoaConfig(
        coder=Coder.AC if args.coder == "ac" else Coder.RANS,
        bits_back=args.bits_back,
        precision_bits=args.precision_bits,
        batch_size=args.batch_size,
        chunk_size=args.chunk_size,
        optimizer=_optimizer(args),
        schedule=AdaptationSchedule(args.updates_per_batch, args.early_stop),
        seed=args.seed,
        background_flush=args.background_flush,
    )
    result = osoa_encode(data, params, config)
    if args.explode:
        for i, part in enumerate(split_container(result.container)):
            _atomic_write(f"{args.output}.{i:03d}", part)
    else:
        _atomic_write(args.output, write_container(result.container))
    if args.bpd_log:
        Path(args.bpd_log).write_text(result.bpd_log())
    n = len(data)
    print(f"{n} symbols -> {result.payload_bits // 8} payload bytes; "
          f"theoretical {result.theoretical_bits / n:.4f} bpd, real {result.payload_bits / n:.4f} bpd")
    return EXIT_OK


def _load_container(path: str, exploded: bool):
    if exploded:
        parts = sorted(glob.glob(glob.escape(path) + ".[0-9][0-9][0-9]"))
        if not parts:
            raise FileNotFoundError(f"no chunk files {path}.NNN")
        return merge_containers([Path(p).read_bytes() for p in parts])
    return read_container(Path(path).read_bytes())


def cmd_decompress(args) -> int:
    container = _load_container(args.input, args.exploded)
    params = load_checkpoint(args.checkpoint)
    result = osoa_decode(container, params)
    _atomic_write(args.output, result.data.astype(np.uint8).tobytes())
    return EXIT_OK


def cmd_inspect(args) -> int:
    print(describe(_load_container(args.input, args.exploded)))
    return EXIT_OK


def cmd_bench(args) -> int:
    sc = bench_mod.Scenario()
    overrides = {k: getattr(args, k) for k in ("target_length", "seed", "updates_per_batch", "batch_size",
                                               "chunk_size") if getattr(args, k) is not None}
    if args.lr is not None:
        overrides["osoa_lr"] = args.lr
    if args.coder is not None:
        overrides["coder"] = Coder.AC if args.coder == "ac" else Coder.RANS
    if args.retrain_epochs:
        overrides["retrain_epochs"] = args.retrain_epochs
    sc = replace(sc, **overrides)
    report = bench_mod.run_bench(sc)
    text = report.to_text(with_timing=not args.no_timing)
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text + "\n")
        (out / "series.txt").write_text(report.series_text())
    return EXIT_OK


def _add_coding_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--coder", choices=["ac", "rans"], default="rans")
    p.add_argument("--bits-back", action="store_true")
    p.add_argument("--precision-bits", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--chunk-size", type=int, default=8)
    p.add_argument("--optimizer", choices=["sgd", "adamax"], default="adamax")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--updates-per-batch", type=int, default=1)
    p.add_argument("--early-stop", type=int, default=None,
                   help="last batch (1-based) that triggers an update; 0 disables adaptation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--explode", action="store_true", help="write one file per chunk: OUTPUT.NNN")
    p.add_argument("--background-flush", action="store_true")
    p.add_argument("--bpd-log", help="write per-batch 'index bpd cumulative_bpd' lines here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osoa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a base model on a byte corpus")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--model", choices=["order0", "order1", "vae"], default="order1")
    p.add_argument("--alphabet-size", type=int, default=256)
    p.add_argument("--latent-size", type=int, default=4)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--optimizer", choices=["sgd", "adamax"], default="adamax")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("compress", help="OSOA-encode a file")
    p.add_argument("input")
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True)
    _add_coding_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="OSOA-decode a container")
    p.add_argument("input")
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--exploded", action="store_true", help="read INPUT.NNN chunk files")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("inspect", help="print a container's header and chunk table")
    p.add_argument("input")
    p.add_argument("--exploded", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="compare PreTrain / OSOA / FineTune on a synthetic shift")
    p.add_argument("--out-dir")
    p.add_argument("--target-length", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--coder", choices=["ac", "rans"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--updates-per-batch", type=int)
    p.add_argument("--retrain-epochs", type=int, default=0)
    p.add_argument("--no-timing", action="store_true", help="omit wall times (deterministic output)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ChecksumError, CheckpointChecksumError) as e:
        print(f"osoa: checksum mismatch: {e}", file=sys.stderr)
        return EXIT_CHECKSUM
    except (ContainerError, CheckpointError, OsoaError, ValueError) as e:
        print(f"osoa: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"osoa: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
