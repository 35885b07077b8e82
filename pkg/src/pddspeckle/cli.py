"""Command line interface: ``simulate``, ``despeckle``, ``metrics``, ``dict-dump``.

Exit codes: 0 success, 1 I/O error, 2 usage or validation error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from . import __version__
from .config import DenoiseConfig, read_config_file
from .core_image import Domain, pddf_bytes, read_raster, write_raster
from .errors import NumericalError, RasterIOError, ValidationError
from .metrics import RegionSpec, enl, format_value, psnr, ssim
from .pipeline import despeckle, groups_per_second, learn_group_dictionary
from .speckle import RNG_ALGORITHM, SpeckleParams, simulate_speckle

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# CLI flag -> DenoiseConfig field
CONFIG_FLAGS = {
    "looks": int,
    "patch_side": int,
    "search_radius": int,
    "group_size": int,
    "stride": int,
    "dict_size": int,
    "ksvd_iters": int,
    "sparsity_cap": int,
    "error_gain": float,
    "floor_scale": float,
    "seed": int,
    "aggregation_weights": str,
    "dict_init": str,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("denoising configuration (flags override --config)")
    g.add_argument("--config", metavar="FILE", help="key=value file, e.g. a previous run manifest")
    for name, typ in CONFIG_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quiet", action="store_true", help="no progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pddspeckle", description="Despeckle multiplicative-noise images.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="multiply a clean image by L-look speckle")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--looks", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="manifest path (default OUTPUT.manifest)")

    p = sub.add_parser("despeckle", help="despeckle an intensity image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--manifest", help="manifest path (default OUTPUT.manifest)")
    p.add_argument("--diagnostics", metavar="FILE", help="per-group diagnostics sidecar")
    _add_config_flags(p)

    p = sub.add_parser("metrics", help="PSNR/SSIM against a reference, ENL per region")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--region", action="append", default=[], metavar="X,Y,W,H",
                   help="ENL region on the test image (repeatable)")
    p.add_argument("--peak", type=float, default=255.0)
    p.add_argument("--dynamic-range", type=float, default=255.0)
    p.add_argument("--csv", metavar="FILE", help="append the record as a CSV row")

    p = sub.add_parser("dict-dump", help="write the dictionary learned for one group")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--origin", required=True, metavar="ROW,COL")
    _add_config_flags(p)
    return parser


def _config_from_args(args) -> DenoiseConfig:
    values = read_config_file(args.config) if args.config else {}
    overrides = {name: getattr(args, name) for name in CONFIG_FLAGS}
    return DenoiseConfig.from_mapping(values, **overrides)


def _manifest_text(config_block: str, section: str, run: dict) -> str:
    lines = ["# pddspeckle run manifest", f"[{section}]", config_block.rstrip("\n"), "[run]"]
    lines += [f"{k}={v}" for k, v in run.items()]
    return "\n".join(lines) + "\n"


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise RasterIOError(f"cannot write {path}: {exc.strerror}") from exc


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    params = SpeckleParams(args.looks, args.seed)
    clean = read_raster(args.input)
    if clean.domain is not Domain.INTENSITY:
        raise ValidationError("simulate expects an intensity raster")
    t1 = time.perf_counter()
    noisy = simulate_speckle(clean, params)
    t2 = time.perf_counter()
    write_raster(args.output, noisy)
    t3 = time.perf_counter()
    block = f"looks={params.looks}\nseed={params.seed}\nrng={RNG_ALGORITHM}\n"
    run = {"command": "simulate", "input": args.input, "output": args.output, "version": __version__,
           "time_read_s": f"{t1 - t0:.6f}", "time_simulate_s": f"{t2 - t1:.6f}",
           "time_write_s": f"{t3 - t2:.6f}", "duration_s": f"{t3 - t0:.6f}"}
    _write_text(args.manifest or args.output + ".manifest", _manifest_text(block, "speckle", run))
    return EXIT_OK


def cmd_despeckle(args) -> int:
    t0 = time.perf_counter()
    config = _config_from_args(args)
    if args.workers < 1:
        raise ValidationError("--workers must be >= 1")
    noisy = read_raster(args.input)
    if noisy.domain is not Domain.INTENSITY:
        raise ValidationError("despeckle expects an intensity raster")
    if min(noisy.shape) < config.patch_side:
        raise ValidationError(f"image {noisy.width}x{noisy.height} is smaller than the patch")

    def report_progress(done, total, elapsed):
        rate = groups_per_second(done, elapsed)
        print(f"\rgroups {done}/{total} ({rate:.1f}/s)", end="" if done < total else "\n",
              file=sys.stderr, flush=True)

    t1 = time.perf_counter()
    result, report = despeckle(noisy, config, workers=args.workers,
                                progress=None if args.quiet else report_progress)
    t2 = time.perf_counter()
    write_raster(args.output, result)
    if args.diagnostics:
        _write_text(args.diagnostics, report.diagnostics_text())
    t3 = time.perf_counter()
    run = {"command": "despeckle", "input": args.input, "output": args.output, "version": __version__,
           "workers": args.workers, "groups": len(report.groups),
           "log_bias": repr(report.bias), "floor": repr(report.floor),
           "time_read_s": f"{t1 - t0:.6f}"}
    run.update({f"time_{k}_s": f"{v:.6f}" for k, v in report.timings.items()})
    run.update({"time_write_s": f"{t3 - t2:.6f}", "duration_s": f"{t3 - t0:.6f}"})
    _write_text(args.manifest or args.output + ".manifest",
                _manifest_text(config.to_text(), "config", run))
    return EXIT_OK


def cmd_metrics(args) -> int:
    regions = [RegionSpec.parse(r) for r in args.region]
    ref = read_raster(args.reference)
    test = read_raster(args.test)
    if ref.shape != test.shape:
        raise ValidationError(f"dimension mismatch: {ref.width}x{ref.height} vs {test.width}x{test.height}")
    for r in regions:
        r.check(test.shape)
    record = {"psnr": psnr(ref, test, args.peak), "ssim": ssim(ref, test, args.dynamic_range)}
    for i, r in enumerate(regions, 1):
        record[f"enl_r{i}"] = enl(test, r)
    print(" ".join(f"{k}={format_value(v)}" for k, v in record.items()))
    if args.csv:
        new = not os.path.exists(args.csv) or os.path.getsize(args.csv) == 0
        try:
            with open(args.csv, "a", encoding="utf-8") as fh:
                if new:
                    fh.write(",".join(["reference", "test", *record]) + "\n")
                fh.write(",".join([args.reference, args.test, *map(format_value, record.values())]) + "\n")
        except OSError as exc:
            raise RasterIOError(f"cannot append to {args.csv}: {exc.strerror}") from exc
    return EXIT_OK


def cmd_dict_dump(args) -> int:
    config = _config_from_args(args)
    try:
        row, col = (int(v) for v in args.origin.split(","))
    except ValueError:
        raise ValidationError(f"--origin must be ROW,COL, got {args.origin!r}") from None
    noisy = read_raster(args.input)
    p = config.patch_side
    if not (0 <= row <= noisy.height - p and 0 <= col <= noisy.width - p):
        raise ValidationError(f"origin ({row}, {col}) does not hold a full patch")
    learned = learn_group_dictionary(noisy, config, (row, col))
    # atoms are columns: width = K, height = N
    payload = pddf_bytes(learned.dictionary, Domain.LOG)
    try:
        with open(args.output, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise RasterIOError(f"cannot write {args.output}: {exc.strerror}") from exc
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "despeckle": cmd_despeckle, "metrics": cmd_metrics,
            "dict-dump": cmd_dict_dump}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except RasterIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
