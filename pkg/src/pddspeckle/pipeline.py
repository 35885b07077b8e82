"""End-to-end despeckling driver.

Stages: floor clamp and log transform, removal of the log-speckle mean,
nonlocal grouping for every reference patch, principal-dictionary
denoising of each group, aggregation, and the exponential back-transform.

Work is split into fixed-size blocks of reference patches whose results are
merged in block order, so the output does not depend on the number of
worker threads. The numba kernels release the GIL.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import DenoiseConfig
from .core_image import Domain, Raster, default_floor, log_speckle_bias, log_transform
from .errors import NumericalError, ValidationError
from .grouping import gather_patches, group_origins, reference_bands, reference_iterator
from .pdd import Accumulator, denoise_group
from .sparse import KsvdResult, ksvd_learn

__all__ = ["GroupRecord", "DespeckleReport", "despeckle", "prepare_log_image", "learn_group_dictionary"]

log = logging.getLogger(__name__)

# references per denoising block; a fixed constant keeps the merge order
# independent of the worker count
BLOCK = 32


@dataclass
class GroupRecord:
    origin: tuple[int, int]
    P: int
    K: int
    mean_nnz: float
    final_error: float
    size: int
    poorly_fit: bool
    short: bool = False

    def line(self) -> str:
        flags = []
        if self.poorly_fit:
            flags.append("poor_fit")
        if self.short:
            flags.append("short")
        return (f"{self.origin[0]} {self.origin[1]} P={self.P} K={self.K} "
                f"mean_nnz={self.mean_nnz:.4f} ksvd_error={self.final_error:.6g} "
                f"M={self.size}" + (" " + ",".join(flags) if flags else ""))


@dataclass
class DespeckleReport:
    groups: list[GroupRecord] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    bias: float = 0.0
    floor: float = 0.0

    def diagnostics_text(self) -> str:
        head = "# row col P K mean_nnz ksvd_error M [flags]\n"
        return head + "".join(g.line() + "\n" for g in self.groups)


def prepare_log_image(noisy: Raster, config: DenoiseConfig) -> tuple[Raster, float, float]:
    """Bias-corrected log image plus the floor and bias used."""
    if noisy.domain is not Domain.INTENSITY:
        raise ValidationError("despeckling expects an intensity raster")
    floor = default_floor(noisy, config.floor_scale)
    z = log_transform(noisy, floor)
    bias = log_speckle_bias(config.looks)
    return Raster(z.data - bias, Domain.LOG), floor, bias


def _group_seed(config: DenoiseConfig, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(config.seed, spawn_key=(index,))


def _denoise_block(z, refs, found, indices, config):
    p = config.patch_side
    stop = config.sparse_stop()
    out = []
    for i in indices:
        origins, _ = found[i]
        est = denoise_group(gather_patches(z, origins, p), config.dict_size, config.ksvd_iters, stop,
                            seed=_group_seed(config, int(i)), weighting=config.aggregation_weights,
                            init=config.dict_init)
        rec = GroupRecord((int(refs[i, 0]), int(refs[i, 1])), est.P, est.K, est.mean_nnz,
                          est.final_error, len(origins), est.poorly_fit, len(origins) < config.group_size)
        out.append((est.estimates, origins, est.weights, rec))
    return out


def despeckle(noisy: Raster, config: DenoiseConfig, workers: int = 1,
              progress: Callable[[int, int, float], None] | None = None) -> tuple[Raster, DespeckleReport]:
    """Despeckle an intensity raster; returns the estimate and a run report.

    ``progress(done, total, elapsed)`` is called after every block.
    """
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    geom = config.geometry()
    report = DespeckleReport()
    t0 = time.perf_counter()
    zc, report.floor, report.bias = prepare_log_image(noisy, config)
    z = zc.data
    refs = reference_iterator(zc.shape, geom)
    report.timings["prepare"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    found: list = [None] * len(refs)
    bands = reference_bands(refs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda idx: (idx, group_origins(zc, refs[idx], geom, config.looks)), bands)
        for idx, res in parts:
            for i, item in zip(idx, res):
                found[i] = item
    report.timings["grouping"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    acc = Accumulator(zc.shape, geom.patch_side)
    blocks = [np.arange(i, min(i + BLOCK, len(refs))) for i in range(0, len(refs), BLOCK)]
    done = 0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for block_out in pool.map(lambda b: _denoise_block(z, refs, found, b, config), blocks):
            for estimates, origins, weights, rec in block_out:
                acc.add(estimates, origins, weights)
                report.groups.append(rec)
            done += len(block_out)
            if progress is not None:
                progress(done, len(refs), time.perf_counter() - t2)
    report.timings["denoise"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    xhat = acc.finalize()
    if not np.all(np.isfinite(xhat)):
        raise NumericalError("non-finite values in the aggregated estimate")
    # the estimate is already free of the log-speckle mean, so exp() is final
    out = np.exp(xhat)
    if not np.all(np.isfinite(out)):
        raise NumericalError("estimate overflowed in the exponential back-transform")
    report.timings["finalize"] = time.perf_counter() - t3
    n_poor = sum(g.poorly_fit for g in report.groups)
    if n_poor:
        log.info("%d of %d groups kept a K-SVD error above twice the stop bound", n_poor, len(refs))
    return Raster(out, Domain.INTENSITY), report


def learn_group_dictionary(noisy: Raster, config: DenoiseConfig, origin) -> KsvdResult:
    """K-SVD result for the group built around one reference origin."""
    zc, _, _ = prepare_log_image(noisy, config)
    geom = config.geometry()
    origin = np.asarray(origin, dtype=np.int64).reshape(1, 2)
    [(origins, _)] = group_origins(zc, origin, geom, config.looks)
    refs = reference_iterator(zc.shape, geom)
    match = np.flatnonzero((refs == origin).all(axis=1))
    index = int(match[0]) if match.size else 0
    return ksvd_learn(gather_patches(zc.data, origins, geom.patch_side), config.dict_size,
                      config.ksvd_iters, config.sparse_stop(), seed=_group_seed(config, index),
                      init=config.dict_init)


def groups_per_second(done: int, elapsed: float) -> float:
    return done / elapsed if elapsed > 0 else math.inf
