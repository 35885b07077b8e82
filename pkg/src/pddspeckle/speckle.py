"""Synthetic fully developed intensity speckle.

``L``-look speckle is the mean of ``L`` independent unit-mean exponential
variates, i.e. Gamma(shape=L, scale=1/L): unit mean, variance ``1/L``.
Samples come from numpy's PCG64 generator; each image row draws from its
own child stream of ``SeedSequence(seed)`` so output is a pure function of
``(clean, looks, seed)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_image import Domain, Raster, _check_looks
from .errors import ValidationError

__all__ = ["SpeckleParams", "RNG_ALGORITHM", "speckle_field", "simulate_speckle", "multiplicative_residual"]

RNG_ALGORITHM = "numpy-PCG64/SeedSequence-per-row;gamma=mean-of-L-standard-exponential"


@dataclass(frozen=True)
class SpeckleParams:
    looks: int
    seed: int = 0

    def __post_init__(self):
        _check_looks(self.looks)
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


def speckle_field(shape: tuple[int, int], params: SpeckleParams) -> np.ndarray:
    """Unit-mean speckle samples of the given shape."""
    H, W = shape
    L = params.looks
    streams = np.random.SeedSequence(params.seed).spawn(H)
    u = np.empty((H, W))
    for y, ss in enumerate(streams):
        gen = np.random.Generator(np.random.PCG64(ss))
        u[y] = gen.standard_exponential((L, W)).mean(axis=0)
    return u


def simulate_speckle(clean: Raster, params: SpeckleParams) -> Raster:
    if clean.domain is not Domain.INTENSITY:
        raise ValidationError("speckle is applied to intensity rasters")
    return Raster(clean.data * speckle_field(clean.shape, params), Domain.INTENSITY)


def multiplicative_residual(noisy: Raster, estimate: Raster, floor: float = 1e-10) -> Raster:
    """Ratio image ``noisy / max(estimate, floor)``."""
    if noisy.shape != estimate.shape:
        raise ValidationError("rasters differ in shape")
    if noisy.domain is not Domain.INTENSITY or estimate.domain is not Domain.INTENSITY:
        raise ValidationError("ratio image needs intensity rasters")
    return Raster(noisy.data / np.maximum(estimate.data, floor), Domain.INTENSITY)
