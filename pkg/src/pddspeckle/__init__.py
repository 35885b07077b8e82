"""Despeckling of multiplicative-noise images by principal-dictionary
sparse coding of nonlocal patch groups in the log domain."""

__version__ = "0.1.0"

from .config import DenoiseConfig
from .core_image import (Domain, Raster, log_speckle_bias, log_speckle_variance, read_raster,
                         write_raster)
from .errors import (ConfigError, CoverageError, DespeckleError, NumericalError, RasterIOError,
                     ValidationError)
from .grouping import PatchGeometry, PatchGroup, find_similar, patch_distance
from .metrics import RegionSpec, enl, psnr, ssim
from .pdd import atom_frequencies, choose_threshold, denoise_group, principal_split
from .pipeline import DespeckleReport, despeckle
from .sparse import SparseStop, ksvd_learn, omp
from .speckle import SpeckleParams, simulate_speckle

__all__ = [
    "__version__",
    "DenoiseConfig", "Domain", "Raster", "read_raster", "write_raster",
    "log_speckle_bias", "log_speckle_variance",
    "DespeckleError", "ValidationError", "ConfigError", "RasterIOError", "NumericalError",
    "CoverageError",
    "PatchGeometry", "PatchGroup", "find_similar", "patch_distance",
    "RegionSpec", "psnr", "ssim", "enl",
    "atom_frequencies", "choose_threshold", "principal_split", "denoise_group",
    "DespeckleReport", "despeckle",
    "SparseStop", "omp", "ksvd_learn",
    "SpeckleParams", "simulate_speckle",
]
