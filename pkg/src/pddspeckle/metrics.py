"""Image quality metrics: PSNR, SSIM and ENL."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core_image import Raster
from .errors import ValidationError

__all__ = ["RegionSpec", "psnr", "ssim", "enl", "format_value"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class RegionSpec:
    x: int
    y: int
    width: int
    height: int

    @classmethod
    def parse(cls, text: str) -> "RegionSpec":
        """Parse ``x,y,width,height``."""
        try:
            x, y, w, h = (int(v) for v in text.split(","))
        except ValueError:
            raise ValidationError(f"region must be x,y,width,height; got {text!r}") from None
        return cls(x, y, w, h)

    def check(self, shape: tuple[int, int]) -> None:
        H, W = shape
        if self.x < 0 or self.y < 0 or self.width < 1 or self.height < 1:
            raise ValidationError(f"invalid region {self}")
        if self.x + self.width > W or self.y + self.height > H:
            raise ValidationError(f"region {self} exceeds image bounds {W}x{H}")
        if self.width * self.height < 16:
            raise ValidationError("ENL region must contain at least 16 pixels")

    def slice(self, data: np.ndarray) -> np.ndarray:
        return data[self.y : self.y + self.height, self.x : self.x + self.width]


def _pair(reference, test):
    a = reference.data if isinstance(reference, Raster) else np.asarray(reference, dtype=np.float64)
    b = test.data if isinstance(test, Raster) else np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(reference, test, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    if not peak > 0:
        raise ValidationError("peak must be positive")
    a, b = _pair(reference, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t**2) / (2 * sigma**2))
    return g / g.sum()


def _valid_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    h = len(taps) // 2
    out = correlate1d(correlate1d(x, taps, axis=0, mode="constant"), taps, axis=1, mode="constant")
    return out[h : x.shape[0] - h, h : x.shape[1] - h]


def ssim(reference, test, dynamic_range: float = 255.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over fully valid
    window positions, K1 = 0.01, K2 = 0.03."""
    a, b = _pair(reference, test)
    if min(a.shape) < SSIM_WINDOW:
        raise ValidationError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    taps = _gaussian_taps(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _valid_filter(a, taps)
    mu_b = _valid_filter(b, taps)
    var_a = _valid_filter(a * a, taps) - mu_a**2
    var_b = _valid_filter(b * b, taps) - mu_b**2
    cov = _valid_filter(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def enl(image, region: RegionSpec | None = None) -> float:
    """Equivalent number of looks, ``mean^2 / var`` (population variance).

    Returns ``inf`` with a warning for a perfectly flat region.
    """
    data = image.data if isinstance(image, Raster) else np.asarray(image, dtype=np.float64)
    if region is not None:
        region.check(data.shape)
        data = region.slice(data)
    mean = float(data.mean())
    var = float(data.var())
    if var == 0:
        warnings.warn("ENL region has zero variance", RuntimeWarning, stacklevel=2)
        return math.inf
    return mean * mean / var


def format_value(v: float) -> str:
    """Six significant digits; integral values keep a ``.0``."""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    text = f"{v:.6g}"
    if text.lstrip("-").isdigit():
        text += ".0"
    return text
