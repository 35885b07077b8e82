"""Nonlocal patch grouping under the probabilistic patch-based (PPB) similarity.

For log-domain patches ``z_i``, ``z_j`` with intensities ``A = exp(z)``::

    d(z_i, z_j) = (2L - 1) * sum_k ln( sqrt(A_i[k]/A_j[k]) + sqrt(A_j[k]/A_i[k]) )

Each summand is ``>= ln 2`` with equality iff the two pixels match, so a
patch is always at minimum distance from itself. Grouping keeps, for every
reference patch, the ``M`` windows in its search area with the smallest
distance; the reference always occupies column 0 and ties are broken by
row-major order of the candidate's top-left corner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core_image import Domain, Raster
from .errors import ConfigError, ValidationError

__all__ = [
    "PatchGeometry",
    "PatchGroup",
    "patch_distance",
    "find_similar",
    "find_similar_many",
    "reference_iterator",
    "extract_patch",
    "gather_patches",
    "group_origins",
    "reference_bands",
]

# bound on exp(z) used inside the distance so ratios stay finite
_LOG_CLAMP = 700.0
_BAND_TARGET = 1024


@dataclass(frozen=True)
class PatchGeometry:
    patch_side: int = 7
    search_radius: int = 40
    stride: int = 3
    group_size: int = 90

    def __post_init__(self):
        if self.patch_side < 3 or self.patch_side % 2 == 0:
            raise ConfigError(f"patch_side must be odd and >= 3, got {self.patch_side}")
        if not 1 <= self.stride <= self.patch_side:
            # a larger step would leave pixels outside every reference patch
            raise ConfigError(f"stride must lie in 1..patch_side, got {self.stride}")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if self.search_radius < 0:
            raise ConfigError("search_radius must be >= 0")
        if (2 * self.search_radius + 1) ** 2 < self.group_size:
            raise ConfigError("search window holds fewer candidates than group_size")

    @property
    def patch_len(self) -> int:
        return self.patch_side * self.patch_side


@dataclass
class PatchGroup:
    """``data`` is ``(N, M)``; column ``m`` is the row-major vector of the
    patch whose top-left corner is ``origins[m]``."""

    data: np.ndarray
    origins: np.ndarray
    distances: np.ndarray
    short: bool = False
    reference_index: int = 0

    @property
    def size(self) -> int:
        return self.data.shape[1]


def _sqrt_intensity(z: np.ndarray) -> np.ndarray:
    return np.exp(0.5 * np.clip(z, -_LOG_CLAMP, _LOG_CLAMP))


def patch_distance(zi: np.ndarray, zj: np.ndarray, looks: int) -> float:
    """PPB dissimilarity between two log-domain patch vectors."""
    zi = np.asarray(zi, dtype=np.float64).ravel()
    zj = np.asarray(zj, dtype=np.float64).ravel()
    if zi.shape != zj.shape:
        raise ValidationError("patches must have equal length")
    if looks < 1:
        raise ValidationError("looks must be >= 1")
    si, sj = _sqrt_intensity(zi), _sqrt_intensity(zj)
    terms = np.log(si / sj + sj / si)
    return float((2 * looks - 1) * terms.sum())


def reference_iterator(image_shape: tuple[int, int], geom: PatchGeometry) -> np.ndarray:
    """Top-left corners of reference patches, row-major, shape ``(R, 2)``.

    Origins advance by ``stride``; a final origin flush with the bottom/right
    border is appended when the stride would skip it, so every pixel lies in
    at least one reference patch.
    """
    H, W = image_shape
    p = geom.patch_side
    if p > H or p > W:
        raise ConfigError(f"patch side {p} exceeds image size {W}x{H}")

    def axis(n):
        pos = list(range(0, n - p + 1, geom.stride))
        if pos[-1] != n - p:
            pos.append(n - p)
        return pos

    ys, xs = axis(H), axis(W)
    return np.array([(y, x) for y in ys for x in xs], dtype=np.int64).reshape(-1, 2)


def extract_patch(data: np.ndarray, origin, side: int) -> np.ndarray:
    y, x = int(origin[0]), int(origin[1])
    return data[y : y + side, x : x + side].ravel()


@njit(cache=True, nogil=True)
def _band_distances(s, refs, p, r):
    """Unscaled PPB distances from each reference to every window offset.

    ``s`` is ``sqrt(exp(z))``. Returns ``(R, (2r+1)^2)`` with ``inf`` for
    candidates outside the image; offsets are ordered row-major in
    ``(dy, dx)`` so that index order is the candidates' scan order.
    """
    H, W = s.shape
    R = refs.shape[0]
    nw = 2 * r + 1
    out = np.full((R, nw * nw), np.inf)
    y0 = refs[0, 0]
    y1 = y0
    for i in range(R):
        y1 = max(y1, refs[i, 0])
    y1 += p
    T = np.zeros((y1 - y0, W))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            o = (dy + r) * nw + (dx + r)
            ylo = max(y0, -dy)
            yhi = min(y1, H - dy)
            xlo = max(0, -dx)
            xhi = min(W, W - dx)
            for y in range(ylo, yhi):
                for x in range(xlo, xhi):
                    a = s[y, x]
                    b = s[y + dy, x + dx]
                    T[y - y0, x] = math.log(a / b + b / a)
            for i in range(R):
                ry = refs[i, 0]
                rx = refs[i, 1]
                cy = ry + dy
                cx = rx + dx
                if cy < 0 or cx < 0 or cy > H - p or cx > W - p:
                    continue
                acc = 0.0
                for a_ in range(p):
                    row = ry - y0 + a_
                    for b_ in range(p):
                        acc += T[row, rx + b_]
                out[i, o] = acc
    return out


def _select(dist_row, ref, r, nw, M):
    finite = np.isfinite(dist_row)
    self_idx = r * nw + r
    order = np.argsort(dist_row, kind="stable")
    n_valid = int(finite.sum())
    order = order[:n_valid]
    order = order[order != self_idx]
    take = np.concatenate(([self_idx], order[: M - 1]))
    dy = take // nw - r
    dx = take % nw - r
    origins = np.stack([ref[0] + dy, ref[1] + dx], axis=1)
    return origins, dist_row[take]


def _check_refs(z: np.ndarray, refs, p: int) -> np.ndarray:
    H, W = z.shape
    refs = np.asarray(refs, dtype=np.int64).reshape(-1, 2)
    if np.any(refs < 0) or np.any(refs[:, 0] > H - p) or np.any(refs[:, 1] > W - p):
        raise ValidationError("reference patch not fully inside the image")
    return refs


def reference_bands(refs: np.ndarray, target: int = _BAND_TARGET) -> list[np.ndarray]:
    """Split row-major sorted references into consecutive index blocks of
    about ``target`` references that share a compact row range."""
    order = np.lexsort((refs[:, 1], refs[:, 0]))
    return [order[i : i + target] for i in range(0, len(order), target)]


def group_origins(image: Raster, refs: np.ndarray, geom: PatchGeometry,
                  looks: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Member origins and PPB distances of the group of each reference.

    Works on one band of references at a time; the result for a reference
    does not depend on how references are banded.
    """
    if image.domain is not Domain.LOG:
        raise ValidationError("grouping operates on log-domain rasters")
    p, r, M = geom.patch_side, geom.search_radius, geom.group_size
    refs = _check_refs(image.data, refs, p)
    s = _sqrt_intensity(image.data)
    nw = 2 * r + 1
    scale = 2 * looks - 1
    results: list = [None] * len(refs)
    for idx in reference_bands(refs):
        table = _band_distances(s, np.ascontiguousarray(refs[idx]), p, r)
        for row, i in enumerate(idx):
            origins, dist = _select(table[row], refs[i], r, nw, M)
            results[i] = (origins, dist * scale)
    return results


def gather_patches(z: np.ndarray, origins: np.ndarray, side: int) -> np.ndarray:
    """Stack the patches at ``origins`` as columns of an ``(N, M)`` array."""
    return np.stack([extract_patch(z, o, side) for o in origins], axis=1)


def find_similar_many(image: Raster, refs: np.ndarray, geom: PatchGeometry,
                      looks: int) -> list[PatchGroup]:
    """Group the ``M`` most similar patches for each reference origin."""
    found = group_origins(image, refs, geom, looks)
    p, M = geom.patch_side, geom.group_size
    return [PatchGroup(gather_patches(image.data, o, p), o, d, short=len(o) < M) for o, d in found]


def find_similar(image: Raster, ref_origin, geom: PatchGeometry, looks: int) -> PatchGroup:
    return find_similar_many(image, np.asarray([ref_origin]), geom, looks)[0]
