"""Raster container, log/intensity conversions and raster file I/O.

Two file formats are supported:

* binary PGM (``P5``), maxval 1..65535, 16-bit samples big-endian;
* ``PDDF`` raw float: a 16-byte header (magic ``b"PDDF"``, width, height and
  domain tag as little-endian ``uint32``; tag 0 = intensity, 1 = log)
  followed by ``width * height`` little-endian float32 values, row-major.

All computation happens in float64.
"""
from __future__ import annotations

import enum
import os
import re
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, polygamma

from .errors import RasterIOError, ValidationError

__all__ = [
    "Domain",
    "Raster",
    "log_transform",
    "exp_transform",
    "log_speckle_bias",
    "log_speckle_variance",
    "default_floor",
    "read_pgm",
    "write_pgm",
    "read_pddf",
    "write_pddf",
    "read_raster",
    "write_raster",
]

PDDF_MAGIC = b"PDDF"
_PDDF_HEADER = struct.Struct("<4sIII")


class Domain(enum.IntEnum):
    INTENSITY = 0
    LOG = 1


@dataclass(frozen=True)
class Raster:
    """Immutable single-channel image.

    ``data`` is a read-only ``(height, width)`` float64 array. Intensity
    rasters must be non-negative; log rasters may hold any finite value.
    """

    data: np.ndarray
    domain: Domain = Domain.INTENSITY

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError(f"raster must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("raster contains non-finite values")
        domain = Domain(self.domain)
        if domain is Domain.INTENSITY and arr.min() < 0:
            raise ValidationError("intensity raster contains negative values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "domain", domain)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray, domain: Domain | None = None) -> "Raster":
        return Raster(data, self.domain if domain is None else domain)


def _require(img: Raster, domain: Domain) -> None:
    if img.domain is not domain:
        raise ValidationError(f"expected a {domain.name.lower()} raster, got {img.domain.name.lower()}")


def default_floor(img: Raster, scale: float = 1e-10) -> float:
    """Clamp floor used before taking logs: ``scale * mean(img)``.

    Falls back to ``scale`` itself for an all-zero image so the floor stays
    strictly positive.
    """
    mean = float(img.data.mean())
    return scale * mean if mean > 0 else scale


def log_transform(img: Raster, floor: float) -> Raster:
    """Natural log of ``max(img, floor)``."""
    _require(img, Domain.INTENSITY)
    if not (floor > 0 and np.isfinite(floor)):
        raise ValidationError(f"floor must be a positive finite number, got {floor!r}")
    return Raster(np.log(np.maximum(img.data, floor)), Domain.LOG)


def exp_transform(img: Raster) -> Raster:
    _require(img, Domain.LOG)
    out = np.exp(img.data)
    if not np.all(np.isfinite(out)):
        raise ValidationError("exp_transform overflowed")
    return Raster(out, Domain.INTENSITY)


def _check_looks(looks: int) -> int:
    if isinstance(looks, bool) or int(looks) != looks or looks < 1:
        raise ValidationError(f"number of looks must be an integer >= 1, got {looks!r}")
    return int(looks)


def log_speckle_bias(looks: int) -> float:
    """Mean of ``ln u`` for unit-mean ``looks``-look gamma speckle.

    Equal to ``digamma(L) - ln(L)``; always negative and tending to 0 as the
    number of looks grows. Subtract it from a log image to obtain a
    zero-mean additive noise model.
    """
    L = _check_looks(looks)
    return float(digamma(L) - np.log(L))


def log_speckle_variance(looks: int) -> float:
    """Variance of ``ln u`` for ``looks``-look gamma speckle (trigamma(L))."""
    L = _check_looks(looks)
    return float(polygamma(1, L))


# --------------------------------------------------------------------- I/O


def _pgm_tokens(buf: bytes):
    """Yield (token, end_offset) for the ASCII header, skipping comments."""
    pos = 0
    n = len(buf)
    while True:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise RasterIOError("truncated PGM header")
        yield buf[start:pos], pos


def read_pgm(path: str | os.PathLike) -> Raster:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise RasterIOError(f"cannot read {os.fspath(path)}: {exc.strerror}") from exc
    if buf[:2] != b"P5":
        raise RasterIOError(f"{os.fspath(path)}: not a binary PGM (magic {buf[:2]!r})")
    tokens = _pgm_tokens(buf)
    try:
        next(tokens)  # magic
        width = int(next(tokens)[0])
        height = int(next(tokens)[0])
        tok, end = next(tokens)
        maxval = int(tok)
    except (ValueError, StopIteration) as exc:
        raise RasterIOError(f"{os.fspath(path)}: malformed PGM header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise RasterIOError(f"{os.fspath(path)}: invalid PGM dimensions or maxval")
    # exactly one whitespace byte separates the header from the raster
    start = end + 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    payload = buf[start : start + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise RasterIOError(f"{os.fspath(path)}: truncated PGM raster")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return Raster(data.astype(np.float64), Domain.INTENSITY)


def write_pgm(path: str | os.PathLike, img: Raster, maxval: int | None = None) -> None:
    """Write an intensity raster as binary PGM.

    Values are rounded and clipped to ``0..maxval``. ``maxval`` defaults to
    255 when the data fits, else 65535.
    """
    _require(img, Domain.INTENSITY)
    if maxval is None:
        maxval = 255 if img.data.max() <= 255.5 else 65535
    if not 0 < maxval < 65536:
        raise ValidationError("PGM maxval must be in 1..65535")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    samples = np.clip(np.rint(img.data), 0, maxval).astype(dtype)
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    _write_bytes(path, header + samples.tobytes())


def read_pddf(path: str | os.PathLike) -> Raster:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise RasterIOError(f"cannot read {os.fspath(path)}: {exc.strerror}") from exc
    if len(buf) < _PDDF_HEADER.size:
        raise RasterIOError(f"{os.fspath(path)}: truncated PDDF header")
    magic, width, height, tag = _PDDF_HEADER.unpack_from(buf)
    if magic != PDDF_MAGIC:
        raise RasterIOError(f"{os.fspath(path)}: bad PDDF magic {magic!r}")
    if tag not in (0, 1):
        raise RasterIOError(f"{os.fspath(path)}: unknown domain tag {tag}")
    count = width * height
    body = buf[_PDDF_HEADER.size :]
    if len(body) != 4 * count:
        raise RasterIOError(f"{os.fspath(path)}: expected {4 * count} payload bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<f4").reshape(height, width)
    try:
        return Raster(data.astype(np.float64), Domain(tag))
    except ValidationError as exc:
        raise RasterIOError(f"{os.fspath(path)}: {exc}") from exc


def pddf_bytes(data: np.ndarray, domain: Domain) -> bytes:
    arr = np.ascontiguousarray(data, dtype="<f4")
    height, width = arr.shape
    return _PDDF_HEADER.pack(PDDF_MAGIC, width, height, int(domain)) + arr.tobytes()


def write_pddf(path: str | os.PathLike, img: Raster) -> None:
    _write_bytes(path, pddf_bytes(img.data, img.domain))


def _write_bytes(path, payload: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise RasterIOError(f"cannot write {os.fspath(path)}: {exc.strerror}") from exc


_PGM_SUFFIX = re.compile(r"\.(pgm|pnm)$", re.IGNORECASE)


def read_raster(path: str | os.PathLike) -> Raster:
    """Read a PGM or PDDF file, dispatching on the leading magic bytes."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise RasterIOError(f"cannot read {os.fspath(path)}: {exc.strerror}") from exc
    if magic == PDDF_MAGIC:
        return read_pddf(path)
    if magic[:2] == b"P5":
        return read_pgm(path)
    raise RasterIOError(f"{os.fspath(path)}: unrecognised raster format")


def write_raster(path: str | os.PathLike, img: Raster) -> None:
    """Write PGM when the suffix is ``.pgm``/``.pnm``, PDDF otherwise."""
    if _PGM_SUFFIX.search(os.fspath(path)):
        write_pgm(path, img)
    else:
        write_pddf(path, img)
