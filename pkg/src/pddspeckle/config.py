"""Despeckling configuration and its flat ``key=value`` text form."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .core_image import log_speckle_variance
from .errors import ConfigError, RasterIOError
from .grouping import PatchGeometry
from .sparse import SparseStop

__all__ = ["DenoiseConfig", "parse_key_values", "read_config_file"]

WEIGHTINGS = ("uniform", "sparsity")
DICT_INITS = ("dct", "data")


@dataclass(frozen=True)
class DenoiseConfig:
    looks: int
    patch_side: int = 7
    search_radius: int = 40
    group_size: int = 90
    stride: int = 3
    dict_size: int = 128
    ksvd_iters: int = 12
    sparsity_cap: int = 12
    error_gain: float = 1.1
    floor_scale: float = 1e-10
    seed: int = 0
    aggregation_weights: str = "uniform"
    dict_init: str = "dct"

    def __post_init__(self):
        for name in ("looks", "patch_side", "group_size", "stride", "dict_size",
                     "ksvd_iters", "sparsity_cap"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.search_radius < 0:
            raise ConfigError("search_radius must be >= 0")
        if not self.error_gain > 0:
            raise ConfigError("error_gain must be positive")
        if not self.floor_scale > 0:
            raise ConfigError("floor_scale must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.aggregation_weights not in WEIGHTINGS:
            raise ConfigError(f"aggregation_weights must be one of {WEIGHTINGS}")
        if self.dict_init not in DICT_INITS:
            raise ConfigError(f"dict_init must be one of {DICT_INITS}")
        self.geometry()  # validates patch/search geometry

    def geometry(self) -> PatchGeometry:
        return PatchGeometry(self.patch_side, self.search_radius, self.stride, self.group_size)

    def sparse_stop(self) -> SparseStop:
        """Per-patch OMP target ``N * gain * trigamma(L)`` plus the cardinality cap."""
        n = self.patch_side * self.patch_side
        return SparseStop(self.sparsity_cap, n * self.error_gain * log_speckle_variance(self.looks))

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, values: dict[str, str], **overrides) -> "DenoiseConfig":
        """Build from string values (config-file form) with typed overrides."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown configuration key {key!r}")
            kwargs[key] = _coerce(key, types[key], raw)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        if "looks" not in kwargs:
            raise ConfigError("looks is required")
        return cls(**kwargs)

    def replace(self, **changes) -> "DenoiseConfig":
        return dataclasses.replace(self, **changes)


def _coerce(key: str, type_name, raw: str):
    type_name = str(type_name)
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type_name}") from None
    return raw


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines.

    Blank lines and ``#`` comments are skipped. If the text contains a
    ``[config]`` section (as run manifests do), only that section is read.
    """
    lines = text.splitlines()
    if any(line.strip() == "[config]" for line in lines):
        section, keep = None, []
        for line in lines:
            s = line.strip()
            if s.startswith("[") and s.endswith("]"):
                section = s[1:-1]
            elif section == "config":
                keep.append(line)
        lines = keep
    out = {}
    for lineno, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s.startswith("[") and s.endswith("]"):
            continue
        key, sep, value = s.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {s!r}")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_key_values(fh.read())
    except OSError as exc:
        raise RasterIOError(f"cannot read config {os.fspath(path)}: {exc.strerror}") from exc
