"""Principal dictionary denoising of patch groups.

A dictionary is learned per group; atoms are ranked by how many group
members use them (the nonzero count of their coefficient row), the
dictionary is cut into a high-frequency principal part and a residual
part, and the group is rebuilt from the principal part alone. Estimates
from overlapping groups are averaged back onto the pixel grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import CoverageError, NumericalError, ValidationError
from .grouping import PatchGroup
from .sparse import KsvdResult, SparseStop, ksvd_learn

__all__ = [
    "AtomFrequencies",
    "PrincipalSplit",
    "GroupEstimate",
    "Accumulator",
    "atom_frequencies",
    "choose_threshold",
    "principal_split",
    "denoise_group",
]


@dataclass(frozen=True)
class AtomFrequencies:
    freq: np.ndarray
    order: np.ndarray

    @property
    def sorted(self) -> np.ndarray:
        return self.freq[self.order]


@dataclass
class PrincipalSplit:
    P: int
    principal: np.ndarray
    residual: np.ndarray
    principal_rows: np.ndarray
    residual_rows: np.ndarray
    order: np.ndarray

    def reordered(self) -> tuple[np.ndarray, np.ndarray]:
        """The full reordered pair ``(D', Lambda)``."""
        return (np.concatenate([self.principal, self.residual], axis=1),
                np.concatenate([self.principal_rows, self.residual_rows], axis=0))


def atom_frequencies(coeffs: np.ndarray) -> AtomFrequencies:
    """Per-atom usage counts and a stable descending ordering."""
    A = np.asarray(coeffs)
    freq = np.count_nonzero(A, axis=1).astype(np.int64)
    order = np.argsort(-freq, kind="stable")
    return AtomFrequencies(freq, order)


def choose_threshold(frequencies: AtomFrequencies, group_size: int | None = None) -> int:
    """Number of principal atoms ``P``.

    The modal usage count ``f*`` (smallest on ties) over unit bins is taken
    as the noise level of atom usage; atoms used strictly more often are
    principal. If none are, atoms at or above the median nonzero count are
    kept instead, and at least one atom always is.
    """
    f = np.asarray(frequencies.freq, dtype=np.int64)
    if f.size == 0 or not np.any(f > 0):
        raise NumericalError("all atom frequencies are zero: empty sparse coding")
    top = int(f.max()) if group_size is None else int(group_size)
    hist = np.bincount(f, minlength=top + 1)
    hist[0] = 0  # idle atoms say nothing about the group
    f_star = int(np.argmax(hist))
    P = int(np.sum(f > f_star))
    if P == 0:
        P = int(np.sum(f >= np.median(f[f > 0])))
    return max(P, 1)


def principal_split(dictionary: np.ndarray, coeffs: np.ndarray, P: int,
                    frequencies: AtomFrequencies | None = None) -> PrincipalSplit:
    D = np.asarray(dictionary, dtype=np.float64)
    A = np.asarray(coeffs, dtype=np.float64)
    K = D.shape[1]
    if A.shape[0] != K:
        raise ValidationError("coefficient rows do not match dictionary atoms")
    if not 1 <= P <= K:
        raise ValidationError(f"P must lie in 1..{K}, got {P}")
    if frequencies is None:
        frequencies = atom_frequencies(A)
    order = frequencies.order
    Dp, Ap = D[:, order], A[order]
    return PrincipalSplit(P, Dp[:, :P], Dp[:, P:], Ap[:P], Ap[P:], order)


@dataclass
class GroupEstimate:
    estimates: np.ndarray
    weights: np.ndarray
    P: int
    K: int
    mean_nnz: float
    final_error: float
    stop_bound: float

    @property
    def poorly_fit(self) -> bool:
        # K-SVD left the total residual above twice the group's error budget
        return self.final_error > 2.0 * self.stop_bound


def denoise_group(group: PatchGroup | np.ndarray, n_atoms: int, iters: int, stop: SparseStop,
                  seed: int = 0, weighting: str = "uniform", init: str = "dct") -> GroupEstimate:
    """Learn, rank, truncate and rebuild one group (columns of ``group``)."""
    Z = group.data if isinstance(group, PatchGroup) else np.asarray(group, dtype=np.float64)
    learned: KsvdResult = ksvd_learn(Z, n_atoms, iters, stop, seed=seed, init=init)
    freqs = atom_frequencies(learned.coefficients)
    P = choose_threshold(freqs, Z.shape[1])
    split = principal_split(learned.dictionary, learned.coefficients, P, freqs)
    est = split.principal @ split.principal_rows
    mean_nnz = float(freqs.freq.sum()) / Z.shape[1]
    M = Z.shape[1]
    if weighting == "uniform":
        w = np.ones(M)
    elif weighting == "sparsity":
        w = np.full(M, 1.0 / (1.0 + mean_nnz))
    else:
        raise ValidationError(f"unknown aggregation weighting {weighting!r}")
    bound = stop.error_bound * M if stop.error_bound > 0 else 0.0
    return GroupEstimate(est, w, P, n_atoms, mean_nnz, learned.final_error, bound)


@njit(cache=True, nogil=True)
def _scatter_add(total, weight, est, origins, w, p):
    for m in range(origins.shape[0]):
        y0 = origins[m, 0]
        x0 = origins[m, 1]
        wm = w[m]
        for a in range(p):
            for b in range(p):
                total[y0 + a, x0 + b] += wm * est[a * p + b, m]
                weight[y0 + a, x0 + b] += wm


class Accumulator:
    """Weighted running sums of overlapping patch estimates."""

    def __init__(self, shape: tuple[int, int], patch_side: int):
        self.sum = np.zeros(shape)
        self.weight = np.zeros(shape)
        self.patch_side = patch_side

    def add(self, estimates: np.ndarray, origins: np.ndarray, weights: np.ndarray) -> None:
        p = self.patch_side
        H, W = self.sum.shape
        est = np.asarray(estimates, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if est.shape != (p * p, len(origins)) or weights.shape != (len(origins),):
            raise ValidationError("estimates, origins and weights disagree in shape")
        origins = np.ascontiguousarray(origins, dtype=np.int64).reshape(-1, 2)
        bad = (origins < 0).any(axis=1) | (origins[:, 0] + p > H) | (origins[:, 1] + p > W)
        if bad.any():
            y, x = origins[np.argmax(bad)]
            raise ValidationError(f"patch origin ({y}, {x}) outside image")
        _scatter_add(self.sum, self.weight, np.ascontiguousarray(est), origins, weights, p)

    def merge(self, other: "Accumulator") -> None:
        self.sum += other.sum
        self.weight += other.weight

    def finalize(self) -> np.ndarray:
        if np.any(self.weight <= 0):
            missing = int(np.sum(self.weight <= 0))
            raise CoverageError(f"{missing} pixels received no patch estimate")
        return self.sum / self.weight
