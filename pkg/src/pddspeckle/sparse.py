"""Sparse coding engine: orthogonal matching pursuit and K-SVD.

Dictionaries are ``(N, K)`` arrays whose columns (atoms) have unit norm.
Coefficients are dense ``(K, M)`` arrays; a structural zero is an exact
``0.0`` and every nonzero entry belongs to the OMP support of its column.

OMP works from the Gram matrix ``D.T @ D`` with an incrementally grown
Cholesky factor, so each column costs ``O(K s)`` per selected atom rather
than a full correlation pass. K-SVD alternates OMP coding with per-atom
rank-1 updates of the restricted residual.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ValidationError

__all__ = [
    "SparseStop",
    "OmpResult",
    "KsvdResult",
    "omp",
    "omp_batch",
    "ksvd_learn",
    "reconstruct",
    "dct_dictionary",
    "initial_dictionary",
    "normalize_columns",
]

# relative pivot below which a candidate atom is linearly dependent on the support
_PIVOT_TOL = 1e-10
_DUPLICATE_COHERENCE = 0.999
_POWER_ITERS = 40


@dataclass(frozen=True)
class SparseStop:
    """Stopping rule for OMP: cardinality cap and squared-residual target.

    Coding of a column stops as soon as its squared residual is at most
    ``error_bound`` or its support reaches ``max_nonzeros``.
    """

    max_nonzeros: int | None = None
    error_bound: float = 0.0

    def __post_init__(self):
        if self.max_nonzeros is not None and self.max_nonzeros < 1:
            raise ValidationError("max_nonzeros must be >= 1")
        if not self.error_bound >= 0:
            raise ValidationError("error_bound must be non-negative")
        if self.max_nonzeros is None and not (0 < self.error_bound < math.inf):
            raise ValidationError("an unbounded SparseStop needs a positive finite error_bound")

    def cap(self, n_atoms: int, dim: int) -> int:
        limit = min(n_atoms, dim)
        return limit if self.max_nonzeros is None else min(self.max_nonzeros, limit)


@dataclass
class OmpResult:
    coefficients: np.ndarray
    support: np.ndarray
    residual_norms: np.ndarray
    degenerate: bool

    @property
    def iterations(self) -> int:
        return len(self.support)


@dataclass
class KsvdResult:
    dictionary: np.ndarray
    coefficients: np.ndarray
    error_trace: list[float]
    replaced_atoms: list[int] = field(default_factory=list)
    unused_atoms: int = 0

    @property
    def final_error(self) -> float:
        return self.error_trace[-1] if self.error_trace else math.nan


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _omp_gram(dtx, gram, xnorm2, s_max, eps2, excluded, coef, support, trace, work, chol, blocked):
    """Code one signal. Returns (n_selected, degenerate_flag).

    ``coef`` (length K) is overwritten; ``support`` receives the selection
    order and ``trace`` the squared residual after each selection. ``work``
    (K + 4 * s_max floats), ``chol`` (s_max x s_max) and ``blocked`` (K
    bools) are scratch space.
    """
    K = dtx.shape[0]
    for k in range(K):
        coef[k] = 0.0
    if xnorm2 <= 0.0 or xnorm2 <= eps2 or s_max <= 0:
        return 0, False
    alpha = work[:K]
    gamma = work[K : K + s_max]
    rhs = work[K + s_max : K + 2 * s_max]
    w = work[K + 2 * s_max : K + 3 * s_max]
    y = work[K + 3 * s_max : K + 4 * s_max]
    for k in range(K):
        alpha[k] = dtx[k]
        blocked[k] = excluded[k]
    n = 0
    degenerate = False
    r2 = xnorm2
    while n < s_max and r2 > eps2:
        best = -1
        best_val = 0.0
        for k in range(K):
            if not blocked[k]:
                a = abs(alpha[k])
                if a > best_val:
                    best_val = a
                    best = k
        if best < 0:
            break
        # extend the Cholesky factor of gram[S, S]
        for i in range(n):
            acc = gram[support[i], best]
            for j in range(i):
                acc -= chol[i, j] * w[j]
            w[i] = acc / chol[i, i]
        piv = gram[best, best]
        for i in range(n):
            piv -= w[i] * w[i]
        blocked[best] = True
        if piv <= _PIVOT_TOL * gram[best, best]:
            degenerate = True
            continue
        for i in range(n):
            chol[n, i] = w[i]
        chol[n, n] = math.sqrt(piv)
        support[n] = best
        rhs[n] = dtx[best]
        n += 1
        # solve chol chol^T gamma = rhs
        for i in range(n):
            acc = rhs[i]
            for j in range(i):
                acc -= chol[i, j] * y[j]
            y[i] = acc / chol[i, i]
        for i in range(n - 1, -1, -1):
            acc = y[i]
            for j in range(i + 1, n):
                acc -= chol[j, i] * gamma[j]
            gamma[i] = acc / chol[i, i]
        for k in range(K):
            acc = dtx[k]
            for i in range(n):
                acc -= gram[k, support[i]] * gamma[i]
            alpha[k] = acc
        r2 = xnorm2
        for i in range(n):
            r2 -= gamma[i] * rhs[i]
        if r2 < 0.0:
            r2 = 0.0
        trace[n - 1] = r2
    for i in range(n):
        coef[support[i]] = gamma[i]
    return n, degenerate


@njit(cache=True, nogil=True)
def _omp_one(dtx, gram, xnorm2, s_max, eps2, excluded, coef, support, trace):
    K = dtx.shape[0]
    s = max(s_max, 1)
    return _omp_gram(dtx, gram, xnorm2, s_max, eps2, excluded, coef, support, trace,
                     np.zeros(K + 4 * s), np.zeros((s, s)), np.zeros(K, dtype=np.bool_))


@njit(cache=True, nogil=True)
def _omp_columns(D, X, s_max, eps2, excluded, out):
    """OMP on every column of X; writes codes into ``out`` (K x M)."""
    return _omp_columns_gram(D, D.T @ D, X, s_max, eps2, excluded, out)


@njit(cache=True, nogil=True)
def _omp_columns_gram(D, gram, X, s_max, eps2, excluded, out):
    dtx = np.ascontiguousarray((X.T @ D))
    K = D.shape[1]
    M = X.shape[1]
    s = max(s_max, 1)
    support = np.zeros(s, dtype=np.int64)
    trace = np.zeros(s)
    coef = np.zeros(K)
    work = np.zeros(K + 4 * s)
    chol = np.zeros((s, s))
    blocked = np.zeros(K, dtype=np.bool_)
    n_degenerate = 0
    for m in range(M):
        xnorm2 = 0.0
        for i in range(X.shape[0]):
            xnorm2 += X[i, m] * X[i, m]
        n, deg = _omp_gram(dtx[m], gram, xnorm2, s_max, eps2, excluded, coef, support, trace,
                           work, chol, blocked)
        if deg:
            n_degenerate += 1
        for k in range(K):
            out[k, m] = coef[k]
    return n_degenerate


@njit(cache=True, nogil=True)
def _column_sq_norms(R):
    M = R.shape[1]
    out = np.zeros(M)
    for m in range(M):
        acc = 0.0
        for i in range(R.shape[0]):
            acc += R[i, m] * R[i, m]
        out[m] = acc
    return out


@njit(cache=True, nogil=True)
def _sparse_residual(X, D, A):
    """``X - D @ A`` exploiting the sparsity of ``A``."""
    N, M = X.shape
    K = D.shape[1]
    R = X.copy()
    for m in range(M):
        for k in range(K):
            a = A[k, m]
            if a != 0.0:
                for i in range(N):
                    R[i, m] -= D[i, k] * a
    return R


@njit(cache=True, nogil=True)
def _power_left(E, start):
    """Leading left singular vector of ``E`` by power iteration from ``start``.

    Returns None when the iteration has not settled to round-off level
    within the budget (small spectral gap); callers then use ``eigh``.
    """
    N = E.shape[0]
    u = start.copy()
    nrm = math.sqrt(np.sum(u * u))
    if nrm == 0.0:
        return None
    u /= nrm
    rho = -1.0
    for _ in range(_POWER_ITERS):
        v = E.T @ u
        w = E @ v
        rho_new = np.sum(v * v)
        nrm = math.sqrt(np.sum(w * w))
        if nrm == 0.0:
            return None
        w /= nrm
        delta = 0.0
        for i in range(N):
            delta = max(delta, abs(w[i] - u[i]))
        u = w
        if delta < 1e-12 and abs(rho_new - rho) <= 1e-14 * rho_new:
            return u
        rho = rho_new
    return None


@njit(cache=True, nogil=True)
def _principal_pair(E, d_old):
    """Best rank-1 fit ``u c`` of ``E`` (N x q) with unit ``u``.

    Falls back to the current atom whenever floating point makes the SVD
    answer capture less energy than ``d_old`` does, so an atom update can
    never increase the residual.
    """
    N, q = E.shape
    if q == 1:
        nrm = 0.0
        for i in range(N):
            nrm += E[i, 0] * E[i, 0]
        nrm = math.sqrt(nrm)
        u = np.empty(N)
        c = np.empty(1)
        if nrm == 0.0:
            u[:] = d_old
            c[0] = 0.0
            return u, c
        for i in range(N):
            u[i] = E[i, 0] / nrm
        c[0] = nrm
        return u, c
    u = _power_left(E, d_old)
    if u is None:
        if q <= N:
            w, V = np.linalg.eigh(E.T @ E)
            v = V[:, q - 1].copy()
            u = E @ v
        else:
            w, U = np.linalg.eigh(E @ E.T)
            u = U[:, N - 1].copy()
    nrm = math.sqrt(np.sum(u * u))
    if nrm > 0.0:
        u = u / nrm
        c = E.T @ u
    else:
        u = d_old.copy()
        c = E.T @ u
    c_old = E.T @ d_old
    if np.sum(c * c) < np.sum(c_old * c_old):
        return d_old.copy(), c_old
    return u, c


@njit(cache=True, nogil=True)
def _ksvd_kernel(X, D, iters, s_max, eps2, fallback, trace, replaced):
    """In-place K-SVD on dictionary ``D``; returns the final coefficients.

    ``fallback`` holds unit vectors used when no training column carries
    residual energy to seed a replacement atom. ``trace[it]`` receives the
    total squared residual after iteration ``it``; ``replaced[it]`` the
    number of atoms re-seeded during that iteration.
    """
    N, M = X.shape
    K = D.shape[1]
    A = np.zeros((K, M))
    R = X.copy()
    excluded = np.zeros(K, dtype=np.bool_)
    n_fallback = 0
    gram = D.T @ D
    for it in range(iters):
        # sparse coding, keeping the previous code where it is strictly better
        fresh = np.zeros((K, M))
        _omp_columns_gram(D, gram, X, s_max, eps2, excluded, fresh)
        R_new = _sparse_residual(X, D, fresh)
        if it > 0:
            # R still holds X - D @ A for the previous codes
            res_old = _column_sq_norms(R)
            res_new = _column_sq_norms(R_new)
            for m in range(M):
                if res_old[m] < res_new[m]:
                    for k in range(K):
                        fresh[k, m] = A[k, m]
                    for i in range(N):
                        R_new[i, m] = R[i, m]
        A = fresh
        R = R_new
        res = _column_sq_norms(R)
        # columns ranked by residual, worst first, for re-seeding idle atoms
        worst = np.argsort(-res, kind="mergesort")
        next_worst = 0
        n_replaced = 0
        for k in range(K):
            cnt = 0
            for m in range(M):
                if A[k, m] != 0.0:
                    cnt += 1
            if cnt == 0:
                seeded = False
                while next_worst < M:
                    m = worst[next_worst]
                    next_worst += 1
                    # earlier updates in this sweep may have changed R[:, m]
                    r2 = 0.0
                    for i in range(N):
                        r2 += R[i, m] * R[i, m]
                    if r2 > 1e-12 * (1.0 + np.sum(X[:, m] * X[:, m])):
                        nrm = math.sqrt(r2)
                        for i in range(N):
                            D[i, k] = R[i, m] / nrm
                        seeded = True
                        break
                if not seeded:
                    D[:, k] = fallback[:, n_fallback % fallback.shape[1]]
                    n_fallback += 1
                n_replaced += 1
                continue
            omega = np.empty(cnt, dtype=np.int64)
            j = 0
            for m in range(M):
                if A[k, m] != 0.0:
                    omega[j] = m
                    j += 1
            E = np.empty((N, cnt))
            for jj in range(cnt):
                m = omega[jj]
                for i in range(N):
                    E[i, jj] = R[i, m] + D[i, k] * A[k, m]
            u, c = _principal_pair(E, D[:, k].copy())
            # deterministic sign: largest-magnitude entry positive
            imax = 0
            for i in range(N):
                if abs(u[i]) > abs(u[imax]):
                    imax = i
            if u[imax] < 0.0:
                u = -u
                c = -c
            for i in range(N):
                D[i, k] = u[i]
            for jj in range(cnt):
                m = omega[jj]
                A[k, m] = c[jj]
                for i in range(N):
                    R[i, m] = E[i, jj] - u[i] * c[jj]
        # near-duplicate atoms are kept out of the next coding pass
        gram = D.T @ D
        for i in range(K):
            excluded[i] = False
            for j in range(i):
                if abs(gram[i, j]) > _DUPLICATE_COHERENCE:
                    excluded[i] = True
                    break
        trace[it] = np.sum(R * R)
        replaced[it] = n_replaced
    return A


# ------------------------------------------------------------- public API


def normalize_columns(D: np.ndarray) -> np.ndarray:
    D = np.array(D, dtype=np.float64)
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise ValidationError("dictionary has an all-zero column")
    return D / norms


def _check_dictionary(D: np.ndarray) -> np.ndarray:
    D = np.ascontiguousarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise ValidationError("dictionary must be a 2-D (N, K) array")
    norms = np.linalg.norm(D, axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValidationError("dictionary atoms must have unit norm")
    return D


def omp(signal: np.ndarray, dictionary: np.ndarray, stop: SparseStop) -> OmpResult:
    """Orthogonal matching pursuit for a single signal.

    Each step picks the unused atom with the largest absolute correlation
    with the current residual (lowest index on ties) and refits all
    selected coefficients by least squares. An atom that is numerically
    dependent on the current support is skipped and the result is flagged
    ``degenerate``.
    """
    D = _check_dictionary(dictionary)
    x = np.asarray(signal, dtype=np.float64).ravel()
    if x.shape[0] != D.shape[0]:
        raise ValidationError(f"signal length {x.shape[0]} != atom length {D.shape[0]}")
    s_max = stop.cap(D.shape[1], D.shape[0])
    K = D.shape[1]
    coef = np.zeros(K)
    support = np.zeros(max(s_max, 1), dtype=np.int64)
    trace = np.zeros(max(s_max, 1))
    n, degenerate = _omp_one(
        D.T @ x, D.T @ D, float(x @ x), s_max, float(stop.error_bound),
        np.zeros(K, dtype=np.bool_), coef, support, trace,
    )
    return OmpResult(coef, support[:n].copy(), trace[:n].copy(), bool(degenerate))


def omp_batch(signals: np.ndarray, dictionary: np.ndarray, stop: SparseStop) -> np.ndarray:
    """Code every column of ``signals`` (N x M); returns the (K x M) codes."""
    D = _check_dictionary(dictionary)
    X = np.ascontiguousarray(signals, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != D.shape[0]:
        raise ValidationError("signals must be an (N, M) array matching the dictionary")
    out = np.zeros((D.shape[1], X.shape[1]))
    _omp_columns(D, X, stop.cap(D.shape[1], D.shape[0]), float(stop.error_bound),
                 np.zeros(D.shape[1], dtype=np.bool_), out)
    return out


def reconstruct(dictionary: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    D = np.asarray(dictionary, dtype=np.float64)
    A = np.asarray(coefficients, dtype=np.float64)
    if D.shape[1] != A.shape[0]:
        raise ValidationError(f"dictionary has {D.shape[1]} atoms but coefficients have {A.shape[0]} rows")
    return D @ A


def dct_dictionary(patch_side: int, n_atoms: int) -> np.ndarray:
    return _dct_dictionary(patch_side, n_atoms).copy()


@functools.lru_cache(maxsize=8)
def _dct_dictionary(patch_side: int, n_atoms: int) -> np.ndarray:
    """Separable overcomplete 2-D DCT dictionary with ``n_atoms`` atoms.

    Built from a ``patch_side x q`` 1-D overcomplete DCT with
    ``q = ceil(sqrt(n_atoms))``; the ``n_atoms`` lowest-frequency 2-D atoms
    (by ``fy + fx``, then ``fy``) are kept. Column 0 is the flat atom.
    """
    q = max(patch_side, math.ceil(math.sqrt(n_atoms)))
    t = np.arange(patch_side)
    basis = np.cos(np.outer(t, np.arange(q)) * np.pi / q)
    basis[:, 1:] -= basis[:, 1:].mean(axis=0)
    basis /= np.linalg.norm(basis, axis=0)
    pairs = sorted(((fy, fx) for fy in range(q) for fx in range(q)), key=lambda p: (p[0] + p[1], p[0], p[1]))
    atoms = [np.outer(basis[:, fy], basis[:, fx]).ravel() for fy, fx in pairs[:n_atoms]]
    return normalize_columns(np.stack(atoms, axis=1))


def initial_dictionary(patches: np.ndarray, n_atoms: int, rng: np.random.Generator,
                       method: str = "dct") -> np.ndarray:
    """Starting dictionary for K-SVD.

    ``"dct"`` returns :func:`dct_dictionary` (requires square patches).
    ``"data"`` samples distinct training columns without replacement and pads
    with random unit vectors when there are fewer columns than atoms.
    """
    N, M = patches.shape
    if method == "dct":
        side = math.isqrt(N)
        if side * side != N:
            raise ValidationError("dct initialisation needs square patches")
        return dct_dictionary(side, n_atoms)
    if method != "data":
        raise ValidationError(f"unknown dictionary initialisation {method!r}")
    norms = np.linalg.norm(patches, axis=0)
    usable = np.flatnonzero(norms > 0)
    take = rng.permutation(usable)[: min(n_atoms, usable.size)]
    cols = [patches[:, take] / norms[take]]
    if take.size < n_atoms:
        cols.append(normalize_columns(rng.standard_normal((N, n_atoms - take.size))))
    return np.ascontiguousarray(np.concatenate(cols, axis=1))


def ksvd_learn(patches: np.ndarray, n_atoms: int, iters: int, stop: SparseStop,
               seed: int | np.random.SeedSequence = 0, init: str | np.ndarray = "dct") -> KsvdResult:
    """Learn an ``n_atoms`` dictionary for the columns of ``patches``.

    Every iteration codes all columns with OMP (a column keeps its previous
    code when that code has strictly smaller residual under the current
    dictionary), then sweeps the atoms: a used atom and its coefficient row
    are replaced by the leading singular pair of the residual restricted to
    the columns that use it; an unused atom is re-seeded with the
    normalised residual of the worst-represented column not yet used for
    seeding. Atoms nearly parallel (|cos| > 0.999) to a lower-indexed atom
    are barred from the next coding pass. The total squared residual is
    non-increasing across iterations.
    """
    X = np.ascontiguousarray(patches, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValidationError("ksvd_learn needs an (N, M) training matrix with M >= 2")
    if n_atoms < 1 or iters < 1:
        raise ValidationError("n_atoms and iters must be positive")
    rng = np.random.default_rng(seed)
    if isinstance(init, str):
        D = initial_dictionary(X, n_atoms, rng, init)
    else:
        D = _check_dictionary(init).copy()
        if D.shape != (X.shape[0], n_atoms):
            raise ValidationError("initial dictionary has the wrong shape")
    D = np.ascontiguousarray(D)
    fallback = normalize_columns(rng.standard_normal((X.shape[0], 8)))
    trace = np.zeros(iters)
    replaced = np.zeros(iters, dtype=np.int64)
    A = _ksvd_kernel(X, D, iters, stop.cap(n_atoms, X.shape[0]), float(stop.error_bound),
                     fallback, trace, replaced)
    unused = int(np.sum(~np.any(A != 0.0, axis=1)))
    return KsvdResult(D, A, trace.tolist(), replaced.tolist(), unused)
