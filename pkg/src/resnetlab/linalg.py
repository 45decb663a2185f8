"""Dense linear algebra for width-d vectors and d x d layer matrices.

Vectors and matrices are plain float64 ``numpy`` arrays; the helpers here add
the input validation and the deterministic spectral-norm estimator that the
certification suites rely on. Everything is pure and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITERS = 10_000


def as_vector(v, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally of length ``dim``."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError(f"expected a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InvalidInputError(f"expected length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("vector has non-finite entries")
    return arr


def as_matrix(M, side: int | None = None) -> np.ndarray:
    """Coerce to a finite square 2-D float64 array, optionally of side ``side``."""
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {arr.shape}")
    if side is not None and arr.shape[0] != side:
        raise InvalidInputError(f"expected side {side}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("matrix has non-finite entries")
    return arr


def euclidean_norm(v) -> float:
    """sqrt(sum v_i^2)."""
    return float(np.linalg.norm(as_vector(v)))


def frobenius_norm(M) -> float:
    """sqrt of the sum of squared entries."""
    arr = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("matrix has non-finite entries")
    return float(np.linalg.norm(arr))


def matvec(M, v) -> np.ndarray:
    mat = as_matrix(M)
    vec = as_vector(v, dim=mat.shape[1])
    return mat @ vec


def outer(u, v) -> np.ndarray:
    """Rank-one matrix u v^T."""
    uu = as_vector(u)
    vv = as_vector(v)
    if uu.shape[0] != vv.shape[0]:
        raise InvalidInputError("outer product requires equal lengths")
    return np.outer(uu, vv)


def hadamard(u, v) -> np.ndarray:
    """Elementwise product."""
    uu = as_vector(u)
    vv = as_vector(v)
    if uu.shape[0] != vv.shape[0]:
        raise InvalidInputError("hadamard product requires equal lengths")
    return uu * vv


@dataclass(frozen=True)
class SpectralEstimate:
    """Result of power iteration: largest singular value and convergence info."""

    value: float
    iterations: int
    converged: bool


def power_iteration(M, tol: float = SPECTRAL_TOL,
                    max_iters: int = SPECTRAL_MAX_ITERS) -> SpectralEstimate:
    """Largest singular value of M via power iteration on M^T M.

    The seed vector is the normalized all-ones vector so repeated runs are
    bit-identical. If the current iterate lands in the kernel of M^T M the
    seed falls back to standard basis vectors in index order; since those
    span the space, a zero matrix is the only way to exhaust them.
    """
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    mat = as_matrix(M)
    d = mat.shape[0]
    gram = mat.T @ mat
    seeds = [np.full(d, 1.0 / np.sqrt(d))]
    seeds.extend(np.eye(d)[i] for i in range(d))

    for seed in seeds:
        v = seed
        lam = float(v @ (gram @ v))
        degenerate = False
        for it in range(1, max_iters + 1):
            w = gram @ v
            norm_w = float(np.linalg.norm(w))
            if norm_w == 0.0:
                if lam == 0.0:
                    degenerate = True  # kernel seed: retry with next basis vector
                    break
                return SpectralEstimate(float(np.sqrt(max(lam, 0.0))), it, True)
            v = w / norm_w
            lam_new = float(v @ (gram @ v))
            if abs(lam_new - lam) <= tol * max(abs(lam_new), np.finfo(float).tiny):
                return SpectralEstimate(float(np.sqrt(max(lam_new, 0.0))), it, True)
            lam = lam_new
        if not degenerate:
            return SpectralEstimate(float(np.sqrt(max(lam, 0.0))), max_iters, False)
    return SpectralEstimate(0.0, 0, True)


def spectral_norm(M, tol: float = SPECTRAL_TOL,
                  max_iters: int = SPECTRAL_MAX_ITERS) -> float:
    """Largest singular value (best estimate even when iteration is capped)."""
    return power_iteration(M, tol=tol, max_iters=max_iters).value
