"""Seeded randomness, Gaussian linear algebra helpers, and the central-difference
gradient oracle that the rest of the test suite leans on."""

from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

SYMMETRY_RTOL = 1e-12
DEFAULT_FD_STEP = 1e-5


class FactorizationError(ValueError):
    """Covariance matrix is not symmetric positive definite."""


class SeededRng:
    """Deterministic random stream: same seed + same call sequence, same bits.

    Independent substreams are derived by name via :meth:`child`, so concurrent
    consumers can own disjoint streams from one root seed.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_path))
        )
        self.position = 0

    def child(self, name: str | int) -> "SeededRng":
        """Derive an independent stream keyed by a stable name."""
        if isinstance(name, int):
            key = name
        else:
            key = zlib.crc32(name.encode("utf-8"))
        return SeededRng(self.seed, self._path + (key,))

    def normal(self, size=None) -> np.ndarray:
        self.position += 1
        return self._gen.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        self.position += 1
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        self.position += 1
        return self._gen.integers(low, high, size=size)

    def choice(self, candidates, size=None, replace: bool = True):
        self.position += 1
        return self._gen.choice(candidates, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        self.position += 1
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, path={self._path}, position={self.position})"


def check_symmetric_pd(matrix: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Validate symmetry (1e-12 relative) and positive definiteness via Cholesky.

    Returns the lower Cholesky factor. No silent jittering: callers that expect
    near-singular inputs must regularize before calling.
    """
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise FactorizationError(f"{name} must be square, got shape {mat.shape}")
    scale = max(np.abs(mat).max(), 1.0)
    if np.abs(mat - mat.T).max() > SYMMETRY_RTOL * scale:
        raise FactorizationError(f"{name} is not symmetric within {SYMMETRY_RTOL} relative tolerance")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"{name} is not positive definite: {exc}") from exc


def gaussian_sample(rng: SeededRng, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Draw mean + L z with L the Cholesky factor of cov and z standard normal."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.ndim != 1:
        raise ValueError(f"mean must be a vector, got shape {mean.shape}")
    chol = check_symmetric_pd(cov)
    if chol.shape[0] != mean.shape[0]:
        raise ValueError(f"mean dimension {mean.shape[0]} != covariance dimension {chol.shape[0]}")
    return mean + chol @ rng.normal(mean.shape[0])


def gaussian_kl(
    mean_a: np.ndarray, cov_a: np.ndarray, mean_b: np.ndarray, cov_b: np.ndarray
) -> float:
    """Closed-form KL(N_a || N_b) between multivariate normals."""
    mean_a = np.asarray(mean_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    if mean_a.shape != mean_b.shape:
        raise ValueError(f"mean dimensions differ: {mean_a.shape} vs {mean_b.shape}")
    chol_a = check_symmetric_pd(cov_a, "cov_a")
    chol_b = check_symmetric_pd(cov_b, "cov_b")
    if chol_a.shape[0] != mean_a.shape[0] or chol_b.shape[0] != mean_a.shape[0]:
        raise ValueError("covariance dimensions do not match the means")
    n = mean_a.shape[0]
    # tr(cov_b^-1 cov_a) = ||L_b^-1 L_a||_F^2, via triangular solve
    m = np.linalg.solve(chol_b, chol_a)
    trace_term = float(np.sum(m * m))
    delta = np.linalg.solve(chol_b, mean_b - mean_a)
    quad_term = float(delta @ delta)
    logdet_term = 2.0 * float(
        np.sum(np.log(np.diag(chol_b))) - np.sum(np.log(np.diag(chol_a)))
    )
    return max(0.0, 0.5 * (trace_term + quad_term - n + logdet_term))


def finite_difference_gradient(
    fn: Callable[[np.ndarray], float], point: np.ndarray, step: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Central-difference gradient, component i = (fn(x+h e_i) - fn(x-h e_i)) / 2h.

    Central (not forward) differences: the O(h^2) truncation error is what makes
    the 1e-4 relative-error acceptance bound on analytic gradients reachable.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(point, dtype=np.float64).copy()
    grad = np.empty_like(x)
    flat = x.ravel()
    out = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn(x))
        flat[i] = orig - step
        f_minus = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite function value near component {i}")
        out[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative difference, guarded for near-zero denominators."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)
