"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Both implementations of every kernel are importable (``*_numpy`` / ``*_numba``)
so they can be benchmarked against each other; the unsuffixed public names are
bound at import time. Set ``TCNSIM_NUMBA=0`` to force the numpy path, e.g. on
machines where JIT compilation is unwanted. ``TCNSIM_MAX_WORKERS`` caps numba's
thread count.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _NUMBA_IMPORTED = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _NUMBA_IMPORTED = False

NUMBA_ENABLED = _NUMBA_IMPORTED and os.environ.get("TCNSIM_NUMBA", "1") != "0"

if NUMBA_ENABLED:
    _workers = os.environ.get("TCNSIM_MAX_WORKERS")
    if _workers:
        try:
            numba.set_num_threads(max(1, min(int(_workers), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# pairwise squared Euclidean distances
# ---------------------------------------------------------------------------

def pairwise_sqdist_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between rows of a (n,d) and rows of b (m,d) -> (n,m)."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _pairwise_sqdist_loop(a, b):
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                delta = a[i, k] - b[j, k]
                acc += delta * delta
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# nearest-neighbor row argmin with optional index exclusion
# ---------------------------------------------------------------------------

def nearest_neighbor_indices_numpy(
    a: np.ndarray, b: np.ndarray, exclude: np.ndarray | None = None
) -> np.ndarray:
    """Index into b of the nearest row for every row of a.

    ``exclude[i]`` (if given) is a column index masked out for query i; pass -1
    for rows with nothing to exclude. Ties resolve to the lowest index.
    """
    dist = pairwise_sqdist_numpy(a, b)
    if exclude is not None:
        rows = np.nonzero(exclude >= 0)[0]
        dist[rows, exclude[rows]] = np.inf
    return np.argmin(dist, axis=1)


def _nearest_neighbor_loop(a, b, exclude):
    n, d = a.shape
    m = b.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        best_j = 0
        skip = exclude[i]
        for j in range(m):
            if j == skip:
                continue
            acc = 0.0
            for k in range(d):
                delta = a[i, k] - b[j, k]
                acc += delta * delta
            if acc < best:
                best = acc
                best_j = j
        out[i] = best_j
    return out


def _nearest_neighbor_numba_wrap(a, b, exclude=None):
    if exclude is None:
        exclude = np.full(a.shape[0], -1, dtype=np.int64)
    else:
        exclude = np.asarray(exclude, dtype=np.int64)
    return _nearest_neighbor_jit(
        np.ascontiguousarray(a, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        exclude,
    )


# ---------------------------------------------------------------------------
# sigmoid-weighted linear activation and its derivative
# ---------------------------------------------------------------------------

def silu_numpy(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def silu_grad_numpy(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def _silu_loop(x):
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        v = flat_in[i]
        flat_out[i] = v / (1.0 + np.exp(-v))
    return out


def _silu_grad_loop(x):
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        v = flat_in[i]
        s = 1.0 / (1.0 + np.exp(-v))
        flat_out[i] = s * (1.0 + v * (1.0 - s))
    return out


if NUMBA_ENABLED:
    pairwise_sqdist_numba = numba.njit(cache=True)(_pairwise_sqdist_loop)
    _nearest_neighbor_jit = numba.njit(cache=True)(_nearest_neighbor_loop)
    nearest_neighbor_indices_numba = _nearest_neighbor_numba_wrap
    silu_numba = numba.njit(cache=True)(_silu_loop)
    silu_grad_numba = numba.njit(cache=True)(_silu_grad_loop)

    pairwise_sqdist = pairwise_sqdist_numba
    nearest_neighbor_indices = nearest_neighbor_indices_numba
    silu = silu_numba
    silu_grad = silu_grad_numba
else:
    pairwise_sqdist_numba = None
    nearest_neighbor_indices_numba = None
    silu_numba = None
    silu_grad_numba = None

    pairwise_sqdist = pairwise_sqdist_numpy
    nearest_neighbor_indices = nearest_neighbor_indices_numpy
    silu = silu_numpy
    silu_grad = silu_grad_numpy
