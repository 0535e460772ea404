"""Hot multilinear kernels with numba and pure-numpy implementations.

These three operations sit inside the alternating-least-squares sweep loop
and are called on the order of a million times during a Monte-Carlo sweep,
at sizes small enough that call overhead matters:

* :func:`khatri_rao` - column-wise Khatri-Rao product
* :func:`cp_reconstruct_array` - dense tensor from a rank-U factor triple
* :func:`cp_fit_residual` - squared Frobenius misfit without materializing
  the reconstruction

The public names bind to one implementation at import time; see
:mod:`riscade.backend`. ``benchmarks/bench_kernels.py`` times both.
"""

import numpy as np

from .backend import HAVE_NUMBA, USE_NUMBA


def _khatri_rao_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    i, r = a.shape
    j = b.shape[0]
    return (a[:, None, :] * b[None, :, :]).reshape(i * j, r)


def _cp_reconstruct_numpy(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.einsum("ir,jr,kr->ijk", a, b, c)


def _cp_fit_residual_numpy(y: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    diff = y - np.einsum("ir,jr,kr->ijk", a, b, c)
    return float(np.vdot(diff, diff).real)


if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _khatri_rao_numba(a, b):  # pragma: no cover - exercised via dispatch
        i, r = a.shape
        j = b.shape[0]
        out = np.empty((i * j, r), dtype=np.complex128)
        for p in range(i):
            for q in range(j):
                row = p * j + q
                for s in range(r):
                    out[row, s] = a[p, s] * b[q, s]
        return out

    @njit(cache=True)
    def _cp_reconstruct_numba(a, b, c):  # pragma: no cover
        i, r = a.shape
        j = b.shape[0]
        k = c.shape[0]
        out = np.zeros((i, j, k), dtype=np.complex128)
        for s in range(r):
            for p in range(i):
                ap = a[p, s]
                for q in range(j):
                    apb = ap * b[q, s]
                    for t in range(k):
                        out[p, q, t] += apb * c[t, s]
        return out

    @njit(cache=True)
    def _cp_fit_residual_numba(y, a, b, c):  # pragma: no cover
        i, j, k = y.shape
        r = a.shape[1]
        acc = 0.0
        for p in range(i):
            for q in range(j):
                for t in range(k):
                    model = 0.0 + 0.0j
                    for s in range(r):
                        model += a[p, s] * b[q, s] * c[t, s]
                    d = y[p, q, t] - model
                    acc += d.real * d.real + d.imag * d.imag
        return acc


if USE_NUMBA:
    _khatri_rao_impl = _khatri_rao_numba
    _cp_reconstruct_impl = _cp_reconstruct_numba
    _cp_fit_residual_impl = _cp_fit_residual_numba
else:
    _khatri_rao_impl = _khatri_rao_numpy
    _cp_reconstruct_impl = _cp_reconstruct_numpy
    _cp_fit_residual_impl = _cp_fit_residual_numpy


def _as_c128(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.complex128)


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Khatri-Rao product.

    Column r of the result is kron(a[:, r], b[:, r]), i.e. a's row index
    varies slowest. Shapes (I, R) and (J, R) give (I*J, R).
    """
    a = _as_c128(a)
    b = _as_c128(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column-count mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    return _khatri_rao_impl(a, b)


def cp_reconstruct_array(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Dense (I, J, K) tensor sum_r a_r o b_r o c_r from factor matrices."""
    a, b, c = _as_c128(a), _as_c128(b), _as_c128(c)
    if not (a.shape[1] == b.shape[1] == c.shape[1]):
        raise ValueError("factor matrices must share a column count")
    return _cp_reconstruct_impl(a, b, c)


def cp_fit_residual(y: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Squared Frobenius norm of (y - sum_r a_r o b_r o c_r)."""
    y = _as_c128(y)
    a, b, c = _as_c128(a), _as_c128(b), _as_c128(c)
    if y.shape != (a.shape[0], b.shape[0], c.shape[0]):
        raise ValueError("tensor/factor shape mismatch")
    return float(_cp_fit_residual_impl(y, a, b, c))
