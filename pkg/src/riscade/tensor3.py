"""Dense complex three-way tensors and CP factor triples.

Conventions (fixed package-wide):

* Storage: a tensor with dims (I, J, K) linearizes with the mode-1 index
  fastest, i.e. entry (i, j, k) sits at position i + I*j + I*J*k of
  :meth:`ComplexTensor3.linearized`.
* Unfolding: the mode-n unfolding has shape (dim_n, product of the rest)
  with the remaining modes ordered so the earlier one varies fastest.
  For a CP tensor with factors (A, B, C) this gives

      X(1)^T = (C kr B) A^T,   X(2)^T = (C kr A) B^T,   X(3)^T = (B kr A) C^T

  where ``kr`` is :func:`riscade.kernels.khatri_rao` (first operand's row
  index slowest).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import cp_fit_residual, cp_reconstruct_array, khatri_rao

__all__ = [
    "ComplexTensor3",
    "FactorTriple",
    "khatri_rao",
    "mode_unfold",
    "mode_fold",
    "cp_reconstruct",
    "cp_fit_residual",
    "frobenius_norm",
]


@dataclass(frozen=True)
class ComplexTensor3:
    """A dense order-3 complex tensor."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.complex128)
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-way array, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"degenerate dims {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def linearized(self) -> np.ndarray:
        """Flat copy in the canonical order (mode-1 index fastest)."""
        return self.data.ravel(order="F")

    @classmethod
    def from_linear(cls, flat: np.ndarray, dims: tuple[int, int, int]) -> "ComplexTensor3":
        flat = np.asarray(flat, dtype=np.complex128)
        i, j, k = dims
        if flat.size != i * j * k:
            raise ValueError(f"{flat.size} entries cannot fill dims {dims}")
        return cls(flat.reshape(dims, order="F"))

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class FactorTriple:
    """CP factor matrices (A, B, C) sharing a common column count (the rank)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.complex128)
        b = np.asarray(self.b, dtype=np.complex128)
        c = np.asarray(self.c, dtype=np.complex128)
        if a.ndim != 2 or b.ndim != 2 or c.ndim != 2:
            raise ValueError("factors must be matrices")
        if not (a.shape[1] == b.shape[1] == c.shape[1]):
            raise ValueError(
                f"rank mismatch: {a.shape[1]}, {b.shape[1]}, {c.shape[1]}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0])

    def column_norms(self) -> np.ndarray:
        """Per-component energy: product of the three column norms."""
        return (
            np.linalg.norm(self.a, axis=0)
            * np.linalg.norm(self.b, axis=0)
            * np.linalg.norm(self.c, axis=0)
        )

    def select(self, idx) -> "FactorTriple":
        return FactorTriple(self.a[:, idx], self.b[:, idx], self.c[:, idx])


def mode_unfold(t: ComplexTensor3, mode: int) -> np.ndarray:
    """Mode-n unfolding (n in {1, 2, 3}) under the package convention."""
    x = t.data
    i, j, k = x.shape
    if mode == 1:
        return x.transpose(0, 2, 1).reshape(i, k * j)
    if mode == 2:
        return x.transpose(1, 2, 0).reshape(j, k * i)
    if mode == 3:
        return x.transpose(2, 1, 0).reshape(k, j * i)
    raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


def mode_fold(mat: np.ndarray, mode: int, dims: tuple[int, int, int]) -> ComplexTensor3:
    """Inverse of :func:`mode_unfold` for the given target dims."""
    mat = np.asarray(mat, dtype=np.complex128)
    i, j, k = dims
    if mode == 1:
        if mat.shape != (i, k * j):
            raise ValueError(f"shape {mat.shape} does not fold to {dims} in mode 1")
        return ComplexTensor3(mat.reshape(i, k, j).transpose(0, 2, 1))
    if mode == 2:
        if mat.shape != (j, k * i):
            raise ValueError(f"shape {mat.shape} does not fold to {dims} in mode 2")
        return ComplexTensor3(mat.reshape(j, k, i).transpose(2, 0, 1))
    if mode == 3:
        if mat.shape != (k, j * i):
            raise ValueError(f"shape {mat.shape} does not fold to {dims} in mode 3")
        return ComplexTensor3(mat.reshape(k, j, i).transpose(2, 1, 0))
    raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


def cp_reconstruct(factors: FactorTriple) -> ComplexTensor3:
    """Dense tensor sum_r a_r o b_r o c_r."""
    return ComplexTensor3(cp_reconstruct_array(factors.a, factors.b, factors.c))


def frobenius_norm(t: ComplexTensor3) -> float:
    return t.norm()
