"""Thin CSR operator wrapper used throughout the solvers.

The heavy lifting is scipy.sparse; this class pins down the surface the
solvers rely on (apply / transpose-apply with ⟨y, Ax⟩ = ⟨Aᵀy, x⟩ to machine
precision) and caches the transpose so adjoint right-hand sides stay cheap.
All arithmetic is real; the conjugate-transpose of the continuous theory
reduces to the plain transpose here.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class SparseOperator:
    """Real CSR matrix with forward and transpose application."""

    def __init__(self, matrix: sp.spmatrix):
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=False)
        csr.sort_indices()
        self._csr = csr
        self._csr_t: sp.csr_matrix | None = None

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_dense(cls, array: np.ndarray) -> "SparseOperator":
        return cls(sp.csr_matrix(np.asarray(array, dtype=np.float64)))

    @classmethod
    def zeros(cls, n: int) -> "SparseOperator":
        return cls(sp.csr_matrix((n, n)))

    # -- core surface ----------------------------------------------------------

    @property
    def rows(self) -> int:
        return self._csr.shape[0]

    @property
    def cols(self) -> int:
        return self._csr.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    @property
    def matrix(self) -> sp.csr_matrix:
        """Underlying CSR matrix (treat as read-only)."""
        return self._csr

    @property
    def indptr(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def transpose_apply(self, y: np.ndarray) -> np.ndarray:
        return self._transposed() @ y

    def transpose(self) -> "SparseOperator":
        return SparseOperator(self._transposed())

    def _transposed(self) -> sp.csr_matrix:
        if self._csr_t is None:
            t = self._csr.T.tocsr()
            t.sort_indices()
            self._csr_t = t
        return self._csr_t

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def abs_offdiag_row_sums(self) -> np.ndarray:
        """Row sums of |A_ij| over j≠i (Gershgorin radii)."""
        total = np.asarray(np.abs(self._csr).sum(axis=1)).ravel()
        return total - np.abs(self._csr.diagonal())

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    # -- arithmetic (used to form A + J and dt·A) ----------------------------

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self._csr + other._csr)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self._csr - other._csr)

    def __mul__(self, scalar: float) -> "SparseOperator":
        return SparseOperator(self._csr * float(scalar))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"SparseOperator({self.rows}x{self.cols}, nnz={self.nnz})"
