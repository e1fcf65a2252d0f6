"""Base (leaf) linear operators with structure-specific MVM laws.

Each leaf declares its differentiable parameter arrays (closure-backed leaves
declare none) and knows its own analytic transpose/adjoint where one exists.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import core
from .core import PSD, SELF_ADJOINT, UNITARY, LinearOperator, _freeze
from .errors import ConstructionError


def _as_payload(a, name):
    a = np.asarray(a)
    if a.size == 0:
        raise ConstructionError(f"{name} payload must be nonempty")
    if not np.issubdtype(a.dtype, np.number):
        raise ConstructionError(f"{name} payload must be numeric")
    if np.issubdtype(a.dtype, np.complexfloating):
        return _freeze(a.astype(np.complex128))
    return _freeze(a.astype(np.float64))


class Dense(LinearOperator):
    """Unstructured matrix stored as a 2-d array."""

    kind = "dense"

    def __init__(self, matrix):
        matrix = _as_payload(matrix, "dense")
        if matrix.ndim != 2:
            raise ConstructionError("dense payload must be a 2-d array")
        self.matrix = matrix
        super().__init__(matrix.shape[0], matrix.shape[1], matrix.dtype)

    def _mvm(self, v):
        return self.matrix @ v

    def _mvm_block(self, V):
        return self.matrix @ V

    def param_arrays(self):
        return {"matrix": self.matrix}

    def with_params(self, params):
        return Dense(params["matrix"])

    def _adjoint_leaf(self, conjugate):
        m = self.matrix.conj().T if conjugate else self.matrix.T
        return Dense(m)


class Diagonal(LinearOperator):
    """Diagonal matrix stored as its diagonal vector."""

    kind = "diagonal"

    def __init__(self, diag_values):
        d = _as_payload(diag_values, "diagonal")
        if d.ndim != 1:
            raise ConstructionError("diagonal payload must be a 1-d array")
        self.diag_values = d
        tags = set()
        if not np.issubdtype(d.dtype, np.complexfloating):
            tags.add(SELF_ADJOINT)
            if np.all(d >= 0):
                tags.add(PSD)
        super().__init__(d.shape[0], d.shape[0], d.dtype, tags)

    def _mvm(self, v):
        return self.diag_values * v

    def _mvm_block(self, V):
        return self.diag_values[:, None] * V

    def param_arrays(self):
        return {"diag": self.diag_values}

    def with_params(self, params):
        return Diagonal(params["diag"])

    def _adjoint_leaf(self, conjugate):
        return Diagonal(self.diag_values.conj()) if conjugate else self


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, n, dtype=np.float64):
        super().__init__(n, n, dtype, {SELF_ADJOINT, PSD, UNITARY})

    def _mvm(self, v):
        return v.copy()

    def _mvm_block(self, V):
        return V.copy()

    def _adjoint_leaf(self, conjugate):
        return self


class ScalarIdentity(LinearOperator):
    """``c * I``; the scalar is a differentiable parameter."""

    kind = "scalar"

    def __init__(self, value, n):
        value = np.asarray(value)
        if value.shape != ():
            raise ConstructionError("scalar payload must be a single number")
        self.value = (
            complex(value) if np.issubdtype(value.dtype, np.complexfloating) else float(value)
        )
        dtype = np.complex128 if isinstance(self.value, complex) else np.float64
        tags = set()
        if not isinstance(self.value, complex):
            tags.add(SELF_ADJOINT)
            if self.value >= 0:
                tags.add(PSD)
            if abs(self.value) == 1.0:
                tags.add(UNITARY)
        super().__init__(n, n, dtype, tags)

    def _mvm(self, v):
        return self.value * v

    def _mvm_block(self, V):
        return self.value * V

    def param_arrays(self):
        return {"scalar": np.asarray(self.value)}

    def with_params(self, params):
        return ScalarIdentity(params["scalar"], self.rows)

    def _adjoint_leaf(self, conjugate):
        if conjugate and isinstance(self.value, complex):
            return ScalarIdentity(np.conj(self.value), self.rows)
        return self


class Zero(LinearOperator):
    kind = "zero"

    def __init__(self, rows, cols, dtype=np.float64):
        super().__init__(rows, cols, dtype)

    def _mvm(self, v):
        return np.zeros(self.rows, dtype=np.result_type(self.dtype, v.dtype))

    def _mvm_block(self, V):
        return np.zeros((self.rows, V.shape[1]), dtype=np.result_type(self.dtype, V.dtype))

    def _adjoint_leaf(self, conjugate):
        return Zero(self.cols, self.rows, self.dtype)


class SparseCSR(LinearOperator):
    """Compressed sparse row matrix; ``values`` is the differentiable parameter."""

    kind = "csr"

    def __init__(self, row_ptr, col_idx, values, shape):
        rows, cols = int(shape[0]), int(shape[1])
        row_ptr = np.asarray(row_ptr, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        values = np.asarray(values)
        values = _freeze(
            values.astype(np.complex128)
            if np.issubdtype(values.dtype, np.complexfloating)
            else values.astype(np.float64)
        )
        if row_ptr.shape != (rows + 1,):
            raise ConstructionError(
                f"row_ptr must have length rows+1={rows + 1}, got {row_ptr.shape[0]}"
            )
        if row_ptr[0] != 0:
            raise ConstructionError("row_ptr[0] must be 0")
        if row_ptr[-1] != col_idx.shape[0] or col_idx.shape[0] != values.shape[0]:
            raise ConstructionError("row_ptr[-1] must equal nnz = len(col_idx) = len(values)")
        diffs = np.diff(row_ptr)
        if np.any(diffs < 0):
            i = int(np.argmax(diffs < 0))
            raise ConstructionError(f"row_ptr must be nondecreasing; first violation at row {i}")
        if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= cols):
            bad = int(np.argmax((col_idx < 0) | (col_idx >= cols)))
            raise ConstructionError(f"column index out of range at entry {bad}")
        for r in range(rows):
            seg = col_idx[row_ptr[r] : row_ptr[r + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                bad = int(row_ptr[r] + 1 + np.argmax(np.diff(seg) <= 0))
                raise ConstructionError(
                    f"column indices must be strictly increasing within row {r}; "
                    f"violation at entry {bad}"
                )
        self.row_ptr = _freeze(row_ptr)
        self.col_idx = _freeze(col_idx)
        self.values = values
        self._sp = sp.csr_matrix((values, col_idx, row_ptr), shape=(rows, cols))
        super().__init__(rows, cols, values.dtype)

    @classmethod
    def from_scipy(cls, m):
        m = m.tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.indptr, m.indices, m.data, m.shape)

    @property
    def nnz(self):
        return self.values.shape[0]

    def _mvm(self, v):
        return self._sp @ v

    def _mvm_block(self, V):
        return self._sp @ V

    def param_arrays(self):
        return {"values": self.values}

    def with_params(self, params):
        return SparseCSR(self.row_ptr, self.col_idx, params["values"], self.shape)

    def _adjoint_leaf(self, conjugate):
        m = self._sp.conj().T if conjugate else self._sp.T
        return SparseCSR.from_scipy(m.tocsr())


class Circulant(LinearOperator):
    """Circulant matrix whose first column is ``filter_coeffs``.

    The MVM is the circular convolution ``filter * v``, computed in the
    Fourier domain.
    """

    kind = "circulant"

    def __init__(self, filter_coeffs):
        a = _as_payload(filter_coeffs, "circulant")
        if a.ndim != 1:
            raise ConstructionError("circulant filter must be a 1-d array")
        self.filter_coeffs = a
        super().__init__(a.shape[0], a.shape[0], a.dtype)

    def _mvm(self, v):
        out = np.fft.ifft(np.fft.fft(self.filter_coeffs) * np.fft.fft(v))
        if not (
            np.issubdtype(self.dtype, np.complexfloating)
            or np.issubdtype(v.dtype, np.complexfloating)
        ):
            return out.real
        return out

    def param_arrays(self):
        return {"filter": self.filter_coeffs}

    def with_params(self, params):
        return Circulant(params["filter"])

    def _adjoint_leaf(self, conjugate):
        a = self.filter_coeffs
        rev = np.roll(a[::-1], 1)  # transpose: entry (i,j) = a[(j-i) mod N]
        return Circulant(rev.conj() if conjugate else rev)


class Triangular(LinearOperator):
    """Dense-stored triangular matrix (the excluded triangle must be zero)."""

    kind = "triangular"

    def __init__(self, matrix, lower=True):
        matrix = _as_payload(matrix, "triangular")
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConstructionError("triangular payload must be a square 2-d array")
        excluded = np.triu(matrix, 1) if lower else np.tril(matrix, -1)
        if np.any(excluded != 0):
            raise ConstructionError(
                "triangular payload has nonzero entries on the excluded triangle"
            )
        self.matrix = matrix
        self.lower = bool(lower)
        super().__init__(matrix.shape[0], matrix.shape[1], matrix.dtype)

    def _mvm(self, v):
        return self.matrix @ v

    def _mvm_block(self, V):
        return self.matrix @ V

    def _tri_indices(self):
        n = self.rows
        return np.tril_indices(n) if self.lower else np.triu_indices(n)

    def param_arrays(self):
        # packed stored triangle, so every parameter coordinate is free
        return {"tri": self.matrix[self._tri_indices()]}

    def with_params(self, params):
        full = np.zeros_like(self.matrix)
        full[self._tri_indices()] = params["tri"]
        return Triangular(full, lower=self.lower)

    def _adjoint_leaf(self, conjugate):
        m = self.matrix.conj().T if conjugate else self.matrix.T
        return Triangular(m, lower=not self.lower)


class Tridiagonal(LinearOperator):
    kind = "tridiagonal"

    def __init__(self, sub, main, sup):
        main = _as_payload(main, "tridiagonal main")
        n = main.shape[0]
        if n == 1:
            sub = np.zeros(0)
            sup = np.zeros(0)
        sub = np.asarray(sub, dtype=main.dtype)
        sup = np.asarray(sup, dtype=main.dtype)
        if sub.shape != (n - 1,) or sup.shape != (n - 1,):
            raise ConstructionError(
                f"band lengths must be N-1={n - 1}, N={n}, N-1; got "
                f"{sub.shape[0]}, {n}, {sup.shape[0]}"
            )
        self.sub = _freeze(sub)
        self.main = main
        self.sup = _freeze(sup)
        super().__init__(n, n, main.dtype)

    def _mvm(self, v):
        out = self.main * v
        if self.rows > 1:
            out[1:] += self.sub * v[:-1]
            out[:-1] += self.sup * v[1:]
        return out

    def param_arrays(self):
        return {"sub": self.sub, "main": self.main, "sup": self.sup}

    def with_params(self, params):
        return Tridiagonal(params["sub"], params["main"], params["sup"])

    def _adjoint_leaf(self, conjugate):
        if conjugate:
            return Tridiagonal(self.sup.conj(), self.main.conj(), self.sub.conj())
        return Tridiagonal(self.sup, self.main, self.sub)


class Permutation(LinearOperator):
    """Permutation matrix: ``(P v)[i] = v[perm[i]]``.  Always unitary."""

    kind = "permutation"

    def __init__(self, perm):
        perm = np.asarray(perm, dtype=np.int64)
        if perm.ndim != 1 or perm.size == 0:
            raise ConstructionError("permutation must be a nonempty 1-d integer array")
        n = perm.shape[0]
        if np.any(np.sort(perm) != np.arange(n)):
            raise ConstructionError(f"permutation is not a bijection on 0..{n - 1}")
        self.perm = _freeze(perm)
        super().__init__(n, n, np.float64, {UNITARY})

    def _mvm(self, v):
        return v[self.perm]

    def _mvm_block(self, V):
        return V[self.perm]

    def _adjoint_leaf(self, conjugate):
        return Permutation(np.argsort(self.perm))


class LowRank(LinearOperator):
    """Explicit rank-``r`` factorization ``left @ right``."""

    kind = "lowrank"

    def __init__(self, left, right):
        left = _as_payload(left, "lowrank left")
        right = _as_payload(right, "lowrank right")
        if left.ndim != 2 or right.ndim != 2 or left.shape[1] != right.shape[0]:
            raise ConstructionError(
                f"lowrank factors do not chain: {left.shape} @ {right.shape}"
            )
        self.left = left
        self.right = right
        super().__init__(left.shape[0], right.shape[1], np.result_type(left, right))

    @property
    def rank(self):
        return self.left.shape[1]

    def _mvm(self, v):
        return self.left @ (self.right @ v)

    def _mvm_block(self, V):
        return self.left @ (self.right @ V)

    def param_arrays(self):
        return {"left": self.left, "right": self.right}

    def with_params(self, params):
        return LowRank(params["left"], params["right"])

    def _adjoint_leaf(self, conjugate):
        if conjugate:
            return LowRank(self.right.conj().T, self.left.conj().T)
        return LowRank(self.right.T, self.left.T)


class FunctionOperator(LinearOperator):
    """Matrix-free leaf backed by closures; declares no parameters.

    ``apply_adjoint`` (the conjugate-transpose MVM) is optional; without it,
    transposes fall back to dense materialization below the dense cap.
    Closures must be pure and safe to call concurrently.
    """

    kind = "function"

    def __init__(self, apply, shape, dtype=np.float64, apply_adjoint=None):
        self.apply = apply
        self.apply_adjoint = apply_adjoint
        super().__init__(shape[0], shape[1], dtype)

    def _mvm(self, v):
        return np.asarray(self.apply(v))

    def _adjoint_leaf(self, conjugate):
        if self.apply_adjoint is None:
            return None
        fwd, adj = self.apply_adjoint, self.apply
        if conjugate:
            return FunctionOperator(
                fwd, (self.cols, self.rows), self.dtype, apply_adjoint=adj
            )
        if np.issubdtype(self.dtype, np.complexfloating):
            # A^T v = conj(A^H conj(v))
            return FunctionOperator(
                lambda v: np.conj(fwd(np.conj(v))),
                (self.cols, self.rows),
                self.dtype,
                apply_adjoint=lambda v: np.conj(adj(np.conj(v))),
            )
        return FunctionOperator(fwd, (self.cols, self.rows), self.dtype, apply_adjoint=adj)


def from_dense(matrix) -> Dense:
    return Dense(matrix)


def csr_from_dense(matrix) -> SparseCSR:
    return SparseCSR.from_scipy(sp.csr_matrix(np.asarray(matrix)))


def jacobi_preconditioner(diag_values) -> Diagonal:
    """Reciprocal-diagonal preconditioner ``M^{-1} = Diag(1/d)``."""
    d = np.asarray(diag_values, dtype=float)
    if np.any(d == 0):
        raise ConstructionError("Jacobi preconditioner requires a nonzero diagonal")
    return Diagonal(1.0 / d)
