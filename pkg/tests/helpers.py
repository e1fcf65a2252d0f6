"""Shared test utilities: an independent dense-matrix oracle and random
operator generators.

``ref_dense`` reconstructs the dense matrix of an expression tree directly
with numpy primitives (np.kron, np.block, explicit index formulas), never
through the library's MVM path, so oracle comparisons stay independent.
"""

import numpy as np
import scipy.linalg

from linops import (
    Block2x2,
    BlockDiagonal,
    Circulant,
    Concat,
    Dense,
    Diagonal,
    Identity,
    Kronecker,
    KroneckerSum,
    LowRank,
    Permutation,
    Product,
    ScalarIdentity,
    Scaled,
    SparseCSR,
    Sum,
    Triangular,
    Tridiagonal,
    Zero,
)


def ref_dense(op):
    k = op.kind
    if k in ("dense", "triangular"):
        return np.array(op.matrix)
    if k == "diagonal":
        return np.diag(op.diag_values)
    if k == "identity":
        return np.eye(op.rows, dtype=op.dtype)
    if k == "scalar":
        return op.value * np.eye(op.rows)
    if k == "zero":
        return np.zeros(op.shape, dtype=op.dtype)
    if k == "csr":
        m = np.zeros(op.shape, dtype=op.dtype)
        for i in range(op.rows):
            for at in range(op.row_ptr[i], op.row_ptr[i + 1]):
                m[i, op.col_idx[at]] += op.values[at]
        return m
    if k == "circulant":
        a = op.filter_coeffs
        n = a.shape[0]
        return np.array([[a[(i - j) % n] for j in range(n)] for i in range(n)])
    if k == "tridiagonal":
        return np.diag(op.sub, -1) + np.diag(op.main) + np.diag(op.sup, 1)
    if k == "permutation":
        m = np.zeros(op.shape)
        for i, j in enumerate(op.perm):
            m[i, j] = 1.0
        return m
    if k == "lowrank":
        return op.left @ op.right
    if k == "function":
        cols = []
        for j in range(op.cols):
            e = np.zeros(op.cols, dtype=op.dtype)
            e[j] = 1.0
            cols.append(np.asarray(op.apply(e)))
        return np.stack(cols, axis=1)
    if k == "sum":
        return sum(ref_dense(c) for c in op.children)
    if k == "product":
        out = ref_dense(op.children[0])
        for c in op.children[1:]:
            out = out @ ref_dense(c)
        return out
    if k == "kron":
        return np.kron(ref_dense(op.children[0]), ref_dense(op.children[1]))
    if k == "kron_sum":
        a, b = (ref_dense(c) for c in op.children)
        return np.kron(a, np.eye(b.shape[0])) + np.kron(np.eye(a.shape[0]), b)
    if k == "blockdiag":
        return scipy.linalg.block_diag(*(ref_dense(c) for c in op.children))
    if k == "block2x2":
        a, b, c, d = (ref_dense(ch) for ch in op.children)
        return np.block([[a, b], [c, d]])
    if k == "concat":
        mats = [ref_dense(c) for c in op.children]
        return np.vstack(mats) if op.axis == "rows" else np.hstack(mats)
    if k == "scaled":
        return op.value * ref_dense(op.children[0])
    if k == "transpose":
        m = ref_dense(op.children[0])
        return m.conj().T if op.conjugate else m.T
    if k == "inverse":
        return np.linalg.inv(ref_dense(op.children[0]))
    if k == "pinv":
        return np.linalg.pinv(ref_dense(op.children[0]))
    raise ValueError(f"no reference dense form for kind {k}")


def rand_spd(rng, n, shift=None):
    g = rng.standard_normal((n, n))
    return g @ g.T + (shift if shift is not None else n) * np.eye(n)


def rand_leaf(rng, n):
    """Random leaf operator of size n x n."""
    import scipy.sparse as sp

    choice = rng.integers(0, 7)
    if choice == 0:
        return Dense(rng.standard_normal((n, n)))
    if choice == 1:
        return Diagonal(rng.uniform(0.5, 2.0, n))
    if choice == 2:
        return Circulant(rng.standard_normal(n))
    if choice == 3:
        m = np.tril(rng.standard_normal((n, n)))
        return Triangular(m, lower=True)
    if choice == 4:
        return Permutation(rng.permutation(n))
    if choice == 5 and n > 1:
        return Tridiagonal(
            rng.standard_normal(n - 1), rng.standard_normal(n),
            rng.standard_normal(n - 1),
        )
    density = 0.05 + 0.45 * rng.random()
    m = sp.random(n, n, density=density, random_state=int(rng.integers(1 << 31)))
    m = m + sp.identity(n)
    return SparseCSR.from_scipy(m.tocsr())


def rand_tree(rng, n, depth=2):
    """Random square composite expression tree of total size ``n``."""
    if depth == 0:
        return rand_leaf(rng, n)
    choice = rng.integers(0, 5)
    if choice == 0:
        return Sum([rand_tree(rng, n, depth - 1) for _ in range(2)])
    if choice == 1:
        return Product([rand_tree(rng, n, depth - 1) for _ in range(2)])
    if choice == 2 and n % 2 == 0 and n >= 4:
        return Kronecker(rand_leaf(rng, 2), rand_tree(rng, n // 2, depth - 1))
    if choice == 3 and n >= 2:
        split = int(rng.integers(1, n))
        return BlockDiagonal(
            [rand_tree(rng, split, depth - 1), rand_leaf(rng, n - split)]
        )
    return Scaled(float(rng.uniform(0.5, 2.0)), rand_tree(rng, n, depth - 1))
