import numpy as np
import pytest
import scipy.sparse as sp

from linops import (
    Circulant,
    Dense,
    Diagonal,
    FunctionOperator,
    Identity,
    Permutation,
    ScalarIdentity,
    SparseCSR,
    Triangular,
    Tridiagonal,
    dense,
    mvm,
    transpose,
)
from linops.errors import ConstructionError

from helpers import ref_dense


def test_basic_leaf_examples():
    assert np.allclose(mvm(ScalarIdentity(2.0, 2), [1.0, 3.0]), [2.0, 6.0])
    assert np.allclose(mvm(Diagonal([1.0, 0.0]), [5.0, 5.0]), [5.0, 0.0])
    assert np.allclose(dense(Dense([[0.0, 1.0], [1.0, 0.0]])), [[0, 1], [1, 0]])


def test_empty_payload_rejected():
    with pytest.raises(ConstructionError):
        Diagonal([])
    with pytest.raises(ConstructionError):
        Circulant([])


def test_csr_examples():
    A = SparseCSR([0, 1, 2], [0, 1], [2.0, 3.0], (2, 2))
    assert np.allclose(mvm(A, [1.0, 1.0]), [2.0, 3.0])
    B = SparseCSR([0, 2, 2], [0, 1], [1.0, 2.0], (2, 2))  # nnz only in row 0
    assert np.allclose(mvm(B, [1.0, 1.0]), [3.0, 0.0])
    C = SparseCSR([0, 2, 3], [0, 1, 1], [1.0, 2.0, 3.0], (2, 2))
    assert np.allclose(mvm(C, [1.0, 1.0]), [3.0, 3.0])


def test_csr_invariant_violations_name_index():
    with pytest.raises(ConstructionError, match="row 1"):
        SparseCSR([0, 2, 1, 2], [0, 1], [1.0, 2.0], (3, 2))
    with pytest.raises(ConstructionError, match="entry 1"):
        SparseCSR([0, 1, 2], [0, 5], [1.0, 2.0], (2, 2))
    with pytest.raises(ConstructionError, match="strictly increasing"):
        SparseCSR([0, 2, 2], [1, 1], [1.0, 2.0], (2, 2))


def test_circulant_examples():
    assert np.allclose(mvm(Circulant([1.0, 0.0, 0.0]), [1.0, 2.0, 3.0]), [1, 2, 3])
    assert np.allclose(mvm(Circulant([0.0, 1.0, 0.0]), [1.0, 2.0, 3.0]), [3, 1, 2])
    assert np.allclose(mvm(Circulant([1.0, 2.0]), [3.0, 4.0]), [11.0, 10.0])


def test_circulant_dft_identity():
    # dense(Circulant(a)) = F^{-1} Diag(F a) F
    rng = np.random.default_rng(0)
    for n in (4, 6, 7):
        a = rng.standard_normal(n)
        F = np.fft.fft(np.eye(n))
        m = np.linalg.inv(F) @ np.diag(np.fft.fft(a)) @ F
        assert np.abs(dense(Circulant(a)) - m).max() < 1e-10


def test_triangular_and_tridiagonal():
    assert np.allclose(
        mvm(Triangular([[1.0, 0.0], [2.0, 3.0]], lower=True), [1.0, 1.0]), [1.0, 5.0]
    )
    with pytest.raises(ConstructionError):
        Triangular([[1.0, 5.0], [2.0, 3.0]], lower=True)
    T = Tridiagonal([1.0], [2.0, 2.0], [1.0])
    assert np.allclose(mvm(T, [1.0, 1.0]), [3.0, 3.0])
    with pytest.raises(ConstructionError):
        Tridiagonal([1.0, 2.0], [1.0, 1.0], [1.0])


def test_permutation():
    P = Permutation([1, 0])
    assert np.allclose(mvm(P, [3.0, 7.0]), [7.0, 3.0])
    assert "unitary" in P.annotations
    with pytest.raises(ConstructionError):
        Permutation([0, 0])
    rng = np.random.default_rng(1)
    for n in (2, 17, 64):
        P = Permutation(rng.permutation(n))
        assert np.array_equal(dense(P) @ dense(P).T, np.eye(n))


def test_function_operator():
    f = FunctionOperator(lambda v: 2 * v, (3, 3))
    assert np.allclose(mvm(f, [1.0, 1.0, 1.0]), [2.0, 2.0, 2.0])
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    g = FunctionOperator(lambda v: m @ v, (2, 2))
    assert np.allclose(dense(g), dense(Dense(m)))
    # transpose without an adjoint closure falls back to dense materialization
    rng = np.random.default_rng(2)
    m4 = rng.standard_normal((4, 4))
    h = FunctionOperator(lambda v: m4 @ v, (4, 4))
    assert np.allclose(dense(transpose(h)), m4.T, atol=1e-12)


def test_every_leaf_matches_analytic_dense():
    rng = np.random.default_rng(5)
    for n in (1, 2, 3, 8, 16):
        leaves = [
            Dense(rng.standard_normal((n, n))),
            Diagonal(rng.standard_normal(n)),
            Identity(n),
            ScalarIdentity(1.7, n),
            Circulant(rng.standard_normal(n)),
            Permutation(rng.permutation(n)),
            Triangular(np.triu(rng.standard_normal((n, n))), lower=False),
        ]
        if n > 1:
            leaves.append(
                Tridiagonal(rng.standard_normal(n - 1), rng.standard_normal(n),
                            rng.standard_normal(n - 1))
            )
        for leaf in leaves:
            assert np.array_equal(dense(leaf), ref_dense(leaf)) or np.allclose(
                dense(leaf), ref_dense(leaf), atol=1e-12
            )


def test_csr_matches_dense_for_random_sparsity():
    rng = np.random.default_rng(9)
    for density in (0.05, 0.2, 0.5):
        n = int(rng.integers(8, 128))
        m = sp.random(n, n, density=density, random_state=int(rng.integers(1 << 31)))
        A = SparseCSR.from_scipy(m.tocsr())
        ref = ref_dense(A)
        v = rng.standard_normal(n)
        got = mvm(A, v)
        want = ref @ v
        denom = max(np.linalg.norm(want), 1e-30)
        assert np.linalg.norm(got - want) / denom <= 1e-12
