import numpy as np
import pytest

from linops import (
    Block2x2,
    BlockDiagonal,
    Circulant,
    Concat,
    Dense,
    Diagonal,
    FunctionOperator,
    Identity,
    Kronecker,
    KroneckerSum,
    Permutation,
    Product,
    Scaled,
    Sum,
    Zero,
    adjoint,
    annotate,
    dense,
    mvm,
    scale,
    transpose,
)
from linops.errors import ConstructionError, ShapeError

from helpers import rand_leaf, rand_tree, ref_dense


def test_sum_examples():
    assert np.allclose(mvm(Sum([Identity(2), Identity(2)]), [1.0, 2.0]), [2.0, 4.0])
    s = Sum([Diagonal([1.0, 2.0]), Diagonal([3.0, 4.0])])
    assert np.allclose(dense(s), np.diag([4.0, 6.0]))
    rng = np.random.default_rng(0)
    mats = [rng.standard_normal((8, 8)) for _ in range(100)]
    s = Sum([Dense(m) for m in mats])
    assert np.allclose(dense(s), sum(mats), atol=1e-10)
    with pytest.raises(ShapeError):
        Sum([Identity(2), Identity(3)])


def test_product_examples():
    p = Product([Diagonal([2.0, 2.0]), Diagonal([3.0, 3.0])])
    assert np.allclose(mvm(p, [1.0, 1.0]), [6.0, 6.0])
    P = Permutation([1, 2, 0])
    pp = Product([P, transpose(P)])
    assert np.allclose(dense(pp), np.eye(3))
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(dense(Product([Dense(a), Dense(b)])), a @ b)
    with pytest.raises(ShapeError, match="0 and 1"):
        Product([Dense(np.ones((2, 3))), Dense(np.ones((2, 2)))])


def test_kron_examples():
    assert np.allclose(dense(Kronecker(Identity(2), Identity(2))), np.eye(4))
    k = Kronecker(Diagonal([1.0, 2.0]), Diagonal([3.0, 4.0]))
    assert np.allclose(dense(k), np.diag([3.0, 4.0, 6.0, 8.0]))
    ks = KroneckerSum(Diagonal([1.0, 2.0]), Diagonal([10.0, 20.0]))
    assert np.allclose(dense(ks), np.diag([11.0, 21.0, 12.0, 22.0]))
    with pytest.raises(ConstructionError):
        KroneckerSum(Dense(np.ones((2, 3))), Identity(2))


def test_block_examples():
    bd = BlockDiagonal([Diagonal([1.0]), Diagonal([2.0])])
    assert np.allclose(mvm(bd, [1.0, 1.0]), [1.0, 2.0])
    b = Block2x2(Identity(2), Zero(2, 2), Zero(2, 2), Identity(2))
    assert np.allclose(dense(b), np.eye(4))
    c = Concat([Identity(2), Identity(2)], axis="cols")
    assert np.allclose(mvm(c, [1.0, 2.0, 3.0, 4.0]), [4.0, 6.0])
    with pytest.raises(ShapeError):
        Block2x2(Identity(2), Zero(3, 2), Zero(2, 2), Identity(2))


def test_scale_examples():
    A = Dense(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.allclose(mvm(scale(0.0, A), [1.0, 1.0]), [0.0, 0.0])
    assert np.allclose(mvm(scale(2.0, Identity(2)), [1.0, 1.0]), [2.0, 2.0])
    assert np.allclose(dense(Scaled(2.0, Scaled(3.0, A))), 6.0 * dense(A))


def test_composites_match_dense_oracles():
    rng = np.random.default_rng(4)
    for _ in range(30):
        A = rand_tree(rng, int(rng.integers(2, 6)), depth=int(rng.integers(1, 3)))
        ref = ref_dense(A)
        got = dense(A)
        denom = max(np.abs(ref).max(), 1e-30)
        assert np.abs(got - ref).max() / denom <= 1e-12


def test_transpose_rules():
    assert np.allclose(
        dense(transpose(Dense([[1.0, 2.0], [3.0, 4.0]]))), [[1.0, 3.0], [2.0, 4.0]]
    )
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    p = Product([Dense(a), Dense(b)])
    assert np.allclose(dense(transpose(p)), (a @ b).T, atol=1e-12)
    for _ in range(15):
        A = rand_tree(rng, 4, depth=2)
        assert np.allclose(dense(transpose(A)), ref_dense(A).T, atol=1e-10)


def test_adjoint_involution_and_hermitian_identity():
    rng = np.random.default_rng(2)
    m = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    A = Dense(m)
    assert np.allclose(dense(adjoint(adjoint(A))), m)
    assert np.allclose(dense(adjoint(A)), np.conj(m).T)
    K = Kronecker(Dense(m), Dense(m + 1j))
    assert np.allclose(dense(adjoint(K)), np.conj(ref_dense(K)).T, atol=1e-12)


def test_self_adjoint_short_circuit():
    rng = np.random.default_rng(3)
    s = rng.standard_normal((4, 4))
    A = annotate(Dense(s + s.T), "self_adjoint")
    assert adjoint(A) is A
    assert transpose(A) is A


def test_transpose_rewrite_depth_bound():
    def depth(op):
        return 1 + max((depth(c) for c in op.children), default=0)

    rng = np.random.default_rng(5)
    for _ in range(10):
        A = rand_tree(rng, 4, depth=2)
        assert depth(transpose(A)) <= depth(A) + 1

    # no Transpose wrapper sits above a rewritable composite
    def assert_no_wrapped_composite(op):
        if op.kind == "transpose":
            assert op.children[0].is_leaf
        for c in op.children:
            assert_no_wrapped_composite(c)

    f = FunctionOperator(lambda v: v[::-1], (3, 3))
    t = transpose(Sum([Product([f, f]), Kronecker(Diagonal([1.0]), f).children[1]]))
    assert_no_wrapped_composite(t)


def test_kron_bilinearity():
    rng = np.random.default_rng(6)
    a, b, c = (Dense(rng.standard_normal((3, 3))) for _ in range(3))
    lhs = dense(Kronecker(Sum([a, b]), c))
    rhs = dense(Kronecker(a, c)) + dense(Kronecker(b, c))
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_circulant_transpose_is_reverse_shift():
    rng = np.random.default_rng(7)
    a = rng.standard_normal(5)
    assert np.allclose(dense(transpose(Circulant(a))), ref_dense(Circulant(a)).T)


def test_annotation_propagation():
    d1 = Diagonal([1.0, 2.0])
    d2 = Diagonal([3.0, 4.0])
    assert "psd" in Sum([d1, d2]).annotations
    assert "psd" in Kronecker(d1, d2).annotations
    assert "psd" in KroneckerSum(d1, d2).annotations
    neg = Diagonal([-1.0, 2.0])
    s = Sum([d1, neg])
    assert "psd" not in s.annotations and "self_adjoint" in s.annotations
    assert "psd" not in Scaled(-2.0, d1).annotations
    assert "self_adjoint" in Scaled(-2.0, d1).annotations
