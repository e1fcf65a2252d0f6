import numpy as np
import pytest

from linops import (
    Dense,
    Diagonal,
    FunctionOperator,
    Identity,
    Kronecker,
    ParamVector,
    Sum,
    annotate,
    dense,
    flatten_params,
    instrument,
    mvm,
    mvm_block,
    unflatten_params,
)
from linops.errors import ConstructionError, ParamLayoutError, ShapeError

from helpers import ref_dense, rand_tree


def test_mvm_examples():
    assert np.allclose(mvm(Diagonal([2.0, 3.0]), [1.0, 1.0]), [2.0, 3.0])
    assert np.allclose(mvm(Identity(3), [4.0, 5.0, 6.0]), [4.0, 5.0, 6.0])
    assert np.allclose(mvm(Dense([[1.0, 2.0], [3.0, 4.0]]), [1.0, 0.0]), [1.0, 3.0])


def test_mvm_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 2\)"):
        mvm(Diagonal([1.0, 2.0]), [1.0, 2.0, 3.0])


def test_mvm_block():
    assert np.allclose(
        mvm_block(Diagonal([2.0, 3.0]), [[1.0, 0.0], [0.0, 1.0]]),
        [[2.0, 0.0], [0.0, 3.0]],
    )
    empty = mvm_block(Diagonal([2.0, 3.0]), np.zeros((2, 0)))
    assert empty.shape == (2, 0)
    assert np.allclose(
        mvm_block(Dense([[1.0, 2.0], [3.0, 4.0]]), [[1.0, 1.0], [0.0, 1.0]]),
        [[1.0, 3.0], [3.0, 7.0]],
    )


def test_mvm_block_matches_columnwise_mvm():
    rng = np.random.default_rng(0)
    A = rand_tree(rng, 5, depth=2)
    V = rng.standard_normal((A.cols, 3))
    got = mvm_block(A, V)
    want = np.stack([mvm(A, V[:, j]) for j in range(3)], axis=1)
    assert np.allclose(got, want, atol=1e-13)


def test_dense_examples():
    assert np.allclose(dense(Diagonal([5.0, 7.0])), [[5.0, 0.0], [0.0, 7.0]])
    K = Kronecker(Diagonal([1.0, 2.0]), Identity(2))
    assert np.allclose(dense(K), np.diag([1.0, 1.0, 2.0, 2.0]))
    assert np.allclose(dense(Sum([Identity(2), Identity(2)])), 2 * np.eye(2))


def test_dense_oracle_equivalence_random_trees():
    rng = np.random.default_rng(7)
    for _ in range(25):
        A = rand_tree(rng, int(rng.integers(2, 7)), depth=int(rng.integers(1, 3)))
        ref = ref_dense(A)
        got = dense(A)
        assert got.shape == ref.shape
        v = rng.standard_normal(A.cols)
        scale = 1e-12 * (1 + np.abs(v).max() * np.abs(ref).max())
        assert np.abs(ref @ v - mvm(A, v)).max() <= max(scale, 1e-12)
        assert np.allclose(got, ref, atol=1e-10)


def test_annotate_union_and_idempotence():
    A = Dense(np.eye(2))
    B = annotate(A, "psd")
    assert B.annotations == {"psd", "self_adjoint"}
    C = annotate(B, "psd")
    assert C.annotations == B.annotations
    assert np.allclose(dense(B), dense(A))
    assert np.allclose(mvm(annotate(Diagonal([1.0, 2.0]), "psd"), [1.0, 1.0]), [1.0, 2.0])


def test_shape_invariants_at_construction():
    with pytest.raises(ConstructionError):
        Diagonal(np.zeros(0))
    with pytest.raises(ShapeError):
        Sum([Identity(2), Identity(3)])


def test_flatten_examples():
    pv = flatten_params(Diagonal([3.0, 4.0]))
    assert np.allclose(pv.values, [3.0, 4.0])
    # depth-first, left-to-right ordering across leaves
    from linops import Circulant

    K = Kronecker(Diagonal([5.0]), Circulant([6.0, 7.0]))
    pv = flatten_params(K)
    assert np.allclose(pv.values, [5.0, 6.0, 7.0])
    f = FunctionOperator(lambda v: 2 * v, (3, 3))
    assert flatten_params(f).values.size == 0


def test_unflatten_round_trip_and_errors():
    rng = np.random.default_rng(3)
    for _ in range(10):
        A = rand_tree(rng, 4, depth=2)
        pv = flatten_params(A)
        B = unflatten_params(A, pv)
        assert np.array_equal(dense(B), dense(A))

    D = Diagonal([0.5, 0.5])
    replaced = unflatten_params(
        D, ParamVector(values=np.array([3.0, 4.0]), layout=flatten_params(D).layout)
    )
    assert np.allclose(mvm(replaced, [1.0, 1.0]), [3.0, 4.0])

    with pytest.raises(ParamLayoutError):
        unflatten_params(
            D,
            ParamVector(values=np.array([1.0, 2.0, 3.0]),
                        layout=flatten_params(Diagonal([1.0, 2.0, 3.0])).layout),
        )


def test_annotations_do_not_change_dense():
    rng = np.random.default_rng(11)
    A = rand_tree(rng, 5, depth=1)
    assert np.array_equal(dense(annotate(A, "self_adjoint")), dense(A))


def test_instrument_counts_leaf_mvms():
    A = Sum([Diagonal([1.0, 2.0]), Diagonal([3.0, 4.0])])
    inst, counter = instrument(A)
    mvm(inst, np.ones(2))
    assert counter.leaf_total == 2
    assert counter.counts["sum"] == 1
    # original tree has no counter attached
    mvm(A, np.ones(2))
    assert counter.leaf_total == 2
