"""Compositional operators and the transpose/adjoint rewrite rules.

Composites keep their operands in ``children`` and implement their MVM in
terms of child MVMs.  ``transpose``/``adjoint`` rewrite composites eagerly;
leaves supply analytic transposes, and only closure-backed leaves without an
adjoint closure fall back to a lazy dense-materializing wrapper.
"""

from __future__ import annotations

import numpy as np

from . import config
from .core import (
    PSD,
    SELF_ADJOINT,
    UNITARY,
    LinearOperator,
    annotate,
    dense,
    mvm,
    mvm_block,
)
from .errors import ConstructionError, ShapeError, UnsupportedOperationError
from .operators import FunctionOperator


def _common_dtype(ops):
    return np.result_type(*(op.dtype for op in ops))


def _intersect_tags(ops, keep):
    tags = set(keep)
    for op in ops:
        tags &= op.annotations
    return tags


class Sum(LinearOperator):
    """Elementwise sum of identically shaped operators."""

    kind = "sum"

    def __init__(self, terms):
        terms = tuple(terms)
        if not terms:
            raise ConstructionError("sum requires at least one term")
        shape = terms[0].shape
        for i, t in enumerate(terms):
            if t.shape != shape:
                raise ShapeError(
                    f"sum term {i} has shape {t.shape}, expected {shape}"
                )
        tags = _intersect_tags(terms, {SELF_ADJOINT, PSD})
        super().__init__(shape[0], shape[1], _common_dtype(terms), tags)
        self.children = terms

    def _mvm(self, v):
        out = mvm(self.children[0], v)
        for t in self.children[1:]:
            out = out + mvm(t, v)
        return out


class Product(LinearOperator):
    """Ordered product ``A_1 A_2 ... A_k``; the MVM applies factors right to left."""

    kind = "product"

    def __init__(self, factors):
        factors = tuple(factors)
        if not factors:
            raise ConstructionError("product requires at least one factor")
        for i in range(len(factors) - 1):
            if factors[i].cols != factors[i + 1].rows:
                raise ShapeError(
                    f"product factors {i} and {i + 1} do not chain: "
                    f"{factors[i].shape} @ {factors[i + 1].shape}"
                )
        tags = _intersect_tags(factors, {UNITARY}) if len(factors) > 0 else set()
        super().__init__(
            factors[0].rows, factors[-1].cols, _common_dtype(factors), tags
        )
        self.children = factors

    def _mvm(self, v):
        out = v
        for f in reversed(self.children):
            out = mvm(f, out)
        return out


class Kronecker(LinearOperator):
    """Kronecker product ``A (x) B`` with column-major vec convention.

    ``(A (x) B) vec(X) = vec(B X A^T)`` for ``X`` of shape ``B.cols x A.cols``,
    so one MVM costs ``A.cols`` MVMs with ``B`` plus ``B.rows`` MVMs with ``A``.
    """

    kind = "kron"

    def __init__(self, a, b):
        tags = _intersect_tags((a, b), {SELF_ADJOINT, PSD, UNITARY})
        super().__init__(
            a.rows * b.rows, a.cols * b.cols, _common_dtype((a, b)), tags
        )
        self.children = (a, b)

    def _mvm(self, v):
        a, b = self.children
        x = v.reshape(b.cols, a.cols, order="F")
        bx = mvm_block(b, x)  # B X, shape b.rows x a.cols
        y = mvm_block(a, bx.T).T  # (A (BX)^T)^T = B X A^T, shape b.rows x a.rows
        return y.ravel(order="F")


class KroneckerSum(LinearOperator):
    """Kronecker sum ``A (+) B = A (x) I + I (x) B`` of square operators."""

    kind = "kron_sum"

    def __init__(self, a, b):
        if not (a.is_square and b.is_square):
            raise ConstructionError(
                f"kronecker sum requires square operands, got {a.shape} and {b.shape}"
            )
        tags = _intersect_tags((a, b), {SELF_ADJOINT, PSD})
        super().__init__(
            a.rows * b.rows, a.cols * b.cols, _common_dtype((a, b)), tags
        )
        self.children = (a, b)

    def _mvm(self, v):
        a, b = self.children
        x = v.reshape(b.rows, a.rows, order="F")
        bx = mvm_block(b, x)  # (I (x) B) vec(X) = vec(B X)
        xat = mvm_block(a, x.T).T  # (A (x) I) vec(X) = vec(X A^T)
        return (bx + xat).ravel(order="F")


class BlockDiagonal(LinearOperator):
    kind = "blockdiag"

    def __init__(self, blocks):
        blocks = tuple(blocks)
        if not blocks:
            raise ConstructionError("block diagonal requires at least one block")
        rows = sum(b.rows for b in blocks)
        cols = sum(b.cols for b in blocks)
        tags = _intersect_tags(blocks, {SELF_ADJOINT, PSD, UNITARY})
        super().__init__(rows, cols, _common_dtype(blocks), tags)
        self.children = blocks

    def _mvm(self, v):
        parts = []
        at = 0
        for b in self.children:
            parts.append(mvm(b, v[at : at + b.cols]))
            at += b.cols
        return np.concatenate(parts)


class Block2x2(LinearOperator):
    """Four conformable blocks ``[[A, B], [C, D]]``."""

    kind = "block2x2"

    def __init__(self, a, b, c, d):
        if a.rows != b.rows or c.rows != d.rows:
            raise ShapeError("block rows do not conform in 2x2 layout")
        if a.cols != c.cols or b.cols != d.cols:
            raise ShapeError("block columns do not conform in 2x2 layout")
        super().__init__(
            a.rows + c.rows, a.cols + b.cols, _common_dtype((a, b, c, d))
        )
        self.children = (a, b, c, d)

    @property
    def split(self):
        a = self.children[0]
        return a.rows, a.cols

    def _mvm(self, v):
        a, b, c, d = self.children
        v1, v2 = v[: a.cols], v[a.cols :]
        top = mvm(a, v1) + mvm(b, v2)
        bottom = mvm(c, v1) + mvm(d, v2)
        return np.concatenate([top, bottom])


class Concat(LinearOperator):
    """Row ("rows": stack vertically) or column ("cols") concatenation."""

    kind = "concat"

    def __init__(self, blocks, axis="rows"):
        blocks = tuple(blocks)
        if not blocks:
            raise ConstructionError("concat requires at least one block")
        if axis not in ("rows", "cols"):
            raise ValueError("axis must be 'rows' or 'cols'")
        if axis == "rows":
            cols = blocks[0].cols
            if any(b.cols != cols for b in blocks):
                raise ShapeError("row-concatenated blocks must share a column count")
            rows = sum(b.rows for b in blocks)
        else:
            rows = blocks[0].rows
            if any(b.rows != rows for b in blocks):
                raise ShapeError("column-concatenated blocks must share a row count")
            cols = sum(b.cols for b in blocks)
        self.axis = axis
        super().__init__(rows, cols, _common_dtype(blocks))
        self.children = blocks

    def _mvm(self, v):
        if self.axis == "rows":
            return np.concatenate([mvm(b, v) for b in self.children])
        out = None
        at = 0
        for b in self.children:
            piece = mvm(b, v[at : at + b.cols])
            out = piece if out is None else out + piece
            at += b.cols
        return out


class Scaled(LinearOperator):
    """``value * A``; the scalar is a differentiable parameter."""

    kind = "scaled"

    def __init__(self, value, a):
        value = complex(value) if np.iscomplexobj(np.asarray(value)) else float(value)
        self.value = value
        tags = set()
        if not isinstance(value, complex):
            tags = a.annotations & {SELF_ADJOINT, PSD}
            if value < 0:
                tags -= {PSD}
        dtype = np.result_type(np.asarray(value).dtype, a.dtype)
        super().__init__(a.rows, a.cols, dtype, tags)
        self.children = (a,)

    def _mvm(self, v):
        return self.value * mvm(self.children[0], v)

    def _mvm_block(self, V):
        return self.value * mvm_block(self.children[0], V)


class Transposed(LinearOperator):
    """Lazy transpose/adjoint wrapper for closure leaves without an adjoint.

    Materializes the child once (below the dense cap) on first use.
    """

    kind = "transpose"

    def __init__(self, a, conjugate=False):
        super().__init__(a.cols, a.rows, a.dtype, a.annotations)
        self.children = (a,)
        self.conjugate = bool(conjugate)
        self._dense_cache = None

    def _materialized(self):
        if self._dense_cache is None:
            m = dense(self.children[0])
            self._dense_cache = m.conj().T if self.conjugate else m.T
        return self._dense_cache

    def _mvm(self, v):
        return self._materialized() @ v


def scale(value, a) -> Scaled:
    return Scaled(value, a)


def _copy_tags(result, source):
    extra = source.annotations - result.annotations
    return annotate(result, *extra) if extra else result


def _rewrite(a, conjugate):
    word = "adjoint" if conjugate else "transpose"
    if SELF_ADJOINT in a.annotations:
        if conjugate or not np.issubdtype(a.dtype, np.complexfloating):
            return a
    k = a.kind
    if k == "sum":
        out = Sum([_rewrite(t, conjugate) for t in a.children])
    elif k == "product":
        out = Product([_rewrite(f, conjugate) for f in reversed(a.children)])
    elif k == "kron":
        out = Kronecker(*(_rewrite(c, conjugate) for c in a.children))
    elif k == "kron_sum":
        out = KroneckerSum(*(_rewrite(c, conjugate) for c in a.children))
    elif k == "blockdiag":
        out = BlockDiagonal([_rewrite(b, conjugate) for b in a.children])
    elif k == "block2x2":
        aa, bb, cc, dd = (_rewrite(c, conjugate) for c in a.children)
        out = Block2x2(aa, cc, bb, dd)
    elif k == "concat":
        other = "cols" if a.axis == "rows" else "rows"
        out = Concat([_rewrite(b, conjugate) for b in a.children], axis=other)
    elif k == "scaled":
        value = np.conj(a.value) if conjugate else a.value
        out = Scaled(value, _rewrite(a.children[0], conjugate))
    elif k == "transpose":
        if a.conjugate == conjugate:
            return a.children[0]
        out = Transposed(a, conjugate)
    else:
        leaf_rule = getattr(a, "_adjoint_leaf", None)
        leaf = leaf_rule(conjugate) if leaf_rule is not None else None
        if leaf is not None:
            out = leaf
        elif a.rows * a.cols <= config.get_dense_cap() ** 2:
            out = Transposed(a, conjugate)
        else:
            raise UnsupportedOperationError(
                f"{word} of a {a.kind} operator of shape {a.shape} requires an "
                "adjoint closure or a size below the dense fallback cap"
            )
    return _copy_tags(out, a)


def transpose(a: LinearOperator) -> LinearOperator:
    """Expression computing ``A^T`` via recursive rewrite rules."""
    return _rewrite(a, conjugate=False)


def adjoint(a: LinearOperator) -> LinearOperator:
    """Expression computing ``A^*`` (conjugate transpose)."""
    return _rewrite(a, conjugate=True)
