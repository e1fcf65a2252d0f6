"""Expression-tree linear operators built around a single matrix-vector contract.

Every operator is an immutable node: leaves hold payload arrays or closures,
composites hold an ordered tuple of children.  All derived operations (dense
materialization, solves, eigendecompositions, ...) reduce to ``mvm``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, ParamLayoutError, ShapeError

SELF_ADJOINT = "self_adjoint"
PSD = "psd"
UNITARY = "unitary"

_KNOWN_TAGS = frozenset({SELF_ADJOINT, PSD, UNITARY})


def normalize_annotations(tags) -> frozenset:
    """Validate tags and close them under implication (PSD implies self-adjoint)."""
    tags = frozenset(tags)
    unknown = tags - _KNOWN_TAGS
    if unknown:
        raise ValueError(f"unknown annotations: {sorted(unknown)}")
    if PSD in tags:
        tags = tags | {SELF_ADJOINT}
    return tags


class MvmCounter:
    """Tallies MVM invocations per node kind on an instrumented tree."""

    __slots__ = ("counts", "leaf_total")

    def __init__(self):
        self.counts: dict[str, int] = {}
        self.leaf_total = 0

    def add(self, kind: str, n: int, is_leaf: bool):
        self.counts[kind] = self.counts.get(kind, 0) + n
        if is_leaf:
            self.leaf_total += n


class LinearOperator:
    """Immutable node of a linear-operator expression tree.

    Subclasses set ``kind`` (the tag structural dispatch matches on) and
    implement ``_mvm``.  Composites keep their operands exclusively in
    ``self.children`` so generic tree walks (cloning, instrumentation,
    parameter flattening) work uniformly.
    """

    kind = "abstract"

    def __init__(self, rows, cols, dtype, annotations=()):
        rows, cols = int(rows), int(cols)
        if rows < 1 or cols < 1:
            raise ConstructionError(
                f"operator shape must be at least 1x1, got ({rows}, {cols})"
            )
        self.rows = rows
        self.cols = cols
        self.dtype = np.dtype(dtype)
        self.annotations = normalize_annotations(annotations)
        self.children: tuple[LinearOperator, ...] = ()
        self._counter: MvmCounter | None = None

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def is_square(self):
        return self.rows == self.cols

    @property
    def is_leaf(self):
        return not self.children

    # -- payload / parameter protocol -------------------------------------

    def param_arrays(self) -> dict[str, np.ndarray]:
        """Ordered differentiable parameter arrays declared by this leaf."""
        return {}

    def with_params(self, params: dict[str, np.ndarray]) -> "LinearOperator":
        raise ParamLayoutError(f"{self.kind} operator declares no parameters")

    def with_children(self, children) -> "LinearOperator":
        """Copy of this node over structurally identical replacement children."""
        node = copy.copy(self)
        node.children = tuple(children)
        return node

    # -- MVM law -----------------------------------------------------------

    def _mvm(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _mvm_block(self, V: np.ndarray) -> np.ndarray:
        out_dtype = np.result_type(self.dtype, V.dtype)
        out = np.empty((self.rows, V.shape[1]), dtype=out_dtype)
        for j in range(V.shape[1]):
            out[:, j] = self._mvm(V[:, j])
        return out

    def __repr__(self):
        return f"<{type(self).__name__} {self.rows}x{self.cols} kind={self.kind}>"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def mvm(A: LinearOperator, v) -> np.ndarray:
    """Apply ``A`` to a vector of length ``A.cols``."""
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != A.cols:
        raise ShapeError(
            f"operator of shape {A.shape} cannot multiply vector of shape {v.shape}"
        )
    if A._counter is not None:
        A._counter.add(A.kind, 1, A.is_leaf)
    out = np.asarray(A._mvm(v))
    target = np.result_type(A.dtype, v.dtype)
    if out.dtype != target:
        out = out.astype(target)
    return out


def mvm_block(A: LinearOperator, V) -> np.ndarray:
    """Apply ``A`` to each column of ``V`` (shape ``A.cols x k``)."""
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[0] != A.cols:
        raise ShapeError(
            f"operator of shape {A.shape} cannot multiply block of shape {V.shape}"
        )
    if V.shape[1] == 0:
        return np.empty((A.rows, 0), dtype=np.result_type(A.dtype, V.dtype))
    if A._counter is not None:
        A._counter.add(A.kind, V.shape[1], A.is_leaf)
    out = np.asarray(A._mvm_block(V))
    target = np.result_type(A.dtype, V.dtype)
    if out.dtype != target:
        out = out.astype(target)
    return out


def dense(A: LinearOperator) -> np.ndarray:
    """Materialize ``A`` column by column from unit-vector MVMs."""
    return mvm_block(A, np.eye(A.cols, dtype=A.dtype))


def annotate(A: LinearOperator, *tags) -> LinearOperator:
    """Return a copy of ``A`` carrying the union of annotations.

    Tags are trusted, never verified; they only steer algorithm selection.
    """
    node = copy.copy(A)
    node.annotations = normalize_annotations(A.annotations | set(tags))
    return node


def instrument(A: LinearOperator, counter: MvmCounter | None = None):
    """Clone the tree with an MVM counter attached to every node."""
    counter = counter if counter is not None else MvmCounter()

    def clone(node):
        c = copy.copy(node)
        c._counter = counter
        c.children = tuple(clone(ch) for ch in node.children)
        return c

    return clone(A), counter


# -- parameter flattening ---------------------------------------------------


@dataclass(frozen=True)
class ParamRecord:
    path: tuple[int, ...]
    name: str
    shape: tuple[int, ...]
    offset: int
    size: int


@dataclass(frozen=True)
class ParamVector:
    """Flat view of all differentiable leaf parameters of an expression tree."""

    values: np.ndarray
    layout: tuple[ParamRecord, ...]

    @property
    def size(self):
        return self.values.size


def _walk_params(A: LinearOperator):
    """Depth-first, left-to-right traversal yielding (path, leaf, name, array)."""

    def walk(node, path):
        if node.is_leaf:
            for name, arr in node.param_arrays().items():
                yield path, node, name, arr
        else:
            for i, ch in enumerate(node.children):
                yield from walk(ch, path + (i,))

    yield from walk(A, ())


def flatten_params(A: LinearOperator) -> ParamVector:
    """Concatenate every declared leaf parameter into one flat vector."""
    records = []
    chunks = []
    offset = 0
    for path, _leaf, name, arr in _walk_params(A):
        size = int(arr.size)
        records.append(ParamRecord(path, name, tuple(np.shape(arr)), offset, size))
        chunks.append(np.ravel(arr))
        offset += size
    if chunks:
        values = np.concatenate(chunks)
    else:
        values = np.zeros(0, dtype=A.dtype)
    return ParamVector(values=values, layout=tuple(records))


def param_layout(A: LinearOperator) -> tuple[ParamRecord, ...]:
    return flatten_params(A).layout


def unflatten_params(A: LinearOperator, theta: ParamVector) -> LinearOperator:
    """Rebuild a structurally identical tree with leaf parameters from ``theta``."""
    expected = param_layout(A)
    if expected != tuple(theta.layout):
        raise ParamLayoutError("parameter layout does not match the expression tree")
    total = sum(r.size for r in expected)
    if theta.values.size != total:
        raise ParamLayoutError(
            f"parameter vector has {theta.values.size} entries, expected {total}"
        )
    by_path: dict[tuple[int, ...], dict[str, np.ndarray]] = {}
    for rec in expected:
        chunk = theta.values[rec.offset : rec.offset + rec.size].reshape(rec.shape)
        by_path.setdefault(rec.path, {})[rec.name] = chunk

    def rebuild(node, path):
        if node.is_leaf:
            params = by_path.get(path)
            if not params:
                return node
            new = node.with_params(params)
            new.annotations = node.annotations
            return new
        return node.with_children(
            rebuild(ch, path + (i,)) for i, ch in enumerate(node.children)
        )

    return rebuild(A, ())


def zeros_like_params(A: LinearOperator) -> ParamVector:
    pv = flatten_params(A)
    return ParamVector(values=np.zeros_like(pv.values, dtype=float), layout=pv.layout)
