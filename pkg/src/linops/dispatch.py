"""Structural multiple dispatch: the public functional API (solve, eig, diag,
trace, logdet, matrix functions, pinv) and the rule engine that routes each
operation to the most efficient procedure for the operator's structure.

Rules bind an operation name and a structural pattern to a procedure.  The
most specific matching rule wins; ties resolve to the latest registration, so
user rules override builtins.  A registry freezes on first use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import config
from .compose import (
    BlockDiagonal,
    Kronecker,
    Product,
    Scaled,
    Sum,
    adjoint,
    transpose,
)
from .core import (
    PSD,
    SELF_ADJOINT,
    UNITARY,
    LinearOperator,
    dense,
    instrument,
    mvm,
)
from .errors import (
    DomainError,
    LinOpsError,
    RegistryFrozenError,
    ShapeError,
    SingularOperatorError,
    UnsupportedOperationError,
)
from .krylov import (
    IterStats,
    SolveParams,
    cg,
    gmres,
    lanczos,
    minres,
    slq_logdet,
    _arnoldi_impl,
    randomized_svd,
)
from .operators import Dense, Diagonal, Permutation
from .stochastic import (
    ProbeConfig,
    SvrgParams,
    doubly_stochastic_diag,
    doubly_stochastic_trace,
    hutchinson_diag,
    hutchinson_trace,
    svrg_solve,
)

# -- pattern matching ---------------------------------------------------------


@dataclass(frozen=True)
class Pattern:
    """Structural matcher: a kind tag, required annotations, optional child
    patterns (parametric match) and an optional predicate.

    Specificity is the number of non-wildcard constraints satisfied; a bare
    ``Pattern()`` matches anything with specificity 0.
    """

    kind: str | None = None
    annotations: frozenset = frozenset()
    children: tuple | None = None
    predicate: object | None = None

    def match(self, op: LinearOperator) -> int | None:
        score = 0
        if self.kind is not None:
            if op.kind != self.kind:
                return None
            score += 1
        if self.annotations:
            if not frozenset(self.annotations) <= op.annotations:
                return None
            score += len(self.annotations)
        if self.children is not None:
            if len(self.children) != len(op.children):
                return None
            for pat, child in zip(self.children, op.children):
                sub = pat.match(child)
                if sub is None:
                    return None
                score += sub
        if self.predicate is not None:
            if not self.predicate(op):
                return None
            score += 1
        return score


ANY = Pattern()


@dataclass(frozen=True)
class Rule:
    op_name: str
    name: str
    pattern: Pattern
    procedure: object
    index: int


class Registry:
    """Rule table; mutable during setup, frozen at first dispatch."""

    def __init__(self):
        self._rules: dict[str, list[Rule]] = {}
        self._frozen = False
        self._next_index = 0

    @property
    def frozen(self):
        return self._frozen

    def freeze(self):
        self._frozen = True

    def register(self, op_name, pattern, procedure, name=None) -> Rule:
        if self._frozen:
            raise RegistryFrozenError(
                f"cannot register '{op_name}' rule: registry is frozen"
            )
        rule = Rule(op_name, name or procedure.__name__, pattern, procedure,
                    self._next_index)
        self._next_index += 1
        self._rules.setdefault(op_name, []).append(rule)
        return rule

    def select(self, op_name, op: LinearOperator) -> Rule:
        best = None
        best_key = None
        for rule in self._rules.get(op_name, ()):
            score = rule.pattern.match(op)
            if score is None:
                continue
            key = (score, rule.index)
            if best_key is None or key > best_key:
                best, best_key = rule, key
        if best is None:
            raise UnsupportedOperationError(
                f"no '{op_name}' rule matches a {op.kind} operator"
            )
        return best


_default_registry: Registry | None = None


def build_registry() -> Registry:
    """Fresh registry pre-populated with the builtin rule tables."""
    reg = Registry()
    _register_builtins(reg)
    return reg


def default_registry() -> Registry:
    global _default_registry
    if _default_registry is None:
        _default_registry = build_registry()
    return _default_registry


def register_rule(op_name, pattern, procedure, name=None, registry=None) -> Rule:
    """Add a dispatch rule; only allowed before the registry freezes."""
    reg = registry if registry is not None else default_registry()
    return reg.register(op_name, pattern, procedure, name=name)


def _ready(registry) -> Registry:
    reg = registry if registry is not None else default_registry()
    reg.freeze()
    return reg


# -- result containers --------------------------------------------------------


@dataclass
class SolveResult:
    x: np.ndarray
    stats: IterStats

    def __iter__(self):  # allow x, stats = solve(...)
        yield self.x
        yield self.stats


@dataclass
class EigResult:
    eigvals: np.ndarray
    eigvecs: LinearOperator
    stats: IterStats


# -- lazy operators -----------------------------------------------------------


class Inverse(LinearOperator):
    """Lazy inverse: the MVM solves ``A x = v`` through dispatch."""

    kind = "inverse"

    def __init__(self, a, params=None, registry=None):
        if not a.is_square:
            raise ShapeError(f"inverse requires a square operator, got {a.shape}")
        tags = a.annotations & {SELF_ADJOINT, PSD}
        super().__init__(a.rows, a.cols, a.dtype, tags)
        self.children = (a,)
        self._params = params or SolveParams()
        self._registry = registry

    def _mvm(self, v):
        x, stats = _solve(self.children[0], v, self._params, _ready(self._registry))
        resid = stats.residual_history[-1] if stats.residual_history else np.inf
        if not (stats.converged or resid <= self._params.tol):
            raise LinOpsError(
                f"inverse MVM did not converge: residual {resid:.3e}"
            )
        return x

    def _adjoint_leaf(self, conjugate):
        rewrite = adjoint if conjugate else transpose
        return Inverse(rewrite(self.children[0]), self._params, self._registry)


class PseudoInverse(LinearOperator):
    kind = "pinv"

    def __init__(self, a, params=None, registry=None):
        super().__init__(a.cols, a.rows, a.dtype)
        self.children = (a,)
        self._params = params or SolveParams()
        self._registry = registry

    def _mvm(self, v):
        x, _ = _pinv_apply(self.children[0], v, self._params, _ready(self._registry))
        return x

    def _adjoint_leaf(self, conjugate):
        rewrite = adjoint if conjugate else transpose
        return PseudoInverse(rewrite(self.children[0]), self._params, self._registry)


def factored_inverse(a: LinearOperator, registry=None):
    """Dense-cap inverse with a cached LU factorization.

    Materializes ``a`` once; MVMs are back-substitutions.  Intended for
    shift-invert style inner loops on moderate sizes.
    """
    if a.rows > config.get_dense_cap():
        raise UnsupportedOperationError(
            f"factored_inverse limited to the dense cap ({config.get_dense_cap()}), "
            f"got {a.rows}"
        )
    lu = scipy.linalg.lu_factor(dense(a))
    from .operators import FunctionOperator

    return FunctionOperator(
        lambda v: scipy.linalg.lu_solve(lu, v),
        (a.rows, a.cols),
        a.dtype,
        apply_adjoint=lambda v: scipy.linalg.lu_solve(lu, v, trans=2),
    )


# ==== solve ==================================================================


def solve(A: LinearOperator, b, params: SolveParams | None = None, registry=None):
    """Solve ``A x = b`` by the most specific structural rule."""
    params = params or SolveParams()
    reg = _ready(registry)
    b = np.asarray(b)
    if not A.is_square:
        raise ShapeError(f"solve requires a square operator, got {A.shape}")
    if b.shape != (A.rows,):
        raise ShapeError(f"rhs of shape {b.shape} does not match operator {A.shape}")
    inst, counter = instrument(A)
    if params.algorithm_override:
        x, stats = _base_solve(inst, b, params, params.algorithm_override)
    else:
        x, stats = _solve(inst, b, params, reg)
    bnorm = np.linalg.norm(b)
    true_rel = np.linalg.norm(mvm(A, x) - b) / bnorm if bnorm else 0.0
    if stats.residual_history:
        stats.residual_history[-1] = float(true_rel)
    else:
        stats.residual_history.append(float(true_rel))
    stats.converged = bool(true_rel <= params.tol)
    stats.mvm_count = counter.leaf_total
    stats.extra["mvm_by_kind"] = dict(counter.counts)
    return SolveResult(x, stats)


def _solve(A, b, params, reg):
    rule = reg.select("solve", A)
    x, stats = rule.procedure(A, b, params, reg)
    stats.algorithm = rule.name
    return x, stats


def _base_solve(A, b, params, which):
    apply = lambda v: mvm(A, v)
    if which == "cg":
        return cg(apply, b, params)
    if which == "minres":
        return minres(apply, b, params)
    if which == "gmres":
        return gmres(apply, b, params)
    if which == "dense":
        x = np.linalg.solve(dense(A), b)
        st = IterStats(algorithm="dense", converged=True)
        st.residual_history.append(0.0)
        return x, st
    raise ValueError(f"unknown solve algorithm override: {which}")


def _direct_stats(name=""):
    st = IterStats(algorithm=name, iterations=0, converged=True)
    st.residual_history.append(0.0)
    return st


def _merge_children(parent: IterStats, child_stats):
    parent.iterations = sum(s.iterations for s in child_stats)
    if any(not s.converged for s in child_stats):
        parent.extra["inner_nonconverged"] = True
    return parent


def _solve_gmres(A, b, params, reg):
    return gmres(lambda v: mvm(A, v), b, params)


def _solve_minres(A, b, params, reg):
    return minres(lambda v: mvm(A, v), b, params)


def _solve_cg(A, b, params, reg):
    return cg(lambda v: mvm(A, v), b, params)


def _solve_unitary(A, b, params, reg):
    return mvm(adjoint(A), b), _direct_stats()


def _solve_diagonal(A, b, params, reg):
    d = A.diag_values
    zero = np.flatnonzero(d == 0)
    if zero.size:
        raise SingularOperatorError(
            f"diagonal solve hit an exactly zero entry at index {zero[0]}"
        )
    return b / d, _direct_stats()


def _solve_scalar(A, b, params, reg):
    if A.value == 0:
        raise SingularOperatorError("scalar operator is exactly zero")
    return b / A.value, _direct_stats()


def _solve_identity(A, b, params, reg):
    return b.copy(), _direct_stats()


def _solve_permutation(A, b, params, reg):
    # P x = b  <=>  x[perm[i]] = b[i]
    x = np.empty_like(b)
    x[A.perm] = b
    return x, _direct_stats()


def _solve_triangular(A, b, params, reg):
    d = np.diagonal(A.matrix)
    zero = np.flatnonzero(d == 0)
    if zero.size:
        raise SingularOperatorError(
            f"triangular solve hit an exactly zero pivot at index {zero[0]}"
        )
    x = scipy.linalg.solve_triangular(A.matrix, b, lower=A.lower)
    return x, _direct_stats()


def _solve_circulant(A, b, params, reg):
    fa = np.fft.fft(A.filter_coeffs)
    if np.any(np.abs(fa) == 0):
        raise SingularOperatorError("circulant operator has a zero Fourier symbol")
    x = np.fft.ifft(np.fft.fft(b) / fa)
    if not (np.issubdtype(A.dtype, np.complexfloating) or np.iscomplexobj(b)):
        x = x.real
    return x, _direct_stats()


def _solve_product(A, b, params, reg):
    # (A_1 ... A_k)^{-1} = A_k^{-1} ... A_1^{-1}
    x = b
    inner = []
    for f in A.children:
        x, st = _solve(f, x, params, reg)
        inner.append(st)
    return x, _merge_children(_direct_stats(), inner)


def _solve_kron(A, b, params, reg):
    a, c = A.children
    X = b.reshape(c.rows, a.rows, order="F")
    inner = []
    Z = np.empty_like(X, dtype=np.result_type(X.dtype, float))
    for j in range(X.shape[1]):  # B^{-1} X
        Z[:, j], st = _solve(c, X[:, j], params, reg)
        inner.append(st)
    Y = np.empty((a.rows, Z.shape[0]), dtype=Z.dtype)
    for j in range(Z.shape[0]):  # A^{-1} Z^T, giving (B^{-1} X A^{-T})^T
        Y[:, j], st = _solve(a, Z[j, :], params, reg)
        inner.append(st)
    return Y.T.ravel(order="F"), _merge_children(_direct_stats(), inner)


def _solve_blockdiag(A, b, params, reg):
    parts = []
    inner = []
    at = 0
    for blk in A.children:
        x, st = _solve(blk, b[at : at + blk.cols], params, reg)
        parts.append(x)
        inner.append(st)
        at += blk.cols
    return np.concatenate(parts), _merge_children(_direct_stats(), inner)


def _solve_block_upper(A, b, params, reg):
    # [[A, B], [0, D]]: x2 = D^{-1} b2, x1 = A^{-1}(b1 - B x2)
    a, bb, _, d = A.children
    b1, b2 = b[: a.rows], b[a.rows :]
    x2, st2 = _solve(d, b2, params, reg)
    x1, st1 = _solve(a, b1 - mvm(bb, x2), params, reg)
    return np.concatenate([x1, x2]), _merge_children(_direct_stats(), [st1, st2])


def _solve_block_schur(A, b, params, reg):
    # three-factor inverse via the Schur complement S = D - C A^{-1} B
    a, bb, cc, d = A.children
    ainv = Inverse(a, params, reg)
    schur = Sum([d, Scaled(-1.0, Product([cc, ainv, bb]))])
    b1, b2 = b[: a.rows], b[a.rows :]
    t1, st1 = _solve(a, b1, params, reg)
    t2 = b2 - mvm(cc, t1)
    x2, st2 = _solve(schur, t2, params, reg)
    y1, st3 = _solve(a, b1 - mvm(bb, x2), params, reg)
    return np.concatenate([y1, x2]), _merge_children(_direct_stats(), [st1, st2, st3])


def _solve_woodbury(A, b, params, reg):
    """Low-rank update solve via the (Kailath-form) Woodbury identity.

    For X + U V:  (X + U V)^{-1} b = y - X^{-1} U (I + V X^{-1} U)^{-1} V y
    with y = X^{-1} b.  Rank one reduces to the Sherman-Morrison formula.
    """
    terms = A.children
    lowrank = next(t for t in terms if t.kind == "lowrank")
    base = next(t for t in terms if t is not lowrank)
    U, V = lowrank.left, lowrank.right
    inner = []
    y, st = _solve(base, b, params, reg)
    inner.append(st)
    r = U.shape[1]
    Xinv_U = np.empty((A.rows, r), dtype=np.result_type(U.dtype, float))
    for j in range(r):
        Xinv_U[:, j], st = _solve(base, U[:, j], params, reg)
        inner.append(st)
    if r == 1:
        denom = 1.0 + (V @ Xinv_U)[0, 0]
        if denom == 0:
            raise SingularOperatorError("Sherman-Morrison denominator is zero")
        x = y - Xinv_U[:, 0] * ((V @ y)[0] / denom)
    else:
        cap = np.eye(r, dtype=Xinv_U.dtype) + V @ Xinv_U
        x = y - Xinv_U @ np.linalg.solve(cap, V @ y)
    return x, _merge_children(_direct_stats(), inner)


def _solve_svrg(A, b, params, reg):
    terms = [(lambda t: (lambda v: mvm(t, v)))(t) for t in A.children]
    m = len(terms)
    svrg_params = SvrgParams(
        epochs=max(1, params.max_iter),
        batch=1,
        tol=params.tol,
        rng_seed=params.rng_seed,
    )
    # svrg targets the mean of the terms; rescale the rhs accordingly
    w, stats = svrg_solve(terms, np.asarray(b) / m, svrg_params)
    return w, stats


def _is_zero(op):
    return op.kind == "zero"


def _register_solve(reg):
    reg.register("solve", ANY, _solve_gmres, name="gmres")
    reg.register("solve", Pattern(annotations=frozenset({SELF_ADJOINT})),
                 _solve_minres, name="minres")
    reg.register("solve", Pattern(annotations=frozenset({PSD})), _solve_cg, name="cg")
    reg.register("solve", Pattern(annotations=frozenset({UNITARY})),
                 _solve_unitary, name="unitary-adjoint")
    reg.register(
        "solve",
        Pattern(kind="sum", annotations=frozenset({PSD}),
                predicate=lambda op: len(op.children) >= config.get_svrg_min_terms()),
        _solve_svrg, name="svrg",
    )
    reg.register("solve",
                 Pattern(kind="sum", children=(Pattern(kind="lowrank"), ANY)),
                 _solve_woodbury, name="woodbury")
    reg.register("solve",
                 Pattern(kind="sum", children=(ANY, Pattern(kind="lowrank"))),
                 _solve_woodbury, name="woodbury")
    reg.register("solve", Pattern(kind="product", predicate=_square_children),
                 _solve_product, name="product-split")
    reg.register("solve", Pattern(kind="kron", predicate=_square_children),
                 _solve_kron, name="kron-split")
    reg.register("solve", Pattern(kind="blockdiag", predicate=_square_children),
                 _solve_blockdiag, name="blockdiag-split")
    reg.register("solve", Pattern(kind="block2x2"), _solve_block_schur,
                 name="block2x2-schur")
    reg.register("solve",
                 Pattern(kind="block2x2",
                         children=(ANY, ANY, Pattern(kind="zero"), ANY)),
                 _solve_block_upper, name="block2x2-triangular")
    reg.register("solve", Pattern(kind="circulant"), _solve_circulant,
                 name="circulant-fft")
    reg.register("solve", Pattern(kind="permutation"), _solve_permutation,
                 name="permutation-invert")
    reg.register("solve", Pattern(kind="triangular"), _solve_triangular,
                 name="triangular-substitution")
    reg.register("solve", Pattern(kind="scalar"), _solve_scalar, name="scalar-invert")
    reg.register("solve", Pattern(kind="identity"), _solve_identity, name="identity")
    reg.register("solve", Pattern(kind="diagonal"), _solve_diagonal,
                 name="diagonal-invert")


def inverse(A: LinearOperator, params: SolveParams | None = None, registry=None):
    """Lazy operator whose MVM solves against ``A``."""
    return Inverse(A, params, registry)


# ==== eig ====================================================================


def _sorted_eig(vals, vecs_op, k, which):
    order = np.argsort(vals.real, kind="stable")
    vals = vals[order]
    n = vals.shape[0]
    selector_needed = np.any(order != np.arange(n))
    if selector_needed:
        vecs_op = Product([vecs_op, Permutation(np.argsort(order))])
    if which == "largest":
        vals = vals[::-1]
        vecs_op = Product([vecs_op, Permutation(np.arange(n)[::-1])])
    if k is not None and k < n:
        sel = np.zeros((n, k))
        sel[np.arange(k), np.arange(k)] = 1.0
        vecs_op = Product([vecs_op, Dense(sel)])
        vals = vals[:k]
    return vals, vecs_op


def eig(A: LinearOperator, k=None, which="smallest",
        params: SolveParams | None = None, registry=None) -> EigResult:
    """Eigendecomposition routed by structure.

    Returns eigenvalues sorted per ``which`` and the eigenvector operator
    (possibly structured, never forcibly materialized).
    """
    params = params or SolveParams()
    reg = _ready(registry)
    if not A.is_square:
        raise ShapeError(f"eig requires a square operator, got {A.shape}")
    if which not in ("smallest", "largest"):
        raise ValueError("which must be 'smallest' or 'largest'")
    if k is not None and not (1 <= k <= A.rows):
        raise ValueError(f"k must lie in 1..{A.rows}, got {k}")
    inst, counter = instrument(A)
    rule = reg.select("eig", inst)
    vals, vecs, stats = rule.procedure(inst, k, which, params, reg)
    stats.algorithm = rule.name
    stats.mvm_count = counter.leaf_total
    vals, vecs = _sorted_eig(vals, vecs, k, which)
    if SELF_ADJOINT in A.annotations:
        vals = vals.real
    return EigResult(vals, vecs, stats)


def _eig_rule(A, k, which, params, reg):
    return reg.select("eig", A).procedure(A, k, which, params, reg)


def _eig_diagonal(A, k, which, params, reg):
    d = A.diag_values
    order = np.argsort(d.real, kind="stable")
    vals = d[order]
    vecs = Permutation(np.argsort(order))
    return vals, vecs, _direct_stats()


def _eig_kron(A, k, which, params, reg):
    a, b = A.children
    va, Va, st1 = _eig_rule(a, None, "smallest", params, reg)
    vb, Vb, st2 = _eig_rule(b, None, "smallest", params, reg)
    vals = np.kron(va, vb)
    return vals, Kronecker(Va, Vb), _merge_children(_direct_stats(), [st1, st2])


def _eig_kron_sum(A, k, which, params, reg):
    a, b = A.children
    va, Va, st1 = _eig_rule(a, None, "smallest", params, reg)
    vb, Vb, st2 = _eig_rule(b, None, "smallest", params, reg)
    vals = np.add.outer(va, vb).ravel()
    return vals, Kronecker(Va, Vb), _merge_children(_direct_stats(), [st1, st2])


def _eig_blockdiag(A, k, which, params, reg):
    vals = []
    vecs = []
    inner = []
    for blk in A.children:
        v, V, st = _eig_rule(blk, None, "smallest", params, reg)
        vals.append(v)
        vecs.append(V)
        inner.append(st)
    return (np.concatenate(vals), BlockDiagonal(vecs),
            _merge_children(_direct_stats(), inner))


def _eig_triangular(A, k, which, params, reg):
    """Eigenvalues are the diagonal; eigenvectors by triangular substitution.

    Requires distinct diagonal entries (enforced by the rule predicate);
    repeated values fall through to the dense path.
    """
    m = A.matrix
    n = A.rows
    vals = np.diagonal(m).copy()
    vecs = np.zeros((n, n), dtype=np.result_type(m.dtype, float))
    eye = np.eye(n, dtype=m.dtype)
    for i in range(n):
        lam = vals[i]
        vecs[i, i] = 1.0
        if not A.lower and i > 0:
            # (U[:i,:i] - lam I) x = -U[:i, i]
            vecs[:i, i] = scipy.linalg.solve_triangular(
                m[:i, :i] - lam * eye[:i, :i], -m[:i, i], lower=False
            )
        elif A.lower and i < n - 1:
            vecs[i + 1 :, i] = scipy.linalg.solve_triangular(
                m[i + 1 :, i + 1 :] - lam * eye[i + 1 :, i + 1 :],
                -m[i + 1 :, i],
                lower=True,
            )
        vecs[:, i] /= np.linalg.norm(vecs[:, i])
    return vals, Dense(vecs), _direct_stats()


def _distinct_diagonal(op):
    d = np.diagonal(op.matrix)
    return np.unique(d).size == d.size


def _dense_eig_arrays(A):
    m = dense(A)
    if SELF_ADJOINT in A.annotations:
        vals, vecs = np.linalg.eigh(m)
    else:
        vals, vecs = np.linalg.eig(m)
    return vals, vecs


def _eig_lanczos(A, k, which, params, reg):
    n = A.rows
    rng = np.random.default_rng(params.rng_seed)
    q0 = rng.standard_normal(n)
    q0 /= np.linalg.norm(q0)
    t = min(n, params.max_iter)
    fact = lanczos(lambda v: mvm(A, v), q0, t, reorth="full")
    tmat = np.real(fact.square_part)
    vals, y = np.linalg.eigh(tmat)
    kk = fact.square_part.shape[0]
    ritz = fact.q_basis[:, :kk] @ y
    stats = IterStats(iterations=kk)
    if fact.breakdown_index is not None or kk == n:
        stats.converged = True
    else:
        # Ritz residual bound |beta_k * y[last]|
        beta = np.real(fact.hessenberg[kk, kk - 1]) if fact.hessenberg.shape[0] > kk else 0.0
        resid = np.abs(beta * y[-1, :])
        want = min(k or n, kk)
        idx = np.argsort(vals)[:want] if which == "smallest" else np.argsort(vals)[-want:]
        stats.converged = bool(np.all(resid[idx] <= max(params.tol, 1e-10) * max(1.0, np.abs(vals).max())))
    stats.residual_history.append(0.0)
    return vals, Dense(ritz), stats


def _eig_arnoldi(A, k, which, params, reg):
    n = A.rows
    rng = np.random.default_rng(params.rng_seed)
    q0 = rng.standard_normal(n)
    q0 /= np.linalg.norm(q0)
    t = min(n, params.max_iter)
    fact, _ = _arnoldi_impl(lambda v: mvm(A, v), q0, t, 1e-12)
    hsq = fact.square_part
    vals, y = np.linalg.eig(hsq)
    kk = hsq.shape[0]
    ritz = fact.q_basis[:, :kk] @ y
    stats = IterStats(iterations=kk, converged=fact.breakdown_index is not None or kk == n)
    stats.residual_history.append(0.0)
    return vals, Dense(ritz), stats


def _eig_dense(A, k, which, params, reg):
    vals, vecs = _dense_eig_arrays(A)
    return vals, Dense(vecs), _direct_stats()


def _register_eig(reg):
    cap = lambda op: op.rows <= config.get_dense_cap()
    reg.register("eig", ANY, _eig_arnoldi, name="arnoldi")
    reg.register("eig", Pattern(predicate=cap), _eig_dense, name="dense")
    reg.register("eig", Pattern(annotations=frozenset({SELF_ADJOINT})), _eig_lanczos,
                 name="lanczos")
    reg.register("eig", Pattern(kind="triangular", predicate=_distinct_diagonal),
                 _eig_triangular, name="triangular-diag")
    reg.register("eig", Pattern(kind="blockdiag"), _eig_blockdiag, name="blockdiag")
    reg.register("eig", Pattern(kind="kron"), _eig_kron, name="kron")
    reg.register("eig", Pattern(kind="kron_sum"), _eig_kron_sum, name="kron-sum")
    reg.register("eig", Pattern(kind="diagonal"), _eig_diagonal, name="diagonal")


# ==== diag / trace ===========================================================


def diag(A: LinearOperator, mode="exact", probes: ProbeConfig | None = None,
         registry=None) -> np.ndarray:
    """Diagonal of a square operator, exact (rules) or estimated (probes)."""
    reg = _ready(registry)
    if not A.is_square:
        raise ShapeError(f"diag requires a square operator, got {A.shape}")
    if mode == "exact":
        return _diag(A, reg)
    if mode == "estimate":
        if probes is None or probes.n_probes < 1:
            raise ValueError("estimate mode requires a ProbeConfig with probes")
        if A.kind == "sum" and len(A.children) > 1:
            terms = [(lambda t: (lambda v: mvm(t, v)))(t) for t in A.children]
            est, _ = doubly_stochastic_diag(terms, A.rows, probes)
            return est * len(terms)
        est, _ = hutchinson_diag(lambda v: mvm(A, v), A.rows, probes)
        return est
    raise ValueError(f"unknown diag mode: {mode}")


def _diag(A, reg):
    return reg.select("diag", A).procedure(A, reg)


def _diag_diagonal(A, reg):
    return A.diag_values.copy()


def _diag_identity(A, reg):
    return np.ones(A.rows, dtype=A.dtype)


def _diag_scalar(A, reg):
    return np.full(A.rows, A.value)


def _diag_zero(A, reg):
    return np.zeros(A.rows, dtype=A.dtype)


def _diag_dense(A, reg):
    return np.diagonal(A.matrix).copy()


def _diag_csr(A, reg):
    return A._sp.diagonal()


def _diag_triangular(A, reg):
    return np.diagonal(A.matrix).copy()


def _diag_tridiagonal(A, reg):
    return A.main.copy()


def _diag_permutation(A, reg):
    return (A.perm == np.arange(A.rows)).astype(float)


def _diag_circulant(A, reg):
    return np.full(A.rows, A.filter_coeffs[0])


def _diag_lowrank(A, reg):
    return np.einsum("ir,ri->i", A.left, A.right)


def _diag_sum(A, reg):
    out = _diag(A.children[0], reg)
    for t in A.children[1:]:
        out = out + _diag(t, reg)
    return out


def _diag_scaled(A, reg):
    return A.value * _diag(A.children[0], reg)


def _diag_kron(A, reg):
    a, b = A.children
    da, db = _diag(a, reg), _diag(b, reg)
    return np.outer(da, db).ravel()


def _diag_kron_sum(A, reg):
    a, b = A.children
    da, db = _diag(a, reg), _diag(b, reg)
    return np.add.outer(da, db).ravel()


def _diag_blockdiag(A, reg):
    return np.concatenate([_diag(blk, reg) for blk in A.children])


def _diag_block2x2(A, reg):
    a, _, _, d = A.children
    return np.concatenate([_diag(a, reg), _diag(d, reg)])


def _diag_sweep(A, reg):
    out = np.empty(A.rows, dtype=A.dtype)
    e = np.zeros(A.cols, dtype=A.dtype)
    for i in range(A.rows):
        e[i] = 1.0
        out[i] = mvm(A, e)[i]
        e[i] = 0.0
    return out


def _square_block2x2(op):
    a, _, _, d = op.children
    return a.is_square and d.is_square


def _register_diag(reg):
    reg.register("diag", ANY, _diag_sweep, name="exact-sweep")
    for kind, proc, name in [
        ("diagonal", _diag_diagonal, "diagonal"),
        ("identity", _diag_identity, "identity"),
        ("scalar", _diag_scalar, "scalar"),
        ("zero", _diag_zero, "zero"),
        ("dense", _diag_dense, "dense"),
        ("csr", _diag_csr, "csr"),
        ("triangular", _diag_triangular, "triangular"),
        ("tridiagonal", _diag_tridiagonal, "tridiagonal"),
        ("permutation", _diag_permutation, "permutation"),
        ("circulant", _diag_circulant, "circulant"),
        ("lowrank", _diag_lowrank, "lowrank"),
        ("sum", _diag_sum, "sum"),
        ("scaled", _diag_scaled, "scaled"),
        ("kron", _diag_kron, "kron"),
        ("kron_sum", _diag_kron_sum, "kron-sum"),
        ("blockdiag", _diag_blockdiag, "blockdiag"),
    ]:
        reg.register("diag", Pattern(kind=kind), proc, name=name)
    reg.register("diag", Pattern(kind="block2x2", predicate=_square_block2x2),
                 _diag_block2x2, name="block2x2")


def trace(A: LinearOperator, mode="exact", probes: ProbeConfig | None = None,
          registry=None) -> float:
    """Trace via the diagonal rules, with a direct Kronecker shortcut."""
    reg = _ready(registry)
    if not A.is_square:
        raise ShapeError(f"trace requires a square operator, got {A.shape}")
    if mode == "exact":
        return _trace(A, reg)
    if mode == "estimate":
        if probes is None:
            raise ValueError("estimate mode requires a ProbeConfig")
        if A.kind == "sum" and len(A.children) > 1:
            terms = [(lambda t: (lambda v: mvm(t, v)))(t) for t in A.children]
            est, _ = doubly_stochastic_trace(terms, A.rows, probes)
            return est * len(terms)
        est, _ = hutchinson_trace(lambda v: mvm(A, v), A.rows, probes)
        return est
    raise ValueError(f"unknown trace mode: {mode}")


def _trace(A, reg):
    return reg.select("trace", A).procedure(A, reg)


def _trace_base(A, reg):
    return complex(np.sum(_diag(A, reg))) if np.issubdtype(A.dtype, np.complexfloating) \
        else float(np.sum(_diag(A, reg)))


def _trace_kron(A, reg):
    a, b = A.children
    return _trace(a, reg) * _trace(b, reg)


def _register_trace(reg):
    reg.register("trace", ANY, _trace_base, name="sum-of-diag")
    reg.register("trace", Pattern(kind="kron"), _trace_kron, name="kron")


# ==== matrix functions =======================================================


class _EigFunction:
    """Applies ``f`` through an eigendecomposition: ``V f(L) V^{-1}``."""

    def __init__(self, f, require_positive=False):
        self.f = f
        self.require_positive = require_positive
        self.__name__ = getattr(f, "__name__", "fn")

    def __call__(self, A, params, reg):
        if SELF_ADJOINT not in A.annotations and A.rows > config.get_dense_cap():
            raise DomainError(
                "matrix functions need a self-adjoint annotation or a size "
                "below the dense cap"
            )
        res = eig(A, params=params, registry=reg)
        vals = res.eigvals
        if self.require_positive and np.any(vals.real <= 0):
            raise DomainError(
                f"matrix function requires a strictly positive spectrum; "
                f"smallest eigenvalue {vals.real.min():.3e}"
            )
        fvals = self.f(vals)
        V = res.eigvecs
        if SELF_ADJOINT in A.annotations:
            Vinv = transpose(V)
        else:
            Vinv = _MaterializedInverse(V)
        return Product([V, Diagonal(np.atleast_1d(fvals)), Vinv])


class _MaterializedInverse(Dense):
    def __init__(self, op):
        super().__init__(np.linalg.inv(dense(op)))


def apply_fn(A: LinearOperator, f, params: SolveParams | None = None,
             registry=None, require_positive=False) -> LinearOperator:
    """Operator computing ``V f(Lambda) V^{-1}`` for diagonalizable ``A``."""
    params = params or SolveParams()
    reg = _ready(registry)
    if not A.is_square:
        raise ShapeError(f"matrix functions require a square operator, got {A.shape}")
    rule = reg.select("apply_fn", A)
    return rule.procedure(A, f, params, reg, require_positive)


def _fn_base(A, f, params, reg, require_positive):
    return _EigFunction(f, require_positive)(A, params, reg)


def _fn_diagonal(A, f, params, reg, require_positive):
    d = A.diag_values
    if require_positive and np.any(d.real <= 0):
        raise DomainError(
            f"matrix function requires a strictly positive spectrum; smallest "
            f"diagonal entry {d.real.min():.3e}"
        )
    return Diagonal(f(d))


def _fn_blockdiag(A, f, params, reg, require_positive):
    return BlockDiagonal(
        [_apply_fn_inner(blk, f, params, reg, require_positive) for blk in A.children]
    )


def _apply_fn_inner(A, f, params, reg, require_positive):
    rule = reg.select("apply_fn", A)
    return rule.procedure(A, f, params, reg, require_positive)


def _register_apply_fn(reg):
    reg.register("apply_fn", ANY, _fn_base, name="eig-route")
    reg.register("apply_fn", Pattern(kind="blockdiag"), _fn_blockdiag, name="blockdiag")
    reg.register("apply_fn", Pattern(kind="diagonal"), _fn_diagonal, name="diagonal")


def expm(A, params=None, registry=None):
    return apply_fn(A, np.exp, params, registry)


def sqrtm(A, params=None, registry=None):
    return apply_fn(A, np.sqrt, params, registry, require_positive=True)


def logm(A, params=None, registry=None):
    return apply_fn(A, np.log, params, registry, require_positive=True)


# ==== logdet =================================================================


def logdet(A: LinearOperator, mode="exact", probes: ProbeConfig | None = None,
           lanczos_iters=30, registry=None) -> float:
    """``log |det A|``; estimate mode runs stochastic Lanczos quadrature."""
    reg = _ready(registry)
    if not A.is_square:
        raise ShapeError(f"logdet requires a square operator, got {A.shape}")
    if mode == "exact":
        logabs, _sign = _logdet(A, reg)
        return logabs
    if mode == "estimate":
        if PSD not in A.annotations:
            raise DomainError(
                "stochastic logdet requires a PSD annotation; use exact mode "
                "for general operators"
            )
        probes = probes or ProbeConfig(n_probes=25)
        rng = np.random.default_rng(probes.rng_seed)
        return slq_logdet(
            lambda v: mvm(A, v), A.rows, probes.n_probes,
            lanczos_iters, rng, probes.distribution,
        )
    raise ValueError(f"unknown logdet mode: {mode}")


def _logdet(A, reg):
    return reg.select("logdet", A).procedure(A, reg)


def _logdet_from_values(vals):
    vals = np.asarray(vals)
    if np.any(vals == 0):
        raise SingularOperatorError("exact zero eigenvalue/pivot in logdet")
    mags = np.abs(vals)
    logabs = float(np.sum(np.log(mags)))
    sign = complex(np.prod(vals / mags)) if np.iscomplexobj(vals) else float(
        np.prod(np.sign(vals))
    )
    return logabs, sign


def _logdet_diagonal(A, reg):
    return _logdet_from_values(A.diag_values)


def _logdet_identity(A, reg):
    return 0.0, 1.0


def _logdet_scalar(A, reg):
    if A.value == 0:
        raise SingularOperatorError("scalar operator is exactly zero")
    return A.rows * float(np.log(abs(A.value))), np.sign(A.value) ** A.rows


def _logdet_triangular(A, reg):
    return _logdet_from_values(np.diagonal(A.matrix))


def _perm_sign(perm):
    # parity from the cycle decomposition
    seen = np.zeros(perm.shape[0], dtype=bool)
    sign = 1.0
    for i in range(perm.shape[0]):
        if seen[i]:
            continue
        length = 0
        j = i
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _logdet_permutation(A, reg):
    return 0.0, _perm_sign(A.perm)


def _logdet_circulant(A, reg):
    return _logdet_from_values(np.fft.fft(A.filter_coeffs))


def _logdet_kron(A, reg):
    a, b = A.children
    la, sa = _logdet(a, reg)
    lb, sb = _logdet(b, reg)
    return b.rows * la + a.rows * lb, sa**b.rows * sb**a.rows


def _logdet_product(A, reg):
    logabs, sign = 0.0, 1.0
    for f in A.children:
        lf, sf = _logdet(f, reg)
        logabs += lf
        sign *= sf
    return logabs, sign


def _logdet_blockdiag(A, reg):
    logabs, sign = 0.0, 1.0
    for blk in A.children:
        lb, sb = _logdet(blk, reg)
        logabs += lb
        sign *= sb
    return logabs, sign


def _logdet_dense_base(A, reg):
    if A.rows > config.get_dense_cap():
        raise UnsupportedOperationError(
            f"exact logdet above the dense cap ({config.get_dense_cap()}) needs "
            "structure; annotate PSD and use estimate mode"
        )
    sign, logabs = np.linalg.slogdet(dense(A))
    if sign == 0:
        raise SingularOperatorError("operator is numerically singular in logdet")
    return float(logabs), sign


def _square_children(op):
    return all(c.is_square for c in op.children)


def _register_logdet(reg):
    reg.register("logdet", ANY, _logdet_dense_base, name="dense-slogdet")
    reg.register("logdet", Pattern(kind="kron"), _logdet_kron, name="kron")
    reg.register("logdet", Pattern(kind="product", predicate=_square_children),
                 _logdet_product, name="product")
    reg.register("logdet", Pattern(kind="blockdiag", predicate=_square_children),
                 _logdet_blockdiag, name="blockdiag")
    reg.register("logdet", Pattern(kind="permutation"), _logdet_permutation,
                 name="permutation")
    reg.register("logdet", Pattern(kind="circulant"), _logdet_circulant,
                 name="circulant")
    reg.register("logdet", Pattern(kind="triangular"), _logdet_triangular,
                 name="triangular")
    reg.register("logdet", Pattern(kind="scalar"), _logdet_scalar, name="scalar")
    reg.register("logdet", Pattern(kind="identity"), _logdet_identity, name="identity")
    reg.register("logdet", Pattern(kind="diagonal"), _logdet_diagonal, name="diagonal")


# ==== pseudo-inverse =========================================================


def pinv_apply(A: LinearOperator, b, params: SolveParams | None = None,
               registry=None):
    """Apply the Moore-Penrose pseudo-inverse to a vector."""
    params = params or SolveParams()
    reg = _ready(registry)
    b = np.asarray(b)
    if b.shape != (A.rows,):
        raise ShapeError(f"rhs of shape {b.shape} does not match operator {A.shape}")
    inst, counter = instrument(A)
    x, stats = _pinv_apply(inst, b, params, reg)
    stats.mvm_count = counter.leaf_total
    return SolveResult(x, stats)


def pinv(A: LinearOperator, params: SolveParams | None = None, registry=None):
    return PseudoInverse(A, params, registry)


def _pinv_apply(A, b, params, reg):
    rule = reg.select("pinv", A)
    x, stats = rule.procedure(A, b, params, reg)
    stats.algorithm = rule.name
    return x, stats


def _pinv_base(A, b, params, reg):
    """CG on the normal equations, with a dense SVD fallback below the cap."""
    At = adjoint(A)
    atb = mvm(At, b)
    try:
        x, stats = cg(lambda v: mvm(At, mvm(A, v)), atb, params)
        resid = np.linalg.norm(mvm(At, mvm(A, x)) - atb)
    except LinOpsError:
        x, stats, resid = None, None, np.inf
    scale = max(np.linalg.norm(atb), 1e-300)
    if resid / scale <= max(params.tol, 1e-8) * 10:
        stats.algorithm = "cg-normal"
        return x, stats
    if max(A.shape) <= config.get_dense_cap():
        x = np.linalg.pinv(dense(A)) @ b
        st = _direct_stats("dense-svd")
        return x, st
    U, s, V = randomized_svd(
        A, rank=min(A.shape) - 10, oversample=10,
        rng=np.random.default_rng(params.rng_seed), n_power_iter=4,
    )
    keep = s > s[0] * 1e-12 if s.size else s.astype(bool)
    x = V[:, keep] @ ((U[:, keep].conj().T @ b) / s[keep])
    return x, _direct_stats("randomized-svd")


def _pinv_unitary(A, b, params, reg):
    return mvm(adjoint(A), b), _direct_stats()


def _pinv_selfadjoint(A, b, params, reg):
    try:
        x, stats = _solve(A, b, params, reg)
    except LinOpsError:
        return _pinv_base(A, b, params, reg)
    resid = stats.residual_history[-1] if stats.residual_history else np.inf
    if stats.converged or resid <= params.tol:
        return x, stats
    return _pinv_base(A, b, params, reg)


def _pinv_kron(A, b, params, reg):
    a, c = A.children
    X = b.reshape(c.rows, a.rows, order="F")
    inner = []
    Z = np.empty((c.cols, a.rows), dtype=np.result_type(X.dtype, float))
    for j in range(X.shape[1]):
        Z[:, j], st = _pinv_apply(c, X[:, j], params, reg)
        inner.append(st)
    Y = np.empty((a.cols, c.cols), dtype=Z.dtype)
    for j in range(Z.shape[0]):
        Y[:, j], st = _pinv_apply(a, Z[j, :], params, reg)
        inner.append(st)
    return Y.T.ravel(order="F"), _merge_children(_direct_stats(), inner)


def _pinv_blockdiag(A, b, params, reg):
    parts = []
    inner = []
    at = 0
    for blk in A.children:
        x, st = _pinv_apply(blk, b[at : at + blk.rows], params, reg)
        parts.append(x)
        inner.append(st)
        at += blk.rows
    return np.concatenate(parts), _merge_children(_direct_stats(), inner)


def _pinv_product(A, b, params, reg):
    # (A B)^+ = (A^+ A B)^+ (A B B^+)^+, sub-pinvs resolved by the base case
    if len(A.children) != 2:
        return _pinv_base(A, b, params, reg)
    a, c = A.children
    a_pinv = PseudoInverse(a, params, reg)
    c_pinv = PseudoInverse(c, params, reg)
    m1 = Product([a_pinv, a, c])
    m2 = Product([a, c, c_pinv])
    t, st1 = _pinv_base(m2, b, params, reg)
    x, st2 = _pinv_base(m1, t, params, reg)
    return x, _merge_children(_direct_stats(), [st1, st2])


def _register_pinv(reg):
    reg.register("pinv", ANY, _pinv_base, name="cg-normal")
    reg.register("pinv", Pattern(annotations=frozenset({UNITARY})), _pinv_unitary,
                 name="unitary-adjoint")
    reg.register("pinv", Pattern(annotations=frozenset({SELF_ADJOINT}),
                                 predicate=lambda op: op.is_square),
                 _pinv_selfadjoint, name="selfadjoint-solve")
    reg.register("pinv", Pattern(kind="kron"), _pinv_kron, name="kron-split")
    reg.register("pinv", Pattern(kind="blockdiag"), _pinv_blockdiag,
                 name="blockdiag-split")
    reg.register("pinv", Pattern(kind="product"), _pinv_product, name="product-split")


def _register_builtins(reg):
    _register_solve(reg)
    _register_eig(reg)
    _register_diag(reg)
    _register_trace(reg)
    _register_apply_fn(reg)
    _register_logdet(reg)
    _register_pinv(reg)
