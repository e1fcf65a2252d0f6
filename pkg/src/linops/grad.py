"""Closed-form differentiation rules through a parameter-cotangent interface.

The primitive is the bilinear pullback ``u^T (d A / d theta) v`` accumulated
over the flattened leaf parameters of an expression tree.  Higher-level rules
(solves, eigenvalues, log-determinants, diagonals) reduce to this primitive
plus a constant number of extra solves, so their memory cost is independent
of inner-solver iteration counts.

A central finite-difference checker is included as the independent oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .compose import transpose
from .core import (
    SELF_ADJOINT,
    LinearOperator,
    ParamVector,
    flatten_params,
    mvm,
    mvm_block,
    param_layout,
    unflatten_params,
)
from .dispatch import eig, solve
from .errors import DomainError, LinOpsError
from .krylov import SolveParams, minres

ParamCotangent = ParamVector


def _csr_row_indices(op):
    return np.repeat(np.arange(op.rows), np.diff(op.row_ptr))


def _leaf_contributions(node, U, V):
    """Per-parameter arrays of ``sum_s u_s^T (dA/dparam) v_s`` for one leaf."""
    k = node.kind
    if k == "diagonal":
        return {"diag": (U * V).sum(axis=1)}
    if k == "dense":
        return {"matrix": U @ V.T}
    if k == "scalar":
        return {"scalar": np.asarray((U * V).sum())}
    if k == "csr":
        rows = _csr_row_indices(node)
        return {"values": (U[rows] * V[node.col_idx]).sum(axis=1)}
    if k == "circulant":
        # d(a * v)/da_k pairs u with v rotated by k: a circular correlation
        rev = np.roll(V[::-1, :], 1, axis=0)
        conv = np.fft.ifft(np.fft.fft(U, axis=0) * np.fft.fft(rev, axis=0), axis=0)
        total = conv.sum(axis=1)
        if not np.issubdtype(node.dtype, np.complexfloating):
            total = total.real
        return {"filter": total}
    if k == "triangular":
        m = U @ V.T
        return {"tri": m[node._tri_indices()]}
    if k == "tridiagonal":
        m = U @ V.T
        return {
            "sub": np.diagonal(m, -1).copy(),
            "main": np.diagonal(m).copy(),
            "sup": np.diagonal(m, 1).copy(),
        }
    if k == "lowrank":
        rv = node.right @ V
        return {"left": U @ rv.T, "right": (node.left.T @ U) @ V.T}
    return {}


def _accumulate(node, U, V, path, out, index, params):
    k = node.kind
    if node.is_leaf:
        for name, arr in _leaf_contributions(node, U, V).items():
            rec = index.get((path, name))
            if rec is not None:
                out[rec.offset : rec.offset + rec.size] += np.ravel(arr)
        return
    if k == "sum":
        for i, child in enumerate(node.children):
            _accumulate(child, U, V, path + (i,), out, index, params)
    elif k == "scaled":
        child = node.children[0]
        rec = index.get((path, "scalar"))
        if rec is not None:
            out[rec.offset] += np.sum(U * mvm_block(child, V))
        _accumulate(child, node.value * U, V, path + (0,), out, index, params)
    elif k == "product":
        factors = node.children
        n = len(factors)
        rights = [None] * n
        rights[n - 1] = V
        for i in range(n - 2, -1, -1):
            rights[i] = mvm_block(factors[i + 1], rights[i + 1])
        left = U
        for i in range(n):
            _accumulate(factors[i], left, rights[i], path + (i,), out, index, params)
            if i + 1 < n:
                left = mvm_block(transpose(factors[i]), left)
    elif k == "kron":
        a, b = node.children
        for s in range(U.shape[1]):
            Us = U[:, s].reshape(b.rows, a.rows, order="F")
            Xs = V[:, s].reshape(b.cols, a.cols, order="F")
            ma = Us.T @ mvm_block(b, Xs)  # tr(dA^T U_s^T B X_s) pairs
            _accumulate(a, ma, np.eye(a.cols), path + (0,), out, index, params)
            mb = Us @ mvm_block(a, Xs.T)  # tr(dB (X_s A^T U_s^T)) pairs
            _accumulate(b, mb, np.eye(b.cols), path + (1,), out, index, params)
    elif k == "kron_sum":
        a, b = node.children
        for s in range(U.shape[1]):
            Us = U[:, s].reshape(b.rows, a.rows, order="F")
            Xs = V[:, s].reshape(b.rows, a.rows, order="F")
            _accumulate(a, Us.T @ Xs, np.eye(a.rows), path + (0,), out, index, params)
            _accumulate(b, Us @ Xs.T, np.eye(b.rows), path + (1,), out, index, params)
    elif k == "blockdiag":
        r = c = 0
        for i, blk in enumerate(node.children):
            _accumulate(blk, U[r : r + blk.rows], V[c : c + blk.cols],
                        path + (i,), out, index, params)
            r += blk.rows
            c += blk.cols
    elif k == "block2x2":
        a, bb, cc, d = node.children
        U1, U2 = U[: a.rows], U[a.rows :]
        V1, V2 = V[: a.cols], V[a.cols :]
        _accumulate(a, U1, V1, path + (0,), out, index, params)
        _accumulate(bb, U1, V2, path + (1,), out, index, params)
        _accumulate(cc, U2, V1, path + (2,), out, index, params)
        _accumulate(d, U2, V2, path + (3,), out, index, params)
    elif k == "concat":
        if node.axis == "rows":
            at = 0
            for i, blk in enumerate(node.children):
                _accumulate(blk, U[at : at + blk.rows], V, path + (i,), out, index, params)
                at += blk.rows
        else:
            at = 0
            for i, blk in enumerate(node.children):
                _accumulate(blk, U, V[at : at + blk.cols], path + (i,), out, index, params)
                at += blk.cols
    elif k == "transpose":
        _accumulate(node.children[0], V, U, path + (0,), out, index, params)
    elif k == "inverse":
        # u^T d(C^{-1}) v = -(C^{-T} u)^T (dC) (C^{-1} v)
        child = node.children[0]
        S = np.empty_like(U)
        Y = np.empty_like(V)
        ct = transpose(child)
        for s in range(U.shape[1]):
            S[:, s] = solve(ct, U[:, s], params).x
            Y[:, s] = solve(child, V[:, s], params).x
        _accumulate(child, -S, Y, path + (0,), out, index, params)
    else:
        # composite without a rule contributes nothing (mirrors closure leaves)
        return


def param_vjp_mvm(A: LinearOperator, u, v,
                  params: SolveParams | None = None) -> ParamCotangent:
    """Pullback of the bilinear form ``u^T A v`` onto the leaf parameters."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != (A.rows,) or v.shape != (A.cols,):
        raise LinOpsError(
            f"cotangent shapes {u.shape}/{v.shape} do not match operator {A.shape}"
        )
    return _pairs_vjp(A, u[:, None], v[:, None], params)


def _pairs_vjp(A, U, V, params=None):
    pv = flatten_params(A)
    out = np.zeros_like(pv.values, dtype=np.result_type(pv.values.dtype, float))
    index = {(rec.path, rec.name): rec for rec in pv.layout}
    _accumulate(A, U, V, (), out, index, params or SolveParams())
    return ParamVector(values=out, layout=pv.layout)


def vjp_solve(A: LinearOperator, b, w, params: SolveParams | None = None):
    """Pullback of ``y = solve(A, b)`` against an output cotangent ``w``.

    Costs two solves and one parameter pullback regardless of how many
    iterations the inner solver runs.
    """
    params = params or SolveParams()
    y = solve(A, np.asarray(b), params).x
    s = solve(transpose(A), np.asarray(w), params).x
    dtheta = _pairs_vjp(A, -s[:, None], y[:, None], params)
    return dtheta, s


def _gauge_fix(vecs):
    """Sign convention: largest-magnitude entry of each column is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _symmetric_eig(A, params):
    if SELF_ADJOINT not in A.annotations:
        raise DomainError("eigen-derivative rules require a self-adjoint annotation")
    res = eig(A, params=params)
    from .core import dense as _dense

    V = _gauge_fix(np.real(_dense(res.eigvecs)))
    return np.real(res.eigvals), V


def _warn_degenerate(vals):
    gaps = np.diff(np.sort(vals))
    if gaps.size and gaps.min() < 1e-8:
        warnings.warn(
            "eigenvalue gap below 1e-8: derivative is ill-defined for the "
            "degenerate pairs",
            RuntimeWarning,
            stacklevel=3,
        )


def vjp_eigvals(A: LinearOperator, w, params: SolveParams | None = None):
    """Pullback of ascending eigenvalues of a self-adjoint operator."""
    params = params or SolveParams()
    vals, V = _symmetric_eig(A, params)
    _warn_degenerate(vals)
    w = np.asarray(w)
    return _pairs_vjp(A, V * w, V, params)


def vjp_eigvec(A: LinearOperator, i, w, params: SolveParams | None = None):
    """Pullback of the ``i``-th (ascending, gauge-fixed) eigenvector.

    The pseudo-inverse ``(lambda_i I - A)^+`` is realized as a deflated MINRES
    solve restricted to the orthogonal complement of ``v_i``.
    """
    params = params or SolveParams()
    vals, V = _symmetric_eig(A, params)
    _warn_degenerate(vals)
    lam = vals[i]
    vi = V[:, i]
    w = np.asarray(w, dtype=float)
    w_perp = w - vi * (vi @ w)

    def deflated(x):
        x = x - vi * (vi @ x)
        y = lam * x - mvm(A, x)
        return y - vi * (vi @ y)

    s, stats = minres(deflated, w_perp, params)
    s = s - vi * (vi @ s)
    return _pairs_vjp(A, s[:, None], vi[:, None], params)


def vjp_logdet(A: LinearOperator, params: SolveParams | None = None,
               mode="exact", probes=None):
    """Pullback of ``log det A`` for PSD ``A``: ``Tr(A^{-1} dA)``.

    Exact mode runs ``N`` solves; estimate mode averages Hutchinson probes
    ``(A^{-T} z) (dA) z``.
    """
    params = params or SolveParams()
    n = A.rows
    at = transpose(A)
    if mode == "exact":
        U = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            U[:, j] = solve(at, e, params).x
        return _pairs_vjp(A, U, np.eye(n), params)
    if mode == "estimate":
        from .stochastic import ProbeConfig
        from .krylov import sample_probes

        probes = probes or ProbeConfig()
        rng = np.random.default_rng(probes.rng_seed)
        Z = sample_probes(rng, (n, probes.n_probes), probes.distribution)
        U = np.empty_like(Z)
        for j in range(Z.shape[1]):
            U[:, j] = solve(at, Z[:, j], params).x
        return _pairs_vjp(A, U / probes.n_probes, Z, params)
    raise ValueError(f"unknown vjp_logdet mode: {mode}")


def vjp_diag(A: LinearOperator, w, params: SolveParams | None = None):
    """Pullback of the diagonal map: ``sum_i w_i e_i^T (dA) e_i``."""
    w = np.asarray(w)
    n = A.rows
    return _pairs_vjp(A, np.diag(w.astype(float)), np.eye(n), params)


@dataclass
class FdReport:
    max_rel_dev: float
    deviations: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    tol: float

    @property
    def passed(self):
        return bool(self.max_rel_dev <= self.tol)


def fd_check(objective, theta0, analytic: ParamCotangent, step=1e-5,
             tol=1e-5) -> FdReport:
    """Central finite-difference check of an analytic parameter gradient.

    ``objective`` maps a flat parameter vector to a scalar; steps are scaled
    per coordinate by ``max(1, |theta_i|)``.
    """
    theta0 = np.asarray(theta0, dtype=float)
    grad = np.asarray(analytic.values, dtype=float)
    if theta0.shape != grad.shape:
        raise LinOpsError(
            f"theta of shape {theta0.shape} does not match cotangent {grad.shape}"
        )
    fd = np.empty_like(theta0)
    for i in range(theta0.size):
        h = step * max(1.0, abs(theta0[i]))
        up = theta0.copy()
        dn = theta0.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (objective(up) - objective(dn)) / (2 * h)
    scale = max(np.max(np.abs(grad), initial=0.0), np.max(np.abs(fd), initial=0.0), 1e-12)
    dev = np.abs(grad - fd) / np.maximum(
        np.maximum(np.abs(grad), np.abs(fd)), 1e-6 * scale
    )
    return FdReport(
        max_rel_dev=float(dev.max(initial=0.0)),
        deviations=dev,
        analytic=grad,
        numeric=fd,
        tol=tol,
    )


def objective_from_tree(A: LinearOperator, fn):
    """Build ``theta -> fn(unflatten(A, theta))`` for finite differencing."""
    layout = param_layout(A)

    def objective(theta):
        pv = ParamVector(values=np.asarray(theta, dtype=float), layout=layout)
        return fn(unflatten_params(A, pv))

    return objective
