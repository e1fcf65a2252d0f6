"""Matrix-free base-case algorithms: CG, MINRES, GMRES, Arnoldi (MGS and
Householder variants), Lanczos, power iteration, stochastic Lanczos quadrature
and randomized SVD.

All procedures are pure functions of caller-supplied MVM closures; randomness
enters only through explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalBreakdownError

BREAKDOWN_EPS = 1e-12


@dataclass
class SolveParams:
    """Shared iterative-solver controls.

    ``preconditioner`` is an operator applied as an approximation of the
    system inverse; ``algorithm_override`` forces a base algorithm by name,
    bypassing structural dispatch.
    """

    tol: float = 1e-8
    max_iter: int = 1000
    preconditioner: object | None = None
    rng_seed: int = 0
    algorithm_override: str | None = None

    def __post_init__(self):
        if not (0.0 < self.tol < 1.0):
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")


@dataclass
class IterStats:
    algorithm: str = ""
    iterations: int = 0
    mvm_count: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def final_residual(self):
        return self.residual_history[-1] if self.residual_history else np.nan


@dataclass
class KrylovFactorization:
    """Arnoldi/Lanczos factorization ``A Q[:, :k] = Q H``.

    Without breakdown ``q_basis`` is ``N x (T+1)`` and ``hessenberg`` is
    ``(T+1) x T``; on breakdown at step ``j`` both are truncated to the
    invariant subspace (``N x (j+1)`` and square ``(j+1) x (j+1)``).
    """

    q_basis: np.ndarray
    hessenberg: np.ndarray
    breakdown_index: int | None = None
    clamped: bool = False

    @property
    def square_part(self):
        k = self.hessenberg.shape[1]
        return self.hessenberg[:k, :k]


def _counting(apply):
    calls = [0]

    def wrapped(v):
        calls[0] += 1
        return apply(v)

    return wrapped, calls


def _precond_closure(params):
    if params.preconditioner is None:
        return None
    from .core import mvm as _mvm

    M = params.preconditioner
    return lambda r: _mvm(M, r)


def sample_probes(rng, size, distribution="gaussian"):
    """Identity-covariance probe vectors (columns if ``size`` is a 2-tuple)."""
    if distribution == "gaussian":
        return rng.standard_normal(size)
    if distribution == "rademacher":
        return rng.integers(0, 2, size=size).astype(float) * 2.0 - 1.0
    raise ValueError(f"unknown probe distribution: {distribution}")


def cg(apply, b, params: SolveParams | None = None):
    """Conjugate gradients for symmetric positive (semi)definite operators."""
    params = params or SolveParams()
    apply, calls = _counting(apply)
    precond = _precond_closure(params)
    b = np.asarray(b)
    stats = IterStats(algorithm="cg")
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0:
        stats.converged = True
        stats.residual_history.append(0.0)
        return x, stats
    r = b.copy()
    z = precond(r) if precond else r
    p = z.copy()
    rz = np.vdot(r, z)
    for k in range(1, params.max_iter + 1):
        Ap = apply(p)
        alpha = rz / np.vdot(p, Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        relres = np.linalg.norm(r) / bnorm
        stats.residual_history.append(float(relres))
        stats.iterations = k
        if not np.isfinite(relres):
            raise NumericalBreakdownError(
                f"CG produced non-finite residual at iteration {k}", iteration=k
            )
        if relres <= params.tol:
            break
        z = precond(r) if precond else r
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    true_rel = np.linalg.norm(b - apply(x)) / bnorm
    stats.residual_history[-1] = float(true_rel)
    stats.converged = bool(true_rel <= params.tol)
    stats.mvm_count = calls[0]
    return x, stats


def minres(apply, b, params: SolveParams | None = None):
    """Minimum-residual solves for symmetric (possibly indefinite) operators.

    Implemented as the residual minimizer over the growing Lanczos subspace
    with full reorthogonalization, which is robust at desk scale.
    """
    params = params or SolveParams()
    apply, calls = _counting(apply)
    b = np.asarray(b)
    n = b.shape[0]
    stats = IterStats(algorithm="minres")
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        stats.converged = True
        stats.residual_history.append(0.0)
        return np.zeros_like(b), stats
    t_max = min(params.max_iter, n)
    fact, _ = _arnoldi_impl(
        apply, b / bnorm, t_max, BREAKDOWN_EPS, hermitian=True, reorth="full"
    )
    Q, H = fact.q_basis, fact.hessenberg
    m = H.shape[1]
    best = np.zeros(0, dtype=H.dtype)
    for k in range(1, m + 1):
        rows = min(k + 1, H.shape[0])
        rhs = np.zeros(rows, dtype=H.dtype)
        rhs[0] = bnorm
        y, *_ = np.linalg.lstsq(H[:rows, :k], rhs, rcond=None)
        relres = np.linalg.norm(H[:rows, :k] @ y - rhs) / bnorm
        stats.residual_history.append(float(relres))
        stats.iterations = k
        best = y
        if relres <= params.tol:
            break
    x = Q[:, : best.shape[0]] @ best
    true_rel = np.linalg.norm(b - apply(x)) / bnorm
    stats.residual_history[-1] = float(true_rel)
    stats.converged = bool(true_rel <= params.tol)
    stats.mvm_count = calls[0]
    return x, stats


def _givens(f, g):
    """Unitary rotation mapping (f, g) to (d, 0) with d real nonnegative."""
    d = np.hypot(abs(f), abs(g))
    if d == 0:
        return 1.0, 0.0
    return f / d, g / d


def gmres(apply, b, params: SolveParams | None = None, restart=None,
          orthogonalization="mgs"):
    """Generalized minimum residual solves for square operators."""
    params = params or SolveParams()
    apply, calls = _counting(apply)
    precond = _precond_closure(params)
    b = np.asarray(b)
    if precond is not None:
        raw_apply = apply
        apply = lambda v: precond(raw_apply(v))
        b_sys = precond(b)
    else:
        b_sys = b
    n = b.shape[0]
    stats = IterStats(algorithm="gmres")
    bnorm = np.linalg.norm(b_sys)
    x = np.zeros_like(b_sys, dtype=np.result_type(b_sys.dtype, float))
    if bnorm == 0:
        stats.converged = True
        stats.residual_history.append(0.0)
        return x, stats
    total = 0
    stats.residual_history.append(1.0)
    prev_cycle_res = 1.0
    while total < params.max_iter:
        r = b_sys - apply(x) if total else b_sys.astype(x.dtype)
        beta = np.linalg.norm(r)
        relres = beta / bnorm
        stats.residual_history[-1] = float(relres)
        if relres <= params.tol:
            stats.converged = True
            break
        t_cycle = min(restart or params.max_iter, params.max_iter - total, n)
        if orthogonalization == "householder":
            k = _gmres_householder_cycle(apply, r, t_cycle, x, bnorm, params, stats)
            total += k
            x = stats.extra.pop("_x_next")
        else:
            x, k, lucky = _gmres_mgs_cycle(
                apply, r, beta, t_cycle, x, bnorm, params, stats
            )
            total += k
        stats.iterations = total
        true_rel = np.linalg.norm(b_sys - apply(x)) / bnorm
        stats.residual_history[-1] = float(true_rel)
        if not np.isfinite(true_rel):
            raise NumericalBreakdownError(
                f"GMRES produced non-finite residual at iteration {total}",
                iteration=total,
            )
        if true_rel <= params.tol:
            stats.converged = True
            break
        if total >= params.max_iter:
            break
        if prev_cycle_res - true_rel < 1e-14 * prev_cycle_res:
            stats.extra["diagnosis"] = "stagnated: residual reduction below 1e-14 over a cycle"
            break
        prev_cycle_res = true_rel
    stats.mvm_count = calls[0]
    return x, stats


def _gmres_mgs_cycle(apply, r, beta, t_cycle, x, bnorm, params, stats):
    n = r.shape[0]
    dtype = np.result_type(r.dtype, float)
    Q = np.zeros((n, t_cycle + 1), dtype=dtype)
    H = np.zeros((t_cycle + 1, t_cycle), dtype=dtype)
    cs = np.zeros(t_cycle, dtype=dtype)
    sn = np.zeros(t_cycle, dtype=dtype)
    g = np.zeros(t_cycle + 1, dtype=dtype)
    g[0] = beta
    Q[:, 0] = r / beta
    k = 0
    lucky = False
    for j in range(t_cycle):
        w = apply(Q[:, j])
        for i in range(j + 1):
            H[i, j] = np.vdot(Q[:, i], w)
            w = w - H[i, j] * Q[:, i]
        hnorm = np.linalg.norm(w)
        H[j + 1, j] = hnorm
        for i in range(j):
            hi, hj = H[i, j], H[i + 1, j]
            H[i, j] = np.conj(cs[i]) * hi + np.conj(sn[i]) * hj
            H[i + 1, j] = -sn[i] * hi + cs[i] * hj
        c, s = _givens(H[j, j], H[j + 1, j])
        cs[j], sn[j] = c, s
        H[j, j] = np.conj(c) * H[j, j] + np.conj(s) * H[j + 1, j]
        H[j + 1, j] = 0.0
        g[j + 1] = -s * g[j]
        g[j] = np.conj(c) * g[j]
        k = j + 1
        relres = abs(g[j + 1]) / bnorm
        stats.residual_history.append(float(relres))
        if hnorm < BREAKDOWN_EPS * max(1.0, abs(H[j, j])):
            lucky = True
            break
        if relres <= params.tol:
            break
        Q[:, j + 1] = w / hnorm
    y = np.linalg.solve(H[:k, :k], g[:k]) if k else np.zeros(0, dtype=dtype)
    return x + Q[:, :k] @ y, k, lucky


def _gmres_householder_cycle(apply, r, t_cycle, x, bnorm, params, stats):
    fact, _ = _householder_arnoldi_impl(apply, r, t_cycle)
    H = fact.hessenberg
    Q = fact.q_basis
    m = H.shape[1]
    beta = np.linalg.norm(r)
    best_k, best_y = m, None
    for k in range(1, m + 1):
        rows = min(k + 1, H.shape[0])
        rhs = np.zeros(rows, dtype=H.dtype)
        rhs[0] = beta
        y, *_ = np.linalg.lstsq(H[:rows, :k], rhs, rcond=None)
        relres = np.linalg.norm(H[:rows, :k] @ y - rhs) / bnorm
        stats.residual_history.append(float(relres))
        best_k, best_y = k, y
        if relres <= params.tol:
            break
    stats.extra["_x_next"] = x + Q[:, :best_k] @ best_y
    return best_k


def _arnoldi_impl(apply, q0, t, eps, hermitian=False, reorth="none"):
    """Modified Gram-Schmidt Arnoldi; ``hermitian`` switches to Lanczos storage."""
    q0 = np.asarray(q0)
    n = q0.shape[0]
    clamped = t > n
    t = min(t, n)
    dtype = np.result_type(q0.dtype, float)
    Q = np.zeros((n, t + 1), dtype=dtype)
    H = np.zeros((t + 1, t), dtype=dtype)
    Q[:, 0] = q0
    breakdown = None
    steps = 0
    for j in range(t):
        w = np.asarray(apply(Q[:, j])).astype(dtype, copy=False)
        if hermitian:
            lo = max(0, j - 1)
            for i in range(lo, j + 1):
                H[i, j] = np.vdot(Q[:, i], w)
                w = w - H[i, j] * Q[:, i]
            if reorth == "full" and j > 0:
                coeffs = Q[:, : j + 1].conj().T @ w
                w = w - Q[:, : j + 1] @ coeffs
        else:
            for i in range(j + 1):
                H[i, j] = np.vdot(Q[:, i], w)
                w = w - H[i, j] * Q[:, i]
        hnext = np.linalg.norm(w)
        H[j + 1, j] = hnext
        steps = j + 1
        if hnext < eps:
            breakdown = j
            break
        Q[:, j + 1] = w / hnext
        if hermitian and j + 1 < t:
            H[j, j + 1] = np.conj(H[j + 1, j])
    if breakdown is not None:
        k = breakdown + 1
        fact = KrylovFactorization(Q[:, :k], H[:k, :k], breakdown, clamped)
    else:
        fact = KrylovFactorization(Q[:, : steps + 1], H[: steps + 1, :steps], None, clamped)
    return fact, steps


def arnoldi(apply, q0, t, eps=BREAKDOWN_EPS):
    """Arnoldi iteration with modified Gram-Schmidt orthogonalization."""
    q0 = np.asarray(q0)
    nrm = np.linalg.norm(q0)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"starting vector must be unit norm, got {nrm}")
    fact, _ = _arnoldi_impl(apply, q0, t, eps)
    return fact


def _householder_vec(w, k):
    """Reflector direction zeroing entries past index ``k`` of ``w``."""
    u = np.array(w, copy=True)
    u[:k] = 0
    nrm = np.linalg.norm(u)
    if nrm == 0:
        return u
    u[k] -= nrm
    un = np.linalg.norm(u)
    if un == 0:
        return np.zeros_like(u)
    return u / un


def _reflect(u, x):
    if not u.any():
        return x
    return x - 2.0 * u * np.vdot(u, x)


def _householder_arnoldi_impl(apply, v0, t):
    v0 = np.asarray(v0, dtype=np.result_type(v0.dtype, float))
    n = v0.shape[0]
    clamped = t > n - 1
    t = min(t, n - 1) if n > 1 else 0
    us = []
    Q = np.zeros((n, t + 1), dtype=v0.dtype)
    H = np.zeros((t + 1, t), dtype=v0.dtype)
    nu = v0.copy()
    breakdown = None
    steps = 0
    for j in range(t + 1):
        u = _householder_vec(nu, j)
        us.append(u)
        h = _reflect(u, nu)
        if j > 0:
            H[: j + 1, j - 1] = h[: j + 1]
            steps = j
            if abs(h[j]) < BREAKDOWN_EPS:
                breakdown = j - 1
                break
        q = np.zeros(n, dtype=v0.dtype)
        q[j] = 1.0
        for i in range(j, -1, -1):
            q = _reflect(us[i], q)
        Q[:, j] = q
        if j < t:
            w = np.asarray(apply(q)).astype(v0.dtype, copy=False)
            for i in range(j + 1):
                w = _reflect(us[i], w)
            nu = w
    if breakdown is not None:
        k = breakdown + 1
        fact = KrylovFactorization(Q[:, :k], H[:k, :k], breakdown, clamped)
    else:
        fact = KrylovFactorization(Q, H, None, clamped)
    return fact, steps


def householder_arnoldi(apply, v0, t):
    """Arnoldi iteration orthogonalized with Householder reflectors.

    More expensive than the Gram-Schmidt variant but keeps the basis
    orthogonal to machine precision regardless of conditioning.
    """
    v0 = np.asarray(v0)
    if np.linalg.norm(v0) == 0:
        raise ValueError("starting vector must be nonzero")
    fact, _ = _householder_arnoldi_impl(apply, v0, t)
    return fact


def lanczos(apply, q0, t, reorth="full", eps=BREAKDOWN_EPS):
    """Lanczos tridiagonalization of a symmetric operator."""
    q0 = np.asarray(q0)
    nrm = np.linalg.norm(q0)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"starting vector must be unit norm, got {nrm}")
    fact, _ = _arnoldi_impl(apply, q0, t, eps, hermitian=True, reorth=reorth)
    return fact


def power_iteration(apply, n, params: SolveParams | None = None, rng=None):
    """Dominant eigenpair estimate via power iteration with Rayleigh quotients."""
    params = params or SolveParams()
    apply, calls = _counting(apply)
    rng = rng if rng is not None else np.random.default_rng(params.rng_seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    stats = IterStats(algorithm="power")
    lam = 0.0
    for k in range(1, params.max_iter + 1):
        w = apply(v)
        lam = np.vdot(v, w)
        resid = np.linalg.norm(w - lam * v)
        stats.iterations = k
        stats.residual_history.append(float(resid / max(abs(lam), 1e-300)))
        if resid <= params.tol * max(abs(lam), 1e-300):
            stats.converged = True
            break
        wn = np.linalg.norm(w)
        if wn == 0:
            break
        v = w / wn
    stats.mvm_count = calls[0]
    if np.isrealobj(v):
        lam = float(np.real(lam))
    return lam, v, stats


def slq_logdet(apply, n, n_probes, lanczos_iters, rng, distribution="gaussian"):
    """Stochastic Lanczos quadrature estimate of ``log det`` of a PSD operator.

    Each probe contributes ``||z||^2 * sum_i w_i^2 log(theta_i)`` where
    ``(theta, w)`` are the Ritz values and first-row eigenvector weights of
    the probe's Lanczos tridiagonal matrix.
    """
    total = 0.0
    for _ in range(n_probes):
        z = sample_probes(rng, n, distribution)
        zn = np.linalg.norm(z)
        if zn == 0:
            continue
        fact, _ = _arnoldi_impl(
            apply, z / zn, min(lanczos_iters, n), BREAKDOWN_EPS,
            hermitian=True, reorth="full",
        )
        tmat = np.real(fact.square_part)
        theta, w = np.linalg.eigh(tmat)
        if np.any(theta <= 0):
            raise DomainError(
                f"negative Ritz value {theta.min():.3e}: operator is not positive definite"
            )
        total += zn**2 * float(np.sum(w[0, :] ** 2 * np.log(theta)))
    return total / n_probes


def randomized_svd(A, rank, oversample=10, rng=None, n_power_iter=2):
    """Randomized SVD of a linear operator via a Gaussian range sketch.

    Returns ``(U, s, V)`` with orthonormal ``U`` and ``V`` columns such that
    ``A ~ U diag(s) V^H``.  Extra ``n_power_iter`` subspace iterations sharpen
    the range capture for slowly decaying spectra.
    """
    from .compose import adjoint
    from .core import mvm_block

    rng = rng if rng is not None else np.random.default_rng(0)
    rows, cols = A.shape
    k = rank + oversample
    if k > min(rows, cols):
        raise ValueError(
            f"rank + oversample = {k} exceeds min(shape) = {min(rows, cols)}"
        )
    At = adjoint(A)
    sketch = rng.standard_normal((cols, k))
    Y = mvm_block(A, sketch)
    Q, _ = np.linalg.qr(Y)
    for _ in range(n_power_iter):
        Z, _ = np.linalg.qr(mvm_block(At, Q))
        Q, _ = np.linalg.qr(mvm_block(A, Z))
    B = mvm_block(At, Q).conj().T
    U2, s, Vh = np.linalg.svd(B, full_matrices=False)
    U = Q @ U2
    return U[:, :rank], s[:rank], Vh[:rank].conj().T
