"""Stochastic estimators and variance-reduced iterations for implicit structure.

Two families live here: Hutchinson-style probe estimators for diagonals and
traces (including the doubly stochastic variant that draws independent probes
per term of a sum), and the SVRG iteration specialized to linear-algebra
objectives (solves, top-k eigenvectors, nullspaces).

The doubly stochastic estimators target the *mean* of the supplied terms,
``(1/m) sum_i A_i``, with the ``1/(n m)`` normalization; callers estimating a
plain sum scale the result by ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepSizeError
from .krylov import IterStats, SolveParams, power_iteration, sample_probes


@dataclass
class ProbeConfig:
    n_probes: int = 64
    batch: int = 1
    distribution: str = "gaussian"
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_probes < 1:
            raise ValueError("n_probes must be at least 1")
        if self.distribution not in ("gaussian", "rademacher"):
            raise ValueError(f"unknown probe distribution: {self.distribution}")


@dataclass
class SvrgParams:
    """Controls for the epoch-anchored variance-reduced iteration.

    ``step_size=None`` selects ``1/(2 L)`` with ``L`` estimated by power
    iteration on the mean operator and a sample of individual terms.
    ``batch`` is the number of sum terms sampled per inner step.
    ``keep_anchors`` stores (anchor, anchor-gradient) pairs in the stats for
    bookkeeping self-checks.
    """

    step_size: float | None = None
    epochs: int = 200
    batch: int = 1
    tol: float = 1e-8
    rng_seed: int = 0
    keep_anchors: bool = False

    def __post_init__(self):
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be at least 1")


def _stderr(samples, axis=0):
    n = samples.shape[axis]
    if n < 2:
        return np.zeros_like(np.take(samples, 0, axis=axis), dtype=float)
    return np.std(samples, axis=axis, ddof=1) / np.sqrt(n)


def hutchinson_diag(apply, n, probes: ProbeConfig):
    """Unbiased diagonal estimate ``(1/n) sum_j z_j * (A z_j)``.

    Returns the estimate and the componentwise standard error across probes.
    """
    rng = np.random.default_rng(probes.rng_seed)
    samples = np.empty((probes.n_probes, n))
    for j in range(probes.n_probes):
        z = sample_probes(rng, n, probes.distribution)
        samples[j] = z * apply(z)
    return samples.mean(axis=0), _stderr(samples)


def hutchinson_trace(apply, n, probes: ProbeConfig):
    """Unbiased trace estimate ``(1/n) sum_j z_j^T A z_j``."""
    rng = np.random.default_rng(probes.rng_seed)
    samples = np.empty(probes.n_probes)
    for j in range(probes.n_probes):
        z = sample_probes(rng, n, probes.distribution)
        samples[j] = z @ apply(z)
    return float(samples.mean()), float(_stderr(samples))


def doubly_stochastic_diag(terms, n, probes: ProbeConfig):
    """Diagonal of the term mean with one independent probe per (term, round).

    Sampling probes independently per term drops the estimator variance from
    ``O(1/n)`` to ``O(1/(n m))`` at the same total MVM budget.
    """
    if not terms:
        raise ValueError("doubly stochastic estimator requires at least one term")
    rng = np.random.default_rng(probes.rng_seed)
    m = len(terms)
    samples = np.empty((probes.n_probes, n))
    for j in range(probes.n_probes):
        acc = np.zeros(n)
        for term in terms:
            z = sample_probes(rng, n, probes.distribution)
            acc += z * term(z)
        samples[j] = acc / m
    return samples.mean(axis=0), _stderr(samples)


def doubly_stochastic_trace(terms, n, probes: ProbeConfig):
    """Trace of the term mean; scalar form of :func:`doubly_stochastic_diag`."""
    if not terms:
        raise ValueError("doubly stochastic estimator requires at least one term")
    rng = np.random.default_rng(probes.rng_seed)
    m = len(terms)
    samples = np.empty(probes.n_probes)
    for j in range(probes.n_probes):
        acc = 0.0
        for term in terms:
            z = sample_probes(rng, n, probes.distribution)
            acc += z @ term(z)
        samples[j] = acc / m
    return float(samples.mean()), float(_stderr(samples))


def _mean_apply(terms):
    m = len(terms)

    def apply(v):
        out = terms[0](v)
        for t in terms[1:]:
            out = out + t(v)
        return out / m

    return apply


def _default_step(terms, n, rng_seed):
    """Step ``1/(2 L)`` where ``L`` bounds both the mean operator's norm and
    the smoothness of individual terms (which governs SVRG stability)."""
    lam, _, _ = power_iteration(
        _mean_apply(terms), n, SolveParams(tol=1e-3, max_iter=100, rng_seed=rng_seed)
    )
    lam = abs(lam)
    rng = np.random.default_rng(rng_seed)
    sample = rng.choice(len(terms), size=min(len(terms), 16), replace=False)
    for i in sample:
        li, _, _ = power_iteration(
            terms[i], n, SolveParams(tol=1e-2, max_iter=50, rng_seed=rng_seed + 1)
        )
        lam = max(lam, abs(li))
    if lam == 0:
        raise StepSizeError("operator appears to be zero; cannot pick a step size")
    return 1.0 / (2.0 * lam)


def _epoch_anchor(terms, W):
    """One full pass: per-term applications of the current iterate."""
    out = terms[0](W)
    for t in terms[1:]:
        out = out + t(W)
    return out / len(terms)


def svrg_solve(terms, b, params: SvrgParams | None = None):
    """Solve ``(mean_i A_i) w = b`` for symmetric PSD mean by SVRG.

    Inner steps use the variance-reduced gradient
    ``A_i (w - w0) + (A w0 - b)``, so each epoch costs two full passes over
    the terms (one for the anchor gradient, one spread across inner steps).
    """
    params = params or SvrgParams()
    terms = list(terms)
    m = len(terms)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    rng = np.random.default_rng(params.rng_seed)
    eta = params.step_size if params.step_size is not None else _default_step(
        terms, n, params.rng_seed
    )
    stats = IterStats(algorithm="svrg")
    element_mvms = 0
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        stats.converged = True
        stats.residual_history.append(0.0)
        return np.zeros_like(b), stats
    w = np.zeros_like(b)
    inner_steps = max(1, m // params.batch)
    prev_res = np.inf
    for epoch in range(1, params.epochs + 1):
        w0 = w.copy()
        if epoch == 1:
            g0 = -b  # anchor gradient at w = 0 costs no term applications
        else:
            g0 = _epoch_anchor(terms, w0) - b
            element_mvms += m
        if params.keep_anchors:
            stats.extra.setdefault("anchors", []).append((w0.copy(), g0.copy()))
        relres = np.linalg.norm(g0) / bnorm
        stats.residual_history.append(float(relres))
        stats.iterations = epoch
        if relres <= params.tol:
            stats.converged = True
            break
        if relres > 10.0 * prev_res:
            raise StepSizeError(
                f"SVRG residual grew from {prev_res:.3e} to {relres:.3e} in one "
                f"epoch; retry with a smaller step size than {eta:.3e}"
            )
        prev_res = min(prev_res, relres)
        for _ in range(inner_steps):
            idx = rng.integers(0, m, size=params.batch)
            d = w - w0
            corr = np.zeros_like(w)
            for i in idx:
                corr += terms[i](d)
            element_mvms += len(idx)
            w = w - eta * (corr / len(idx) + g0)
    stats.extra["element_mvms"] = element_mvms
    stats.extra["step_size"] = eta
    stats.mvm_count = element_mvms
    return w, stats


def _orthonormalize(W):
    q, _ = np.linalg.qr(W)
    return q


def svrg_topk_eigs(terms, k, n, params: SvrgParams | None = None):
    """Top-``k`` eigenpairs of the symmetric PSD term mean by SVRG.

    The stochastic gradient per term is ``-A_i W + W (W^T W)``, whose
    stationary points span the dominant eigenspace.  Returns an ``n x k``
    orthonormal basis rotated into eigenvector columns and the Rayleigh-quotient
    eigenvalues, sorted descending.
    """
    params = params or SvrgParams()
    terms = list(terms)
    m = len(terms)
    rng = np.random.default_rng(params.rng_seed)
    eta = params.step_size if params.step_size is not None else _default_step(
        terms, n, params.rng_seed
    )
    stats = IterStats(algorithm="svrg-eigs")
    element_mvms = 0
    W = rng.standard_normal((n, k))
    W = _orthonormalize(W)
    inner_steps = max(1, m // params.batch)
    for epoch in range(1, params.epochs + 1):
        W0 = W.copy()
        AW0 = _epoch_anchor(terms, W0)
        element_mvms += m
        # generalized subspace residual, valid for non-orthonormal frames
        gram = W0.T @ W0
        rq = np.linalg.solve(gram, W0.T @ AW0)
        resid = np.linalg.norm(AW0 - W0 @ rq, "fro") / max(
            np.linalg.norm(AW0, "fro"), 1e-300
        )
        stats.residual_history.append(float(resid))
        stats.iterations = epoch
        if resid <= params.tol:
            stats.converged = True
            break
        g0 = -AW0 + W0 @ (W0.T @ W0)
        for _ in range(inner_steps):
            idx = rng.integers(0, m, size=params.batch)
            d = W - W0
            corr = np.zeros_like(W)
            for i in idx:
                corr += terms[i](d)
            element_mvms += len(idx)
            gi_delta = -corr / len(idx) + W @ (W.T @ W) - W0 @ (W0.T @ W0)
            W = W - eta * (gi_delta + g0)
        if not np.all(np.isfinite(W)):
            raise StepSizeError(
                f"SVRG eigensolver diverged; retry with a step smaller than {eta:.3e}"
            )
    W = _orthonormalize(W)
    rayleigh = W.T @ _epoch_anchor(terms, W)
    element_mvms += m
    vals, rot = np.linalg.eigh((rayleigh + rayleigh.T) / 2)
    order = np.argsort(vals)[::-1]
    stats.extra["element_mvms"] = element_mvms
    stats.mvm_count = element_mvms
    return W @ rot[:, order], vals[order], stats


def svrg_nullspace(terms, k, n, params: SvrgParams | None = None):
    """``k``-dimensional (approximate) nullspace of the PSD term mean.

    Gradient-descends ``tr(W^T A W)/2`` with per-term gradients ``A_i W`` and
    re-orthonormalizes the frame after every epoch.  A frame that stops
    improving above ``tol`` is returned flagged as partial.
    """
    params = params or SvrgParams()
    terms = list(terms)
    m = len(terms)
    rng = np.random.default_rng(params.rng_seed)
    eta = params.step_size if params.step_size is not None else _default_step(
        terms, n, params.rng_seed
    )
    stats = IterStats(algorithm="svrg-nullspace")
    element_mvms = 0
    W = _orthonormalize(rng.standard_normal((n, k)))
    inner_steps = max(1, m // params.batch)
    stall = 0
    best = np.inf
    for epoch in range(1, params.epochs + 1):
        W0 = W.copy()
        g0 = _epoch_anchor(terms, W0)  # A W0
        element_mvms += m
        resid = np.linalg.norm(g0, "fro") / np.linalg.norm(W0, "fro")
        stats.residual_history.append(float(resid))
        stats.iterations = epoch
        if resid <= params.tol:
            stats.converged = True
            break
        if resid < best * (1 - 1e-3):
            best = resid
            stall = 0
        else:
            stall += 1
            if stall >= 25:
                stats.extra["diagnosis"] = (
                    "smallest Rayleigh quotient stopped decreasing above tol; "
                    "nullity may be smaller than k"
                )
                break
        for _ in range(inner_steps):
            idx = rng.integers(0, m, size=params.batch)
            d = W - W0
            corr = np.zeros_like(W)
            for i in idx:
                corr += terms[i](d)
            element_mvms += len(idx)
            W = W - eta * (corr / len(idx) + g0)
        W = _orthonormalize(W)
    stats.extra["element_mvms"] = element_mvms
    stats.mvm_count = element_mvms
    return W, stats
