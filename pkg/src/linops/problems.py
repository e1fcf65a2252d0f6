"""Seeded synthetic problem generators for the benchmark commands and demos.

Each generator is versioned by a ``generator`` id string that benchmark CSV
output carries so published numbers stay reproducible.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .core import PSD, annotate, mvm
from .compose import Kronecker, Product
from .operators import Dense, Diagonal, FunctionOperator, SparseCSR, Triangular


def laplacian_1d(n, scaled=True):
    """SPD 1-D Dirichlet Laplacian (second-difference) as a CSR operator."""
    h2 = (n + 1) ** 2 if scaled else 1.0
    m = sp.diags(
        [-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr"
    ) * h2
    return annotate(SparseCSR.from_scipy(m.tocsr()), PSD)


def laplacian_2d(n, scaled=True):
    """SPD 5-point Dirichlet Laplacian on an ``n x n`` interior grid."""
    h2 = (n + 1) ** 2 if scaled else 1.0
    one = sp.diags(
        [-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr"
    )
    eye = sp.identity(n, format="csr")
    m = (sp.kron(one, eye) + sp.kron(eye, one)) * h2
    return annotate(SparseCSR.from_scipy(m.tocsr()), PSD)


def bipoisson_operator(n):
    """Squared Laplacian ``L @ L`` with the product structure kept explicit."""
    lap = laplacian_2d(n, scaled=False)
    return annotate(Product([lap, lap]), PSD)


def kron_ladder(size, seed=0):
    """Well-conditioned ``dense (x) diagonal (x) triangular`` solve problem."""
    rng = np.random.default_rng(seed)
    a = np.eye(size) + 0.1 * rng.standard_normal((size, size)) / np.sqrt(size)
    d = rng.uniform(1.0, 2.0, size)
    t = np.eye(size) + 0.3 * np.tril(rng.standard_normal((size, size)), -1) / np.sqrt(size)
    op = Kronecker(Dense(a), Kronecker(Diagonal(d), Triangular(t, lower=True)))
    b = rng.standard_normal(size**3)
    return op, b


def random_psd_terms(m, n, seed=0, as_operators=False):
    """Random PSD matrices ``G G^T / n`` for sum-structure experiments."""
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(m):
        g = rng.standard_normal((n, n))
        mats.append(g @ g.T / n)
    if as_operators:
        return [annotate(Dense(a), PSD) for a in mats]
    return mats


def rff_normal_equations(m, n, ridge=1e-3, seed=0, n_active_pairs=20,
                         lam_lo=1e-3, lam_hi=6e-3):
    """Weighted random-Fourier-feature ridge system (generator id rff-v1).

    ``(Phi^T Phi / m + ridge I) w = b`` where row ``i`` of ``Phi`` holds
    amplitude-weighted cos/sin features of a random datum.  The amplitudes
    put a linear spread of Gram eigenvalues on ``n_active_pairs`` feature
    pairs and (numerically) nothing on the rest, so the active spectrum is
    dense enough that CG cannot finite-terminate while the trace stays small.
    Because cos^2 + sin^2 = 1, every rank-one term has exactly the same norm.

    Returns the per-datum ``phi_i phi_i^T + ridge I`` closures (whose mean is
    the system matrix), the right-hand side, and the dense matrix for
    oracles.
    """
    rng = np.random.default_rng(seed)
    d = 5
    xs = rng.standard_normal((m, d))
    w_freq = rng.standard_normal((d, n // 2)) / 0.8
    lam = np.full(n // 2, 1e-9)
    lam[:n_active_pairs] = np.linspace(lam_hi, lam_lo, n_active_pairs)
    amps = np.sqrt(n * lam)
    proj = xs @ w_freq
    phi = np.concatenate(
        [amps * np.cos(proj), amps * np.sin(proj)], axis=1
    ) * np.sqrt(2.0 / n)
    y = rng.standard_normal(m)
    amat = phi.T @ phi / m + ridge * np.eye(n)
    b = phi.T @ y / m
    terms = [
        (lambda row: (lambda v: row * (row @ v) + ridge * v))(phi[i])
        for i in range(m)
    ]
    return terms, b, amat


def minimal_surface_problem(n, boundary="sine"):
    """Discretized minimal-surface root-finding problem on an ``n x n`` grid.

    Returns ``(residual, jacobian_operator, z0)`` where ``residual`` maps the
    interior heights to the PDE residual
    ``(1 + z_x^2) z_yy - 2 z_x z_y z_xy + (1 + z_y^2) z_xx`` and the Jacobian
    acts by central finite differences of the residual.
    """
    h = 1.0 / (n + 1)
    xs = np.linspace(0.0, 1.0, n + 2)

    if boundary == "planar":
        g = 0.3 * xs[:, None] + 0.7 * xs[None, :] + 0.1
    elif boundary == "sine":
        g = np.sin(np.pi * xs)[:, None] * 0.5 + 0.2 * xs[None, :]
    else:
        raise ValueError(f"unknown boundary: {boundary}")

    def full_grid(z):
        zfull = g.copy()
        zfull[1:-1, 1:-1] = z.reshape(n, n)
        return zfull

    def residual(z):
        zf = full_grid(z)
        zx = (zf[2:, 1:-1] - zf[:-2, 1:-1]) / (2 * h)
        zy = (zf[1:-1, 2:] - zf[1:-1, :-2]) / (2 * h)
        zxx = (zf[2:, 1:-1] - 2 * zf[1:-1, 1:-1] + zf[:-2, 1:-1]) / h**2
        zyy = (zf[1:-1, 2:] - 2 * zf[1:-1, 1:-1] + zf[1:-1, :-2]) / h**2
        zxy = (zf[2:, 2:] - zf[2:, :-2] - zf[:-2, 2:] + zf[:-2, :-2]) / (4 * h**2)
        return ((1 + zx**2) * zyy - 2 * zx * zy * zxy + (1 + zy**2) * zxx).ravel()

    def jacobian_at(z):
        base_scale = max(np.linalg.norm(z) / max(z.size, 1), 1.0)

        def jvp(v):
            eps = 1e-6 * base_scale / max(np.linalg.norm(v), 1e-300)
            return (residual(z + eps * v) - residual(z - eps * v)) / (2 * eps)

        return FunctionOperator(jvp, (n * n, n * n))

    # bilinear interpolation of the corner values; planar data stays planar
    ti = xs[1:-1]
    z0 = (
        np.outer(1 - ti, 1 - ti) * g[0, 0]
        + np.outer(1 - ti, ti) * g[0, -1]
        + np.outer(ti, 1 - ti) * g[-1, 0]
        + np.outer(ti, ti) * g[-1, -1]
    ).ravel()
    return residual, jacobian_at, z0


def schrodinger_1d(n, box=12.0):
    """Nonsymmetric compactified 1-D Hamiltonian ``-d2/dx2 + x^2/2``.

    The line is mapped through ``x = tan(u)``; in the compact coordinate the
    kinetic term picks up a first-derivative piece, so the discretized
    operator is not symmetric.
    """
    lim = np.arctan(box)
    u = np.linspace(-lim, lim, n + 2)[1:-1]
    du = u[1] - u[0]
    cos_u = np.cos(u)
    x = np.tan(u)
    d1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="csr") / (2 * du)
    d2 = sp.diags(
        [np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="csr"
    ) / du**2
    kinetic = -(sp.diags(cos_u**4) @ d2) + sp.diags(2 * cos_u**3 * np.sin(u)) @ d1
    h = kinetic + sp.diags(0.5 * x**2)
    return SparseCSR.from_scipy(h.tocsr())
