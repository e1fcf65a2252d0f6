import numpy as np
import pytest

from linops import (
    Dense,
    SolveParams,
    arnoldi,
    cg,
    gmres,
    householder_arnoldi,
    lanczos,
    minres,
    power_iteration,
    randomized_svd,
    slq_logdet,
)
from linops.errors import DomainError

from helpers import rand_spd


def test_cg_identity_one_iteration():
    b = np.array([1.0, 2.0, 3.0])
    x, st = cg(lambda v: v, b, SolveParams(tol=1e-12))
    assert st.iterations == 1 and st.converged
    assert np.allclose(x, b)


def test_cg_finite_termination_three_eigenvalues():
    rng = np.random.default_rng(0)
    d = np.array([1.0, 2.0, 3.0] * 10)
    for seed in range(5):
        b = np.random.default_rng(seed).standard_normal(30)
        x, st = cg(lambda v: d * v, b, SolveParams(tol=1e-10, max_iter=50))
        assert st.iterations <= 3 and st.converged


def test_cg_matches_dense_solve():
    rng = np.random.default_rng(1)
    A = rand_spd(rng, 64)
    b = rng.standard_normal(64)
    x, st = cg(lambda v: A @ v, b, SolveParams(tol=1e-10, max_iter=500))
    assert st.converged
    assert np.linalg.norm(x - np.linalg.solve(A, b)) <= 1e-8


def test_cg_preconditioner():
    from linops import jacobi_preconditioner

    rng = np.random.default_rng(2)
    d = np.linspace(1.0, 1e4, 128)
    A = np.diag(d) + 0.1 * rand_spd(rng, 128, shift=0)
    b = rng.standard_normal(128)
    plain = cg(lambda v: A @ v, b, SolveParams(tol=1e-10, max_iter=2000))[1]
    precond = cg(
        lambda v: A @ v,
        b,
        SolveParams(tol=1e-10, max_iter=2000,
                    preconditioner=jacobi_preconditioner(np.diag(A))),
    )[1]
    assert precond.converged
    assert precond.iterations < plain.iterations


def test_minres_examples():
    x, st = minres(lambda v: np.array([1.0, -1.0]) * v, np.array([1.0, 1.0]),
                   SolveParams(tol=1e-12))
    assert np.allclose(x, [1.0, -1.0])
    rng = np.random.default_rng(3)
    s = rng.standard_normal((32, 32))
    A = s + s.T  # indefinite
    b = rng.standard_normal(32)
    x, st = minres(lambda v: A @ v, b, SolveParams(tol=1e-10, max_iter=200))
    assert st.converged
    assert np.linalg.norm(x - np.linalg.solve(A, b)) <= 1e-8
    x, st = minres(lambda v: v, b, SolveParams(tol=1e-12))
    assert st.iterations == 1


def test_gmres_examples():
    rng = np.random.default_rng(4)
    b = rng.standard_normal(48)
    x, st = gmres(lambda v: v, b, SolveParams(tol=1e-12))
    assert st.iterations == 1
    A = rng.standard_normal((48, 48)) + 8 * np.eye(48)
    x, st = gmres(lambda v: A @ v, b, SolveParams(tol=1e-10, max_iter=200))
    assert st.converged
    assert np.linalg.norm(x - np.linalg.solve(A, b)) <= 1e-8
    d = np.array([1.0, 2.0, 3.0, 4.0] * 8)
    x, st = gmres(lambda v: d * v, rng.standard_normal(32),
                  SolveParams(tol=1e-10))
    assert st.iterations <= 4


def test_gmres_restart_and_householder():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((40, 40)) + 8 * np.eye(40)
    b = rng.standard_normal(40)
    xr, str_ = gmres(lambda v: A @ v, b, SolveParams(tol=1e-10, max_iter=400),
                     restart=11)
    assert str_.converged
    xh, sth = gmres(lambda v: A @ v, b, SolveParams(tol=1e-10, max_iter=200),
                    orthogonalization="householder")
    assert sth.converged
    assert np.linalg.norm(xh - np.linalg.solve(A, b)) <= 1e-7


def test_solver_final_residual_is_true_residual():
    rng = np.random.default_rng(6)
    A = rand_spd(rng, 40)
    b = rng.standard_normal(40)
    for solver in (cg, minres, gmres):
        x, st = solver(lambda v: A @ v, b, SolveParams(tol=1e-9, max_iter=400))
        true_rel = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
        assert abs(st.final_residual - true_rel) <= 1e-12


def test_arnoldi_identity_breakdown():
    q0 = np.zeros(5)
    q0[0] = 1.0
    f = arnoldi(lambda v: v, q0, 3)
    assert f.breakdown_index == 0
    assert f.hessenberg.shape == (1, 1)
    assert np.allclose(f.hessenberg, [[1.0]])


def test_arnoldi_converges_to_spectrum():
    d = np.array([1.0, 2.0, 3.0])
    q0 = np.ones(3) / np.sqrt(3)
    f = arnoldi(lambda v: d * v, q0, 3)
    ritz = np.sort(np.linalg.eigvals(f.square_part).real)
    assert np.allclose(ritz, [1.0, 2.0, 3.0], atol=1e-10)


def test_arnoldi_relation_and_orthogonality():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((32, 32))
    q0 = rng.standard_normal(32)
    q0 /= np.linalg.norm(q0)
    f = arnoldi(lambda v: A @ v, q0, 12)
    t = f.hessenberg.shape[1]
    resid = np.abs(A @ f.q_basis[:, :t] - f.q_basis @ f.hessenberg).max()
    assert resid <= 1e-8 * np.linalg.norm(A, 2)
    assert np.abs(f.q_basis.T @ f.q_basis - np.eye(t + 1)).max() <= 1e-6


def test_householder_reflector_unitary():
    from linops.krylov import _householder_vec, _reflect

    rng = np.random.default_rng(8)
    w = rng.standard_normal(10)
    u = _householder_vec(w, 2)
    R = np.eye(10) - 2 * np.outer(u, u)
    assert np.abs(R @ R.T - np.eye(10)).max() <= 1e-14


def test_householder_matches_mgs_on_well_conditioned():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((16, 16))
    v0 = rng.standard_normal(16)
    f1 = arnoldi(lambda v: A @ v, v0 / np.linalg.norm(v0), 10)
    f2 = householder_arnoldi(lambda v: A @ v, v0, 10)
    assert np.abs(f1.hessenberg - f2.hessenberg).max() <= 1e-8
    q = f2.q_basis
    assert np.abs(q.T @ q - np.eye(q.shape[1])).max() <= 1e-12


def test_householder_robust_on_ill_conditioned():
    # Hilbert-like operator with breakdown tolerance disabled: Gram-Schmidt
    # loses orthogonality, reflectors do not.
    n = 100
    H = 1.0 / (np.arange(n)[:, None] + np.arange(n)[None, :] + 1.0)
    v0 = np.ones(n)
    from linops.krylov import _arnoldi_impl, _householder_arnoldi_impl

    t = 30
    mgs, _ = _arnoldi_impl(lambda v: H @ v, v0 / np.linalg.norm(v0), t, 0.0)
    hh, _ = _householder_arnoldi_impl(lambda v: H @ v, v0, t)
    q_mgs = mgs.q_basis
    q_hh = hh.q_basis
    err_mgs = np.abs(q_mgs.T @ q_mgs - np.eye(q_mgs.shape[1])).max()
    err_hh = np.abs(q_hh.T @ q_hh - np.eye(q_hh.shape[1])).max()
    assert err_hh <= 1e-12
    assert err_mgs > 1e-8


def test_lanczos():
    d = np.arange(1.0, 9.0)
    q0 = np.ones(8) / np.sqrt(8.0)
    f = lanczos(lambda v: d * v, q0, 8, reorth="full")
    ritz = np.linalg.eigvalsh(np.real(f.square_part))
    assert np.abs(ritz - d).max() <= 1e-10

    f = lanczos(lambda v: v, q0, 4)
    assert f.breakdown_index == 0
    assert np.allclose(np.linalg.eigvalsh(np.real(f.square_part)), [1.0])

    rng = np.random.default_rng(10)
    s = rng.standard_normal((64, 64))
    A = s + s.T
    q0 = rng.standard_normal(64)
    q0 /= np.linalg.norm(q0)
    f = lanczos(lambda v: A @ v, q0, 64, reorth="full")
    Q = f.q_basis
    t = f.hessenberg.shape[1]
    H = Q[:, :t].T @ A @ Q[:, :t]
    off = np.abs(H - np.diag(np.diagonal(H))
                 - np.diag(np.diagonal(H, 1), 1) - np.diag(np.diagonal(H, -1), -1))
    assert off.max() <= 1e-10


def test_power_iteration():
    lam, v, st = power_iteration(lambda x: np.array([3.0, 1.0]) * x, 2,
                                 SolveParams(tol=1e-7, max_iter=300))
    assert abs(lam - 3.0) <= 1e-6
    assert abs(abs(v[0]) - 1.0) <= 1e-3
    rng = np.random.default_rng(11)
    A = rand_spd(rng, 32)
    lam, v, st = power_iteration(lambda x: A @ x, 32,
                                 SolveParams(tol=1e-9, max_iter=5000))
    assert abs(lam - np.linalg.eigvalsh(A)[-1]) <= 1e-5 * lam
    lam, v, st = power_iteration(lambda x: x, 8, SolveParams(tol=1e-7))
    assert st.iterations == 1 and abs(lam - 1.0) < 1e-12


def test_slq_logdet():
    rng = np.random.default_rng(12)
    assert abs(slq_logdet(lambda v: v, 10, 5, 8, rng)) <= 1e-12
    val = slq_logdet(lambda v: np.e * v, 2, 4, 4, np.random.default_rng(0),
                     distribution="rademacher")
    assert abs(val - 2.0) <= 1e-12
    with pytest.raises(DomainError):
        slq_logdet(lambda v: -v, 4, 2, 4, np.random.default_rng(1))


def test_slq_logdet_paper_parameters():
    rng = np.random.default_rng(13)
    n = 500
    d = np.exp(rng.uniform(np.log(0.5), np.log(5.0), n))
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (q * d) @ q.T
    truth = float(np.sum(np.log(d)))
    est = slq_logdet(lambda v: A @ v, n, 25, 30, np.random.default_rng(42))
    assert abs(est - truth) / abs(truth) <= 0.02


def test_randomized_svd():
    rng = np.random.default_rng(14)
    L = rng.standard_normal((20, 3))
    R = rng.standard_normal((3, 15))
    U, s, V = randomized_svd(Dense(L @ R), 3, oversample=5,
                             rng=np.random.default_rng(0))
    assert np.linalg.norm(L @ R - U @ np.diag(s) @ V.T) <= 1e-8

    U, s, V = randomized_svd(Dense(np.zeros((6, 5)) + 1e-300), 2, oversample=2,
                             rng=np.random.default_rng(0))
    assert np.all(s <= 1e-250)

    A = rng.standard_normal((64, 32))
    U, s, V = randomized_svd(Dense(A), 10, oversample=5,
                             rng=np.random.default_rng(1), n_power_iter=50)
    ref = np.linalg.svd(A, compute_uv=False)[:10]
    assert np.abs(s - ref).max() / ref[0] <= 1e-6
    assert np.abs(U.T @ U - np.eye(10)).max() <= 1e-10
    assert np.abs(V.T @ V - np.eye(10)).max() <= 1e-10


def test_seed_determinism():
    rng_spec = dict(tol=1e-9, max_iter=200, rng_seed=5)
    A = rand_spd(np.random.default_rng(15), 24)
    b = np.random.default_rng(16).standard_normal(24)
    r1 = cg(lambda v: A @ v, b, SolveParams(**rng_spec))[1]
    r2 = cg(lambda v: A @ v, b, SolveParams(**rng_spec))[1]
    assert r1.residual_history == r2.residual_history
    p1 = power_iteration(lambda v: A @ v, 24, SolveParams(**rng_spec))
    p2 = power_iteration(lambda v: A @ v, 24, SolveParams(**rng_spec))
    assert p1[0] == p2[0]
    assert p1[2].residual_history == p2[2].residual_history
