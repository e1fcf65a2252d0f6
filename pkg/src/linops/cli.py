"""Benchmark and demo command line: structured solves, eigenvalues,
log-determinants, estimator and solver benchmarks, PDE demos and gradient
checks, all emitting plot-ready CSV.

Exit codes: 0 success, 1 check failure, 2 usage or parse error,
3 non-convergence.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import config
from .compose import Kronecker
from .core import PSD, SELF_ADJOINT, annotate, dense, flatten_params, mvm
from .dispatch import eig, factored_inverse, logdet, solve
from .errors import LinOpsError
from .grad import (
    fd_check,
    objective_from_tree,
    vjp_diag,
    vjp_eigvals,
    vjp_logdet,
    vjp_solve,
)
from .krylov import SolveParams, arnoldi, power_iteration
from .mmio import read_matrix_market
from .operators import Circulant, Dense, Diagonal, SparseCSR
from .problems import (
    bipoisson_operator,
    kron_ladder,
    minimal_surface_problem,
    random_psd_terms,
    rff_normal_equations,
    schrodinger_1d,
)
from .stochastic import (
    ProbeConfig,
    SvrgParams,
    doubly_stochastic_diag,
    hutchinson_diag,
    svrg_solve,
)


def _emit(rows, header, out):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else str(v) for v in row))
    text = "\n".join(lines) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)


def _timed(fn, reps, no_timing):
    """Median wall time over ``reps`` runs, dropping the first; returns
    (last result, wall_ms or None)."""
    if no_timing:
        return fn(), None
    times = []
    result = None
    for _ in range(max(2, reps)):
        t0 = time.perf_counter()
        result = fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return result, float(np.median(times[1:]))


def _fmt(x, digits=12):
    return f"{x:.{digits}g}"


def _load_operator(args):
    op = read_matrix_market(args.matrix)
    if getattr(args, "assume_psd", False):
        op = annotate(op, PSD)
    return op


def _rhs_for(op, args):
    if args.rhs == "random":
        rng = np.random.default_rng(args.seed)
        return rng.standard_normal(op.rows)
    return np.loadtxt(args.rhs).reshape(-1)


def cmd_solve(args):
    op = _load_operator(args)
    b = _rhs_for(op, args)
    params = SolveParams(
        tol=args.tol,
        max_iter=args.max_iter,
        rng_seed=args.seed,
        algorithm_override=None if args.algo == "auto" else args.algo,
    )
    res, wall = _timed(lambda: solve(op, b, params), args.reps, args.no_timing)
    st = res.stats
    _emit(
        [[st.algorithm, op.rows, st.iterations, st.mvm_count,
          _fmt(st.final_residual), None if wall is None else _fmt(wall, 6)]],
        ["algorithm", "n", "iterations", "mvm_count", "residual", "wall_ms"],
        args.out,
    )
    return 0 if st.converged else 3


def _forced_krylov_eig(op, which_fn, k, which, params):
    """Ritz pairs from an explicitly chosen Arnoldi/Lanczos factorization."""
    rng = np.random.default_rng(params.rng_seed)
    q0 = rng.standard_normal(op.rows)
    q0 /= np.linalg.norm(q0)
    fact = which_fn(lambda v: mvm(op, v), q0, min(params.max_iter, op.rows))
    hsq = fact.square_part
    vals, y = np.linalg.eig(hsq)
    kk = hsq.shape[0]
    ritz = fact.q_basis[:, :kk] @ y
    order = np.argsort(vals.real)
    order = order[:k] if which == "smallest" else order[::-1][:k]
    return vals[order], ritz[:, order]


def cmd_eig(args):
    op = _load_operator(args)
    params = SolveParams(tol=args.tol, max_iter=args.max_iter, rng_seed=args.seed)
    converged = True
    if args.algo == "power":
        lam, v, st = power_iteration(lambda x: mvm(op, x), op.rows, params)
        resid = np.linalg.norm(mvm(op, v) - lam * v)
        _emit([[0, _fmt(np.real(lam)), _fmt(resid)]],
              ["index", "eigval", "residual"], args.out)
        return 0 if st.converged else 3
    if args.algo == "auto":
        res = eig(op, k=args.k, which=args.which, params=params)
        vals = res.eigvals
        vecs = dense(res.eigvecs)
        converged = res.stats.converged
    else:
        from .krylov import lanczos as _lanczos

        fn = _lanczos if args.algo == "lanczos" else lambda a, q, t: arnoldi(a, q, t)
        vals, vecs = _forced_krylov_eig(op, fn, args.k, args.which, params)
    rows = []
    worst = 0.0
    for i in range(len(vals)):
        lam = vals[i]
        v = vecs[:, i]
        nv = np.linalg.norm(v)
        v = v / nv if nv else v
        resid = np.linalg.norm(mvm(op, np.real(v)) - np.real(lam) * np.real(v))
        worst = max(worst, resid / max(abs(lam), 1e-300))
        rows.append([i, _fmt(np.real(lam)), _fmt(np.real(resid))])
    _emit(rows, ["index", "eigval", "residual"], args.out)
    if args.algo != "auto":
        converged = worst <= max(args.tol * 100, 1e-6)
    return 0 if converged else 3


def cmd_logdet(args):
    op = _load_operator(args)
    mode = "estimate" if args.mode == "slq" else "exact"
    probes = ProbeConfig(n_probes=args.probes, rng_seed=args.seed)
    value, wall = _timed(
        lambda: logdet(op, mode=mode, probes=probes,
                       lanczos_iters=args.lanczos_iters),
        args.reps, args.no_timing,
    )
    _emit(
        [[args.mode, op.rows, _fmt(value), args.probes, args.lanczos_iters,
          None if wall is None else _fmt(wall, 6)]],
        ["mode", "n", "value", "probes", "lanczos_iters", "wall_ms"],
        args.out,
    )
    return 0


def cmd_diag_bench(args):
    mats = random_psd_terms(args.m, args.n, seed=args.seed)
    true_diag = np.diagonal(sum(mats)) / args.m
    rows = []
    budgets = [int(tok) for tok in args.budgets.split(",")]
    for budget in budgets:
        n_probes = max(1, budget // args.m)
        base_terms = lambda v: sum(mat @ v for mat in mats) / args.m
        est_base, _ = hutchinson_diag(
            base_terms, args.n,
            ProbeConfig(n_probes=n_probes, rng_seed=args.seed),
        )
        terms = [(lambda mat: (lambda v: mat @ v))(mat) for mat in mats]
        est_sum, _ = doubly_stochastic_diag(
            terms, args.n, ProbeConfig(n_probes=n_probes, rng_seed=args.seed)
        )
        scale = np.linalg.norm(true_diag)
        rows.append(["psdsum-v1", "base", budget,
                     _fmt(np.linalg.norm(est_base - true_diag) / scale)])
        rows.append(["psdsum-v1", "sum", budget,
                     _fmt(np.linalg.norm(est_sum - true_diag) / scale)])
    _emit(rows, ["generator", "estimator", "budget", "rel_error"], args.out)
    return 0


def cmd_svrg_bench(args):
    terms, b, amat = rff_normal_equations(
        args.m, args.n, ridge=args.ridge, seed=args.seed
    )
    rows = []
    from .krylov import cg

    x, st = cg(lambda v: amat @ v, b,
               SolveParams(tol=args.tol, max_iter=args.max_passes))
    for i, r in enumerate(st.residual_history, start=1):
        rows.append(["rff-v1", "cg", i, _fmt(r)])
    params = SvrgParams(epochs=max(1, args.max_passes // 2), batch=1,
                        tol=args.tol, rng_seed=args.seed,
                        step_size=args.step_size)
    w, sst = svrg_solve(terms, b, params)
    passes = 0
    for r in sst.residual_history:
        rows.append(["rff-v1", "svrg", passes, _fmt(r)])
        passes += 2  # anchor pass + inner pass per epoch
    _emit(rows, ["generator", "method", "passes", "residual"], args.out)
    cg_passes = st.iterations
    svrg_passes = sst.extra["element_mvms"] / args.m
    sys.stderr.write(
        f"cg passes to tol: {cg_passes} (converged={st.converged}); "
        f"svrg passes: {svrg_passes:.1f} (converged={sst.converged})\n"
    )
    return 0 if (st.converged and sst.converged) else 3


def cmd_kron_bench(args):
    rows = []
    for size in (int(tok) for tok in args.sizes.split(",")):
        op, b = kron_ladder(size, seed=args.seed)
        n = size**3
        params = SolveParams(tol=args.tol, max_iter=args.max_iter,
                             rng_seed=args.seed)

        def run_dispatch():
            return solve(op, b, params)

        res, wall = _timed(run_dispatch, args.reps, args.no_timing)
        rows.append(["kronladder-v1", n, "dispatch",
                     None if wall is None else _fmt(wall, 6),
                     res.stats.mvm_count,
                     res.stats.extra["mvm_by_kind"].get("kron", 0)])

        params_it = SolveParams(tol=args.tol, max_iter=args.max_iter,
                                rng_seed=args.seed, algorithm_override="gmres")
        res2, wall2 = _timed(lambda: solve(op, b, params_it), args.reps,
                             args.no_timing)
        rows.append(["kronladder-v1", n, "iterative",
                     None if wall2 is None else _fmt(wall2, 6),
                     res2.stats.mvm_count,
                     res2.stats.extra["mvm_by_kind"].get("kron", 0)])

        if n <= config.get_dense_cap():
            params_d = SolveParams(tol=args.tol, rng_seed=args.seed,
                                   algorithm_override="dense")
            res3, wall3 = _timed(lambda: solve(op, b, params_d), args.reps,
                                 args.no_timing)
            rows.append(["kronladder-v1", n, "dense",
                         None if wall3 is None else _fmt(wall3, 6),
                         res3.stats.mvm_count, 0])
    _emit(rows, ["generator", "n", "method", "wall_ms", "mvm_count",
                 "kron_mvms"], args.out)
    return 0


def _pde_bipoisson(args):
    n = args.grid
    op = bipoisson_operator(n)
    rng = np.random.default_rng(args.seed)
    rho = np.zeros(n * n) if args.source == "zero" else rng.standard_normal(n * n)
    params = SolveParams(tol=args.tol, max_iter=args.max_iter, rng_seed=args.seed)
    res = solve(op, rho, params)
    split_mvms = res.stats.mvm_count
    params_mono = SolveParams(tol=args.tol, max_iter=args.max_iter,
                              rng_seed=args.seed, algorithm_override="cg")
    res_mono = solve(op, rho, params_mono)
    rows = [
        ["bipoisson-v1", "split", res.stats.iterations, split_mvms,
         _fmt(res.stats.final_residual), _fmt(np.linalg.norm(res.x))],
        ["bipoisson-v1", "monolithic", res_mono.stats.iterations,
         res_mono.stats.mvm_count, _fmt(res_mono.stats.final_residual),
         _fmt(np.linalg.norm(res_mono.x))],
    ]
    _emit(rows, ["generator", "path", "iterations", "mvm_count", "residual",
                 "solution_norm"], args.out)
    return 0 if res.stats.converged and res_mono.stats.converged else 3


def _pde_minsurf(args):
    n = args.grid
    residual, jacobian_at, z = minimal_surface_problem(n, boundary=args.boundary)
    params = SolveParams(tol=min(args.tol * 1e-2, 1e-10),
                         max_iter=args.max_iter, rng_seed=args.seed)
    rows = []
    converged = False
    for step in range(1, args.max_newton + 1):
        r = residual(z)
        nr = float(np.linalg.norm(r))
        rows.append(["minsurf-v1", step, _fmt(nr), _fmt(np.linalg.norm(z))])
        if nr <= args.tol:
            converged = True
            break
        jac = jacobian_at(z)
        dz = solve(jac, r, params)
        z = z - dz.x
    _emit(rows, ["generator", "newton_step", "residual", "solution_norm"],
          args.out)
    return 0 if converged else 3


def _pde_schrodinger(args):
    n = args.grid
    h = schrodinger_1d(n)
    inv = factored_inverse(h)
    rng = np.random.default_rng(args.seed)
    v0 = rng.standard_normal(n)
    v0 /= np.linalg.norm(v0)
    fact = arnoldi(lambda v: mvm(inv, v), v0, min(args.arnoldi_iters, n - 1))
    mu, y = np.linalg.eig(fact.square_part)
    lam = 1.0 / mu
    order = np.argsort(lam.real)
    k = min(args.k, len(order))
    rows = []
    worst = 0.0
    kk = fact.square_part.shape[0]
    for i in range(k):
        idx = order[i]
        vec = fact.q_basis[:, :kk] @ y[:, idx]
        vec = np.real(vec)
        vec /= np.linalg.norm(vec)
        lv = lam[idx]
        resid = np.linalg.norm(mvm(h, vec) - lv.real * vec)
        worst = max(worst, resid / max(abs(lv), 1e-300))
        rows.append(["schrodinger1d-v1", i, _fmt(lv.real), _fmt(lv.imag),
                     _fmt(resid)])
    _emit(rows, ["generator", "index", "eigval_real", "eigval_imag",
                 "residual"], args.out)
    return 0 if worst <= max(args.tol, 1e-5) else 3


def cmd_pde(args):
    if args.problem == "bipoisson":
        return _pde_bipoisson(args)
    if args.problem == "minsurf":
        return _pde_minsurf(args)
    return _pde_schrodinger(args)


def _gradcheck_operator(kind, n, rng):
    if kind == "diagonal":
        return Diagonal(rng.uniform(1.0, 2.0, n))
    if kind == "dense":
        g = rng.standard_normal((n, n))
        return annotate(Dense(g @ g.T + n * np.eye(n)), PSD)
    if kind == "kron":
        return Kronecker(Diagonal(rng.uniform(1.0, 2.0, n)),
                         Diagonal(rng.uniform(1.0, 2.0, n)))
    if kind == "circulant":
        a = np.zeros(n)
        a[0] = n
        a[1:] = rng.uniform(-0.3, 0.3, n - 1)
        return Circulant(a)
    if kind == "csr":
        import scipy.sparse as sp

        m = sp.random(n, n, density=0.4, random_state=int(rng.integers(1 << 31)))
        m = m + m.T + n * sp.identity(n)
        return SparseCSR.from_scipy(m.tocsr())
    raise ValueError(f"unknown gradcheck operator: {kind}")


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    op = _gradcheck_operator(args.op, args.size, rng)
    n = op.rows
    params = SolveParams(tol=1e-12, max_iter=5000, rng_seed=args.seed)
    theta0 = flatten_params(op).values
    corrupt = 2.0 if args.corrupt else 1.0
    checks = []

    b = rng.standard_normal(n)
    w = rng.standard_normal(n)
    dtheta, _ = vjp_solve(op, b, w, params)
    dtheta = type(dtheta)(values=dtheta.values * corrupt, layout=dtheta.layout)
    obj = objective_from_tree(
        op, lambda o: float(w @ np.linalg.solve(dense(o), b))
    )
    checks.append(("solve", fd_check(obj, theta0, dtheta, tol=1e-5)))

    sym = annotate(op, SELF_ADJOINT) if SELF_ADJOINT not in op.annotations else op
    if args.op in ("diagonal", "dense", "kron"):
        wv = rng.standard_normal(n)
        cot = vjp_eigvals(sym, wv, params)
        cot = type(cot)(values=cot.values * corrupt, layout=cot.layout)
        obj = objective_from_tree(
            sym, lambda o: float(wv @ np.sort(np.linalg.eigvals(dense(o)).real))
        )
        checks.append(("eigvals", fd_check(obj, theta0, cot, tol=1e-5)))

        dcot = vjp_logdet(sym, params)
        dcot = type(dcot)(values=dcot.values * corrupt, layout=dcot.layout)
        obj = objective_from_tree(
            sym, lambda o: float(np.linalg.slogdet(dense(o))[1])
        )
        checks.append(("logdet", fd_check(obj, theta0, dcot, tol=1e-5)))

    wd = rng.standard_normal(n)
    gcot = vjp_diag(op, wd)
    gcot = type(gcot)(values=gcot.values * corrupt, layout=gcot.layout)
    obj = objective_from_tree(op, lambda o: float(wd @ np.diagonal(dense(o))))
    checks.append(("diag", fd_check(obj, theta0, gcot, tol=1e-6)))

    ok = True
    for name, rep in checks:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{args.op} {name}: max relative deviation {rep.max_rel_dev:.3e} "
              f"(tol {rep.tol:g}) {status}")
        ok = ok and rep.passed
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(
        prog="linops",
        description="Structured linear algebra benchmarks and demos (CSV output)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, timing=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="-")
        if timing:
            sp.add_argument("--reps", type=int, default=3)
            sp.add_argument("--no-timing", action="store_true")

    sp = sub.add_parser("solve", help="solve A x = b from a MatrixMarket file")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--rhs", default="random")
    sp.add_argument("--algo", choices=["auto", "cg", "gmres", "minres", "dense"],
                    default="auto")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=10000)
    sp.add_argument("--assume-psd", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("eig", help="eigenvalues from a MatrixMarket file")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--which", choices=["smallest", "largest"], default="largest")
    sp.add_argument("--algo", choices=["auto", "lanczos", "arnoldi", "power"],
                    default="auto")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--max-iter", type=int, default=2000)
    sp.add_argument("--assume-psd", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_eig)

    sp = sub.add_parser("logdet", help="log-determinant, exact or SLQ")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--mode", choices=["exact", "slq"], default="exact")
    sp.add_argument("--probes", type=int, default=25)
    sp.add_argument("--lanczos-iters", type=int, default=30)
    sp.add_argument("--assume-psd", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_logdet)

    sp = sub.add_parser("diag-bench",
                        help="base vs doubly stochastic diagonal estimators")
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--m", type=int, default=100)
    sp.add_argument("--budgets", default="100,200,400,800")
    common(sp, timing=False)
    sp.set_defaults(fn=cmd_diag_bench)

    sp = sub.add_parser("svrg-bench", help="SVRG vs CG residual curves")
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--m", type=int, default=1000)
    sp.add_argument("--ridge", type=float, default=1e-3)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-passes", type=int, default=400)
    sp.add_argument("--step-size", type=float, default=None)
    common(sp, timing=False)
    sp.set_defaults(fn=cmd_svrg_bench)

    sp = sub.add_parser("kron-bench",
                        help="Kronecker solve: dispatch vs iterative vs dense")
    sp.add_argument("--sizes", default="8,12,16,24")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=10000)
    common(sp)
    sp.set_defaults(fn=cmd_kron_bench)

    sp = sub.add_parser("pde", help="PDE demos")
    sp.add_argument("problem", choices=["bipoisson", "minsurf", "schrodinger1d"])
    sp.add_argument("--grid", type=int, default=32)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=50000)
    sp.add_argument("--max-newton", type=int, default=25)
    sp.add_argument("--boundary", choices=["planar", "sine"], default="sine")
    sp.add_argument("--source", choices=["zero", "random"], default="random")
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--arnoldi-iters", type=int, default=150)
    common(sp, timing=False)
    sp.set_defaults(fn=cmd_pde)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--op", choices=["diagonal", "dense", "kron", "circulant",
                                     "csr"], required=True)
    sp.add_argument("--size", type=int, default=8)
    sp.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    common(sp, timing=False)
    sp.set_defaults(fn=cmd_gradcheck)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LinOpsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
